// Command-line front end over the C API (mlr.h): reconstruction, phantom and
// data generation, the memoization service, offload planning, encoder
// training and the memoization micro-benchmark.
//
// Exit codes: 0 success, 1 runtime/solver failure, 2 bad configuration.

#include <csignal>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlr.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct ConfigDel {
  void operator()(mlr_config* c) const { mlr_config_free(c); }
};
struct ArrayDel {
  void operator()(mlr_array* a) const { mlr_array_free(a); }
};
struct ResultDel {
  void operator()(mlr_result* r) const { mlr_result_free(r); }
};
struct TextDel {
  void operator()(char* t) const { mlr_free(t); }
};
using ConfigPtr = std::unique_ptr<mlr_config, ConfigDel>;
using ArrayPtr = std::unique_ptr<mlr_array, ArrayDel>;
using ResultPtr = std::unique_ptr<mlr_result, ResultDel>;
using TextPtr = std::unique_ptr<char, TextDel>;

int report_api_error(const char* context, int code = MLR_ERR_RUNTIME) {
  std::cerr << "error: " << context << ": " << mlr_last_error() << '\n';
  return code == MLR_ERR_CONFIG || code == MLR_ERR_IO ? kExitConfig : kExitRuntime;
}

ConfigPtr load_config(const std::string& path, const std::vector<std::string>& sets,
                      int& exit_code) {
  ConfigPtr cfg(path.empty() ? mlr_config_new() : mlr_config_from_file(path.c_str()));
  if (!cfg) {
    exit_code = report_api_error("loading config", MLR_ERR_CONFIG);
    return nullptr;
  }
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      exit_code = kExitConfig;
      return nullptr;
    }
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (mlr_config_set(cfg.get(), key.c_str(), value.c_str()) != MLR_OK) {
      exit_code = report_api_error("applying --set", MLR_ERR_CONFIG);
      return nullptr;
    }
  }
  exit_code = 0;
  return cfg;
}

bool write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return false;
  out << text;
  return static_cast<bool>(out);
}

int emit_text(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return 0;
  }
  if (!write_text_file(out_path, text)) {
    std::cerr << "error: cannot write " << out_path << '\n';
    return kExitRuntime;
  }
  return 0;
}

std::string read_text_file(const std::string& path, bool& ok) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ok = false;
    return {};
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  ok = true;
  return buf.str();
}

std::string gnuplot_script(const std::string& csv_path, bool with_accuracy) {
  std::ostringstream o;
  o << "set datafile separator ','\n"
    << "set xlabel 'outer iteration'\n"
    << "set ylabel 'objective'\n"
    << "set logscale y\n";
  if (with_accuracy)
    o << "set y2label 'accuracy'\n"
      << "set y2range [0:1]\n"
      << "set y2tics\n";
  o << "plot '" << csv_path << "' every ::1 using 1:2 with lines title 'loss'";
  if (with_accuracy)
    o << ", \\\n     '" << csv_path
      << "' every ::1 using 1:4 with lines axes x1y2 title 'accuracy'";
  o << '\n';
  return o.str();
}

volatile std::sig_atomic_t g_stop_requested = 0;
void on_signal(int) { g_stop_requested = 1; }

int cmd_reconstruct(const std::string& cfg_path, const std::vector<std::string>& sets,
                    const std::string& data_path, const std::string& ref_path,
                    const std::string& out_path, const std::string& report_path,
                    const std::string& plot_path) {
  int code = 0;
  ConfigPtr cfg = load_config(cfg_path, sets, code);
  if (!cfg) return code;

  ArrayPtr data(mlr_array_load(data_path.c_str()));
  if (!data) return report_api_error("loading data", MLR_ERR_IO);
  ArrayPtr ref;
  if (!ref_path.empty()) {
    ref.reset(mlr_array_load(ref_path.c_str()));
    if (!ref) return report_api_error("loading reference", MLR_ERR_IO);
  }

  ResultPtr res(mlr_reconstruct(cfg.get(), data.get(), ref.get()));
  if (!res) return report_api_error("reconstruction", MLR_ERR_CONFIG);

  if (mlr_array_save(mlr_result_volume(res.get()), out_path.c_str()) != MLR_OK)
    return report_api_error("writing volume", MLR_ERR_IO);
  TextPtr csv(mlr_result_csv(res.get()));
  if (!csv) return report_api_error("rendering report");
  if (!report_path.empty() && !write_text_file(report_path, csv.get())) {
    std::cerr << "error: cannot write " << report_path << '\n';
    return kExitRuntime;
  }
  if (!plot_path.empty() && !report_path.empty() &&
      !write_text_file(plot_path, gnuplot_script(report_path, ref != nullptr))) {
    std::cerr << "error: cannot write " << plot_path << '\n';
    return kExitRuntime;
  }

  std::cout << "volume: " << out_path << '\n';
  if (!report_path.empty()) std::cout << "report: " << report_path << '\n';
  if (!plot_path.empty() && !report_path.empty()) std::cout << "plot: " << plot_path << '\n';
  if (mlr_result_aborted(res.get()) != 0) {
    TextPtr reason(mlr_result_abort_reason(res.get()));
    std::cerr << "solver aborted: " << (reason ? reason.get() : "unknown") << '\n';
    return kExitRuntime;
  }
  return 0;
}

int cmd_phantom(const std::string& kind, const std::vector<std::int64_t>& shape,
                std::uint64_t seed, const std::string& out_path,
                const std::string& project_path, const std::string& cfg_path,
                const std::vector<std::string>& sets) {
  ArrayPtr vol(mlr_make_phantom(kind.c_str(), shape[0], shape[1], shape[2], seed));
  if (!vol) return report_api_error("phantom", MLR_ERR_CONFIG);
  if (mlr_array_save(vol.get(), out_path.c_str()) != MLR_OK)
    return report_api_error("writing phantom", MLR_ERR_IO);
  std::cout << "phantom: " << out_path << '\n';

  if (!project_path.empty()) {
    int code = 0;
    ConfigPtr cfg = load_config(cfg_path, sets, code);
    if (!cfg) return code;
    ArrayPtr data(mlr_project(cfg.get(), vol.get()));
    if (!data) return report_api_error("projecting phantom", MLR_ERR_CONFIG);
    if (mlr_array_save(data.get(), project_path.c_str()) != MLR_OK)
      return report_api_error("writing projections", MLR_ERR_IO);
    std::cout << "projections: " << project_path << '\n';
  }
  return 0;
}

int cmd_serve_memo(const std::string& addr, int nlist, int nprobe, int train_size) {
  const std::size_t colon = addr.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "error: --addr expects host:port, got '" << addr << "'\n";
    return kExitConfig;
  }
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    std::cerr << "error: bad port in '" << addr << "'\n";
    return kExitConfig;
  }

  mlr_server* srv = mlr_server_start(host.c_str(), port, nlist, nprobe, train_size);
  if (srv == nullptr) return report_api_error("starting server", MLR_ERR_IO);
  std::cout << "memo service listening on " << host << ':' << mlr_server_port(srv)
            << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (g_stop_requested == 0) {
    timespec ts{0, 200 * 1000 * 1000};
    nanosleep(&ts, nullptr);
  }
  std::cout << "stopping" << std::endl;
  mlr_server_stop(srv);
  return 0;
}

int cmd_plan_offload(const std::string& trace_path, double bandwidth,
                     const std::string& format, const std::string& out_path,
                     double lru_budget) {
  bool ok = false;
  const std::string trace = read_text_file(trace_path, ok);
  if (!ok) {
    std::cerr << "error: cannot read trace " << trace_path << '\n';
    return kExitConfig;
  }
  TextPtr plan(mlr_plan_offload(trace.c_str(), bandwidth, format.c_str()));
  if (!plan) return report_api_error("planning", MLR_ERR_CONFIG);
  std::string text = plan.get();
  if (lru_budget > 0) {
    TextPtr lru(mlr_lru_baseline(trace.c_str(), bandwidth,
                                 static_cast<std::uint64_t>(lru_budget)));
    if (!lru) return report_api_error("lru baseline", MLR_ERR_CONFIG);
    text += "# lru baseline\n";
    text += lru.get();
  }
  return emit_text(out_path, text);
}

int cmd_train_encoder(const std::string& cfg_path, const std::vector<std::string>& sets,
                      const std::string& kind, std::uint64_t seed,
                      const std::string& weights_out, const std::string& history_path) {
  int code = 0;
  ConfigPtr cfg = load_config(cfg_path, sets, code);
  if (!cfg) return code;
  TextPtr history(mlr_train_encoder(cfg.get(), kind.c_str(), seed, weights_out.c_str()));
  if (!history) return report_api_error("training", MLR_ERR_CONFIG);
  std::cout << "weights: " << weights_out << '\n';
  return emit_text(history_path, history.get());
}

int cmd_bench(const std::string& cfg_path, const std::vector<std::string>& sets,
              const std::string& out_path) {
  int code = 0;
  ConfigPtr cfg = load_config(cfg_path, sets, code);
  if (!cfg) return code;
  TextPtr csv(mlr_bench(cfg.get()));
  if (!csv) return report_api_error("bench", MLR_ERR_CONFIG);
  return emit_text(out_path, csv.get());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memoized laminography reconstruction"};
  app.require_subcommand(1);

  std::string cfg_path, data_path, ref_path, out_path, report_path, plot_path;
  std::vector<std::string> sets;

  CLI::App* rec = app.add_subcommand("reconstruct", "run the solver on a projection stack");
  rec->add_option("--config", cfg_path, "key=value config file");
  rec->add_option("--set", sets, "override one config key (key=value)");
  rec->add_option("--data", data_path, "projection stack (LVOL)")->required();
  rec->add_option("--reference", ref_path, "ground-truth volume for accuracy reporting");
  rec->add_option("--out", out_path, "output volume path")->default_val("recon.lvol");
  rec->add_option("--report", report_path, "per-iteration csv path")->default_val("report.csv");
  rec->add_option("--plot", plot_path, "gnuplot script path (needs --report)")
      ->default_val("report.gp");

  std::string ph_kind = "blocks", ph_out, ph_project;
  std::vector<std::int64_t> ph_shape{32, 32, 32};
  std::uint64_t ph_seed = 1;
  CLI::App* ph = app.add_subcommand("phantom", "generate a synthetic volume");
  ph->add_option("--kind", ph_kind, "blocks | shepp3d-like | random-smooth");
  ph->add_option("--shape", ph_shape, "volume extents d0 d1 d2")->expected(3);
  ph->add_option("--seed", ph_seed, "rng seed");
  ph->add_option("--out", ph_out, "output volume path")->required();
  ph->add_option("--project", ph_project,
                 "also write the projection stack of the phantom to this path");
  ph->add_option("--config", cfg_path, "config file for the projection geometry");
  ph->add_option("--set", sets, "override one config key (key=value)");

  std::string sm_addr = "127.0.0.1:7077";
  int sm_nlist = 64, sm_nprobe = 8, sm_train = 1024;
  CLI::App* sm = app.add_subcommand("serve-memo", "run the memoization service");
  sm->add_option("--addr", sm_addr, "listen address host:port (port 0 = ephemeral)");
  sm->add_option("--nlist", sm_nlist, "ivf cluster count");
  sm->add_option("--nprobe", sm_nprobe, "clusters scanned per query");
  sm->add_option("--train-size", sm_train, "keys buffered before clustering");

  std::string po_trace, po_format = "plan", po_out;
  double po_bandwidth = 0.0, po_lru_budget = 0.0;
  CLI::App* po = app.add_subcommand("plan-offload", "derive an offload/prefetch plan");
  po->add_option("--trace", po_trace, "phase/var/access trace file")->required();
  po->add_option("--bandwidth", po_bandwidth, "transfer bandwidth, bytes per ms");
  po->add_option("--format", po_format, "plan | csv")
      ->check(CLI::IsMember({"plan", "csv"}));
  po->add_option("--out", po_out, "write output here instead of stdout");
  po->add_option("--lru-budget", po_lru_budget,
                 "also score a demand-fetch LRU baseline under this memory budget (bytes)");

  std::string te_kind = "blocks", te_weights, te_history;
  std::uint64_t te_seed = 1;
  CLI::App* te = app.add_subcommand("train-encoder", "train the cnn key encoder");
  te->add_option("--config", cfg_path, "key=value config file");
  te->add_option("--set", sets, "override one config key (key=value)");
  te->add_option("--phantom", te_kind, "phantom kind for the reference run");
  te->add_option("--seed", te_seed, "phantom seed");
  te->add_option("--weights-out", te_weights, "output weights path")->required();
  te->add_option("--history", te_history, "write the loss history csv here");

  std::string be_out;
  CLI::App* be = app.add_subcommand("bench", "time miss / service-hit / cache-hit lookups");
  be->add_option("--config", cfg_path, "key=value config file");
  be->add_option("--set", sets, "override one config key (key=value)");
  be->add_option("--out", be_out, "write csv here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (rec->parsed())
    return cmd_reconstruct(cfg_path, sets, data_path, ref_path, out_path, report_path,
                           plot_path);
  if (ph->parsed())
    return cmd_phantom(ph_kind, ph_shape, ph_seed, ph_out, ph_project, cfg_path, sets);
  if (sm->parsed()) return cmd_serve_memo(sm_addr, sm_nlist, sm_nprobe, sm_train);
  if (po->parsed())
    return cmd_plan_offload(po_trace, po_bandwidth, po_format, po_out, po_lru_budget);
  if (te->parsed())
    return cmd_train_encoder(cfg_path, sets, te_kind, te_seed, te_weights, te_history);
  if (be->parsed()) return cmd_bench(cfg_path, sets, be_out);
  return kExitConfig;
}
