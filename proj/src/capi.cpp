#include "mlr.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mlr/admm.hpp"
#include "mlr/config.hpp"
#include "mlr/memoserver.hpp"
#include "mlr/offload.hpp"
#include "mlr/phantom.hpp"
#include "mlr/scalerun.hpp"
#include "mlr/volume_io.hpp"

struct mlr_config {
  mlr::RunConfig rc;
};
struct mlr_array {
  mlr::Array3 a;
};
struct mlr_result {
  mlr_array u;  // wrapped so result_volume can hand out an array view
  mlr::ReconReport report;
};
struct mlr_server {
  std::unique_ptr<mlr::MemoServer> srv;
};

namespace {

thread_local std::string t_error;

int code_for(const std::exception& e) {
  if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr) return MLR_ERR_CONFIG;
  return MLR_ERR_RUNTIME;
}

int fail(const std::exception& e) {
  t_error = e.what();
  return code_for(e);
}

char* dup_text(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

/// Encoder per the run config; an untrained cnn gets seeded initial weights.
std::shared_ptr<mlr::Encoder> build_encoder(const mlr::RunConfig& rc) {
  using mlr::Encoder;
  if (rc.encoder.variant == mlr::EncoderConfig::Variant::cnn && !rc.encoder_weights.empty())
    return std::make_shared<Encoder>(Encoder::load_weights(rc.encoder_weights, rc.encoder));
  auto enc = std::make_shared<Encoder>(rc.encoder);
  if (rc.encoder.variant == mlr::EncoderConfig::Variant::cnn)
    enc->set_cnn_weights(mlr::init_cnn(rc.encoder));
  return enc;
}

/// Engine assembly for one reconstruction. Distributed mode resolves the
/// endpoint from the config, then MLR_MEMO_ADDR; with neither set it degrades
/// to the in-process store.
mlr::OperatorEngine build_engine(const mlr::RunConfig& rc, const mlr::Geometry& geom) {
  mlr::EngineConfig ecfg = rc.engine;
  ecfg.memo_enabled = rc.admm.memoization != mlr::MemoMode::off;
  if (!ecfg.memo_enabled) return mlr::OperatorEngine(geom, ecfg);

  mlr::MemoClientConfig mcfg = rc.memo;
  mcfg.endpoint.clear();
  if (rc.admm.memoization == mlr::MemoMode::distributed) {
    mcfg.endpoint = rc.memo.endpoint;
    if (mcfg.endpoint.empty()) {
      const char* env = std::getenv("MLR_MEMO_ADDR");
      if (env != nullptr) mcfg.endpoint = env;
    }
  }
  auto client = std::make_shared<mlr::MemoClient>(mcfg);
  return mlr::OperatorEngine(geom, ecfg, build_encoder(rc), std::move(client));
}

std::string score_text(const mlr::PlanScore& s) {
  std::ostringstream o;
  switch (s.kind) {
    case mlr::PlanScore::Kind::undefined: o << "undefined"; break;
    case mlr::PlanScore::Kind::infinite: o << "inf"; break;
    case mlr::PlanScore::Kind::finite: o << s.mt; break;
  }
  return o.str();
}

std::string format_plan(const mlr::PlanSearchResult& res, const mlr::PhaseTrace& trace,
                        bool as_csv) {
  std::ostringstream o;
  const mlr::SimResult& sim = res.sim;
  o << "# MT = " << score_text(res.score) << " (M = " << res.score.m
    << ", T = " << res.score.t << ")\n";
  o << "# peak resident " << sim.peak_bytes << " of " << sim.baseline_peak_bytes
    << " bytes, exposed delay " << sim.exposed_ms << " ms per iteration of "
    << trace.iter_ms() << " ms\n";
  if (as_csv) o << "var,from_phase,to_phase,offload_start_ms,prefetch_start_ms,mpd_ms,pd_ms\n";
  if (res.plan.actions.empty() && !as_csv) o << "no beneficial offload found\n";
  for (const mlr::PlanAction& act : res.plan.actions) {
    const mlr::TraceVar& var = trace.vars[static_cast<std::size_t>(act.var)];
    const std::vector<mlr::Gap> gaps = mlr::var_gaps(trace, act.var);
    const mlr::Gap& gap = gaps[static_cast<std::size_t>(act.gap)];
    auto [pd, mpd] = mlr::derive_pd_mpd(trace, act.var, gap.from_phase, act.prefetch_start);
    const std::string from = trace.phases[static_cast<std::size_t>(gap.from_phase)].name;
    const std::string to = trace.phases[static_cast<std::size_t>(gap.to_phase)].name;
    if (as_csv) {
      o << var.name << ',' << from << ',' << to << ',' << act.offload_start << ','
        << act.prefetch_start << ',' << mpd << ',' << pd << '\n';
    } else {
      o << var.name << ": offload at " << act.offload_start << " ms after " << from
        << ", prefetch at " << act.prefetch_start << " ms for " << to << " (mpd " << mpd
        << " ms, pd " << pd << " ms)\n";
    }
  }
  return o.str();
}

}  // namespace

extern "C" {

const char* mlr_last_error(void) { return t_error.c_str(); }

void mlr_free(char* text) { std::free(text); }

mlr_config* mlr_config_new(void) {
  try {
    return new mlr_config{};
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

mlr_config* mlr_config_from_file(const char* path) {
  try {
    if (path == nullptr) throw std::invalid_argument("config path is null");
    return new mlr_config{mlr::RunConfig::from_file(path)};
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

int mlr_config_set(mlr_config* cfg, const char* key, const char* value) {
  try {
    if (cfg == nullptr || key == nullptr || value == nullptr)
      throw std::invalid_argument("null argument");
    cfg->rc.set(key, value);
    return MLR_OK;
  } catch (const std::exception& e) {
    return fail(e);
  }
}

char* mlr_config_dump(const mlr_config* cfg) {
  try {
    if (cfg == nullptr) throw std::invalid_argument("null config");
    return dup_text(cfg->rc.str());
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

void mlr_config_free(mlr_config* cfg) { delete cfg; }

mlr_array* mlr_array_load(const char* path) {
  try {
    if (path == nullptr) throw std::invalid_argument("array path is null");
    return new mlr_array{mlr::load_array(path)};
  } catch (const std::invalid_argument& e) {
    fail(e);
    return nullptr;
  } catch (const std::exception& e) {
    t_error = e.what();
    return nullptr;
  }
}

int mlr_array_save(const mlr_array* a, const char* path) {
  try {
    if (a == nullptr || path == nullptr) throw std::invalid_argument("null argument");
    mlr::save_array(path, a->a);
    return MLR_OK;
  } catch (const std::invalid_argument& e) {
    return fail(e);
  } catch (const std::exception& e) {
    t_error = e.what();
    return MLR_ERR_IO;
  }
}

int mlr_array_shape(const mlr_array* a, int64_t shape[3]) {
  try {
    if (a == nullptr || shape == nullptr) throw std::invalid_argument("null argument");
    const mlr::Shape3 s = a->a.shape();
    shape[0] = s.d0;
    shape[1] = s.d1;
    shape[2] = s.d2;
    return MLR_OK;
  } catch (const std::exception& e) {
    return fail(e);
  }
}

const double* mlr_array_data(const mlr_array* a) {
  if (a == nullptr) {
    t_error = "null array";
    return nullptr;
  }
  return reinterpret_cast<const double*>(a->a.data());
}

void mlr_array_free(mlr_array* a) { delete a; }

mlr_array* mlr_make_phantom(const char* kind, int64_t d0, int64_t d1, int64_t d2,
                            uint64_t seed) {
  try {
    if (kind == nullptr) throw std::invalid_argument("phantom kind is null");
    return new mlr_array{
        mlr::make_phantom({d0, d1, d2}, mlr::phantom_kind_from(kind), seed)};
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

mlr_array* mlr_project(const mlr_config* cfg, const mlr_array* volume) {
  try {
    if (cfg == nullptr || volume == nullptr) throw std::invalid_argument("null argument");
    cfg->rc.validate();
    const mlr::Geometry geom = cfg->rc.make_geometry();
    if (!(volume->a.shape() == geom.volume_shape()))
      throw std::invalid_argument("volume shape " + volume->a.shape().str() +
                                  " does not match the configured geometry " +
                                  geom.volume_shape().str());
    return new mlr_array{mlr::forward_L(volume->a, geom, cfg->rc.engine.path)};
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

mlr_result* mlr_reconstruct(const mlr_config* cfg, const mlr_array* data,
                            const mlr_array* reference) {
  try {
    if (cfg == nullptr || data == nullptr) throw std::invalid_argument("null argument");
    cfg->rc.validate();
    const mlr::Geometry geom = cfg->rc.make_geometry();
    if (!(data->a.shape() == geom.projection_shape()))
      throw std::invalid_argument("data shape " + data->a.shape().str() +
                                  " does not match the configured geometry " +
                                  geom.projection_shape().str());
    if (reference != nullptr && !(reference->a.shape() == geom.volume_shape()))
      throw std::invalid_argument("reference shape " + reference->a.shape().str() +
                                  " does not match the configured geometry " +
                                  geom.volume_shape().str());
    mlr::OperatorEngine eng = build_engine(cfg->rc, geom);
    mlr::ReconResult res = mlr::reconstruct(data->a, geom, cfg->rc.admm, eng,
                                            reference != nullptr ? &reference->a : nullptr);
    return new mlr_result{mlr_array{std::move(res.u)}, std::move(res.report)};
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

const mlr_array* mlr_result_volume(const mlr_result* r) {
  if (r == nullptr) {
    t_error = "null result";
    return nullptr;
  }
  return &r->u;
}

char* mlr_result_csv(const mlr_result* r) {
  try {
    if (r == nullptr) throw std::invalid_argument("null result");
    return dup_text(r->report.csv());
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

int mlr_result_aborted(const mlr_result* r) {
  return (r != nullptr && r->report.aborted) ? 1 : 0;
}

char* mlr_result_abort_reason(const mlr_result* r) {
  try {
    if (r == nullptr) throw std::invalid_argument("null result");
    return dup_text(r->report.abort_reason);
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

void mlr_result_free(mlr_result* r) { delete r; }

mlr_server* mlr_server_start(const char* host, int port, int nlist, int nprobe,
                             int train_size) {
  try {
    mlr::ServerConfig scfg;
    if (host != nullptr && host[0] != '\0') scfg.host = host;
    if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");
    scfg.port = static_cast<std::uint16_t>(port);
    if (nlist > 0) scfg.ivf.nlist = nlist;
    if (nprobe > 0) scfg.ivf.nprobe = nprobe;
    if (train_size > 0) scfg.ivf.train_size = train_size;
    return new mlr_server{std::make_unique<mlr::MemoServer>(scfg)};
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

int mlr_server_port(const mlr_server* s) {
  if (s == nullptr || s->srv == nullptr) {
    t_error = "null server";
    return -1;
  }
  return s->srv->port();
}

void mlr_server_stop(mlr_server* s) {
  if (s == nullptr) return;
  s->srv->stop();
  delete s;
}

char* mlr_plan_offload(const char* trace_text, double bandwidth, const char* format) {
  try {
    if (trace_text == nullptr) throw std::invalid_argument("trace text is null");
    std::string fmt = format != nullptr ? format : "plan";
    if (fmt != "plan" && fmt != "csv")
      throw std::invalid_argument("format must be plan or csv, got '" + fmt + "'");
    mlr::PhaseTrace trace = mlr::PhaseTrace::parse(trace_text);
    if (bandwidth > 0.0) trace.bandwidth = bandwidth;
    const mlr::PlanSearchResult res = mlr::plan_search(trace);
    return dup_text(format_plan(res, trace, fmt == "csv"));
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

char* mlr_lru_baseline(const char* trace_text, double bandwidth, uint64_t budget_bytes) {
  try {
    if (trace_text == nullptr) throw std::invalid_argument("trace text is null");
    mlr::PhaseTrace trace = mlr::PhaseTrace::parse(trace_text);
    if (bandwidth > 0.0) trace.bandwidth = bandwidth;
    const mlr::LruResult res = mlr::lru_baseline(trace, static_cast<double>(budget_bytes));
    std::ostringstream o;
    if (!res.feasible) {
      o << "infeasible: " << res.reason << '\n';
    } else {
      o << "MT = " << score_text(res.score) << " (M = " << res.score.m
        << ", T = " << res.score.t << ")\n"
        << "peak resident " << res.peak_bytes << " bytes under budget " << budget_bytes
        << ", exposed delay " << res.exposed_ms << " ms per iteration\n";
    }
    return dup_text(o.str());
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

char* mlr_train_encoder(const mlr_config* cfg, const char* phantom_kind, uint64_t seed,
                        const char* weights_out) {
  try {
    if (cfg == nullptr || phantom_kind == nullptr || weights_out == nullptr)
      throw std::invalid_argument("null argument");
    cfg->rc.validate();
    const mlr::RunConfig& rc = cfg->rc;
    const mlr::Geometry geom = rc.make_geometry();

    const mlr::Volume u_true =
        mlr::make_phantom(geom.volume_shape(), mlr::phantom_kind_from(phantom_kind), seed);
    const mlr::ProjectionSet d = mlr::forward_L(u_true, geom, rc.engine.path);

    // Reference run with memoization off; record the first volume slab seen
    // per (location, outer iteration).
    mlr::EngineConfig ecfg = rc.engine;
    ecfg.memo_enabled = false;
    mlr::OperatorEngine eng(geom, ecfg);
    std::map<std::pair<std::int64_t, int>, mlr::Array3> recorded;
    eng.set_chunk_observer([&recorded](mlr::OpId op, const mlr::Chunk& c) {
      if (op != mlr::OpId::fu1d) return;
      recorded.emplace(std::make_pair(c.location.index, c.iteration), c.data);
    });
    mlr::AdmmConfig acfg = rc.admm;
    acfg.memoization = mlr::MemoMode::off;
    (void)mlr::reconstruct(d, geom, acfg, eng);

    std::vector<std::pair<mlr::Array3, mlr::Array3>> pairs;
    for (const auto& [key, chunk] : recorded) {
      auto next = recorded.find({key.first, key.second + 1});
      if (next != recorded.end()) pairs.emplace_back(chunk, next->second);
    }
    if (pairs.empty())
      throw std::invalid_argument(
          "need at least two outer iterations to form training pairs; raise n_outer");

    mlr::EncoderConfig encfg = rc.encoder;
    encfg.variant = mlr::EncoderConfig::Variant::cnn;
    const mlr::TrainResult res = mlr::train_contrastive(pairs, encfg);

    mlr::Encoder enc(encfg);
    enc.set_cnn_weights(res.weights);
    enc.save_weights(weights_out);

    std::ostringstream o;
    o << "epoch,train_loss,holdout_loss\n";
    for (const mlr::TrainEpoch& ep : res.history)
      o << ep.epoch << ',' << ep.train_loss << ',' << ep.holdout_loss << '\n';
    return dup_text(o.str());
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

char* mlr_bench(const mlr_config* cfg) {
  try {
    if (cfg == nullptr) throw std::invalid_argument("null config");
    cfg->rc.validate();
    const mlr::RunConfig& rc = cfg->rc;
    const mlr::Geometry geom = rc.make_geometry();
    const mlr::Volume u = mlr::make_phantom(geom.volume_shape(), mlr::PhantomKind::blocks, 42);

    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
      return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    mlr::EngineConfig off_cfg = rc.engine;
    off_cfg.memo_enabled = false;
    mlr::OperatorEngine plain(geom, off_cfg);
    auto t0 = clock::now();
    (void)plain.fu1d(u);
    const double ms_compute = ms_since(t0);

    mlr::EngineConfig on_cfg = rc.engine;
    on_cfg.memo_enabled = true;
    mlr::MemoClientConfig mcfg = rc.memo;
    mcfg.endpoint.clear();  // in-process service keeps the benchmark self-contained
    auto store = std::make_shared<mlr::MemoStore>();
    auto encoder = build_encoder(rc);

    auto c_miss = std::make_shared<mlr::MemoClient>(mcfg, store);
    mlr::OperatorEngine e_miss(geom, on_cfg, encoder, c_miss);
    t0 = clock::now();
    (void)e_miss.fu1d(u);
    const double ms_miss = ms_since(t0);
    e_miss.flush_inserts();  // publish the stored results for the hit cases
    const mlr::MemoCounterSnapshot s_miss = c_miss->counters();

    auto c_hit = std::make_shared<mlr::MemoClient>(mcfg, store);
    mlr::OperatorEngine e_hit(geom, on_cfg, encoder, c_hit);
    t0 = clock::now();
    (void)e_hit.fu1d(u);
    const double ms_remote = ms_since(t0);
    const mlr::MemoCounterSnapshot s_remote = c_hit->counters();

    t0 = clock::now();
    (void)e_hit.fu1d(u);
    const double ms_cache = ms_since(t0);
    const mlr::MemoCounterSnapshot s_cache = c_hit->counters();

    std::ostringstream o;
    o << "case,lookups,misses,remote_hits,cache_hits,ms\n";
    o << "compute,0,0,0,0," << ms_compute << '\n';
    o << "miss," << s_miss.lookups << ',' << s_miss.misses << ',' << s_miss.remote_hits << ','
      << s_miss.cache_hits << ',' << ms_miss << '\n';
    o << "service_hit," << s_remote.lookups << ',' << s_remote.misses << ','
      << s_remote.remote_hits << ',' << s_remote.cache_hits << ',' << ms_remote << '\n';
    o << "cache_hit," << (s_cache.lookups - s_remote.lookups) << ','
      << (s_cache.misses - s_remote.misses) << ',' << (s_cache.remote_hits - s_remote.remote_hits)
      << ',' << (s_cache.cache_hits - s_remote.cache_hits) << ',' << ms_cache << '\n';
    return dup_text(o.str());
  } catch (const std::exception& e) {
    fail(e);
    return nullptr;
  }
}

}  // extern "C"
