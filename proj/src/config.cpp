#include "mlr/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mlr {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  }
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

int to_int(const std::string& key, const std::string& v) {
  return static_cast<int>(to_i64(key, v));
}

}  // namespace

std::pair<std::string, std::string> split_key_value(const std::string& line) {
  std::size_t eq = line.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("expected key=value, got '" + line + "'");
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

void RunConfig::set(const std::string& key, const std::string& value) {
  // geometry
  if (key == "n1") n1 = to_i64(key, value);
  else if (key == "n0") n0 = to_i64(key, value);
  else if (key == "n2") n2 = to_i64(key, value);
  else if (key == "n_theta") n_theta = to_i64(key, value);
  else if (key == "h") h = to_i64(key, value);
  else if (key == "w") w = to_i64(key, value);
  else if (key == "phi") phi = to_f64(key, value);
  // solver
  else if (key == "alpha") admm.alpha = to_f64(key, value);
  else if (key == "rho0") admm.rho0 = to_f64(key, value);
  else if (key == "n_inner") admm.n_inner = to_int(key, value);
  else if (key == "n_outer") admm.n_outer = to_int(key, value);
  else if (key == "tau") {
    admm.tau = static_cast<float>(to_f64(key, value));
    memo.tau = admm.tau;
  } else if (key == "pipeline") {
    if (value == "baseline") admm.pipeline = Pipeline::baseline;
    else if (value == "optimized") admm.pipeline = Pipeline::optimized;
    else throw std::invalid_argument("pipeline: expected baseline|optimized, got '" + value + "'");
  } else if (key == "memoization") {
    if (value == "off") admm.memoization = MemoMode::off;
    else if (value == "local") admm.memoization = MemoMode::local;
    else if (value == "distributed") admm.memoization = MemoMode::distributed;
    else throw std::invalid_argument("memoization: expected off|local|distributed, got '" + value + "'");
  } else if (key == "freeze_rho") admm.freeze_rho = to_bool(key, value);
  // engine
  else if (key == "workers") engine.workers = to_int(key, value);
  else if (key == "chunk_extent") engine.chunk_extent = to_i64(key, value);
  else if (key == "nudft_path") {
    if (value == "direct") engine.path = NudftPath::direct;
    else if (value == "gridding") engine.path = NudftPath::gridding;
    else throw std::invalid_argument("nudft_path: expected direct|gridding, got '" + value + "'");
  } else if (key == "flush_after_apply") engine.flush_after_apply = to_bool(key, value);
  // encoder
  else if (key == "key_dim") encoder.key_dim = to_int(key, value);
  else if (key == "encoder_variant") {
    if (value == "projection") encoder.variant = EncoderConfig::Variant::projection;
    else if (value == "cnn") encoder.variant = EncoderConfig::Variant::cnn;
    else throw std::invalid_argument("encoder_variant: expected projection|cnn, got '" + value + "'");
  } else if (key == "encoder_seed") encoder.seed = static_cast<std::uint64_t>(to_i64(key, value));
  else if (key == "encoder_epochs") encoder.epochs = to_int(key, value);
  else if (key == "encoder_lr") encoder.learning_rate = to_f64(key, value);
  else if (key == "encoder_pairs") encoder.pair_samples = to_int(key, value);
  else if (key == "encoder_weights") encoder_weights = value;
  // memo client
  else if (key == "memo_endpoint") memo.endpoint = value;
  else if (key == "nprobe") memo.nprobe = to_int(key, value);
  else if (key == "memo_timeout_ms") memo.timeout_ms = to_int(key, value);
  else if (key == "insert_queue_cap") memo.insert_queue_cap = static_cast<std::size_t>(to_i64(key, value));
  else if (key == "coalesce_bytes") memo.coalesce_bytes = static_cast<std::size_t>(to_i64(key, value));
  else if (key == "global_cache") memo.global_cache = to_bool(key, value);
  else throw std::invalid_argument("unknown config key: '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      auto [key, value] = split_key_value(line);
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

Geometry RunConfig::make_geometry() const {
  return Geometry::make(n1, n0, n2, n_theta, h, w, phi);
}

void RunConfig::validate() const {
  if (n1 < 1 || n0 < 1 || n2 < 1 || n_theta < 1 || h < 1 || w < 1)
    throw std::invalid_argument("geometry extents must be positive");
  if (h > n0) throw std::invalid_argument("h must not exceed n0");
  admm.validate();
  encoder.validate();
  if (engine.workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (engine.chunk_extent < 1) throw std::invalid_argument("chunk_extent must be >= 1");
  if (memo.nprobe < 1) throw std::invalid_argument("nprobe must be >= 1");
}

std::string RunConfig::str() const {
  std::ostringstream o;
  o << "n1 = " << n1 << "\nn0 = " << n0 << "\nn2 = " << n2
    << "\nn_theta = " << n_theta << "\nh = " << h << "\nw = " << w
    << "\nphi = " << phi
    << "\nalpha = " << admm.alpha << "\nrho0 = " << admm.rho0
    << "\nn_inner = " << admm.n_inner << "\nn_outer = " << admm.n_outer
    << "\ntau = " << admm.tau
    << "\npipeline = " << (admm.pipeline == Pipeline::baseline ? "baseline" : "optimized")
    << "\nmemoization = "
    << (admm.memoization == MemoMode::off ? "off"
                                          : admm.memoization == MemoMode::local ? "local" : "distributed")
    << "\nfreeze_rho = " << (admm.freeze_rho ? "true" : "false")
    << "\nworkers = " << engine.workers << "\nchunk_extent = " << engine.chunk_extent
    << "\nnudft_path = " << (engine.path == NudftPath::direct ? "direct" : "gridding")
    << "\nflush_after_apply = " << (engine.flush_after_apply ? "true" : "false")
    << "\nkey_dim = " << encoder.key_dim
    << "\nencoder_variant = "
    << (encoder.variant == EncoderConfig::Variant::projection ? "projection" : "cnn")
    << "\nencoder_seed = " << encoder.seed
    << "\nencoder_epochs = " << encoder.epochs << "\nencoder_lr = " << encoder.learning_rate
    << "\nencoder_pairs = " << encoder.pair_samples;
  if (!encoder_weights.empty()) o << "\nencoder_weights = " << encoder_weights;
  if (!memo.endpoint.empty()) o << "\nmemo_endpoint = " << memo.endpoint;
  o << "\nnprobe = " << memo.nprobe << "\nmemo_timeout_ms = " << memo.timeout_ms
    << "\ninsert_queue_cap = " << memo.insert_queue_cap
    << "\ncoalesce_bytes = " << memo.coalesce_bytes
    << "\nglobal_cache = " << (memo.global_cache ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace mlr
