#include "mlr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mlr/binio.hpp"

namespace mlr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t shape_seed(std::uint64_t seed, Shape3 s) {
  std::uint64_t m = splitmix64(seed ^ static_cast<std::uint64_t>(s.d0));
  m = splitmix64(m ^ static_cast<std::uint64_t>(s.d1));
  return splitmix64(m ^ static_cast<std::uint64_t>(s.d2));
}

/// Deterministic standard normals: explicit Box-Muller over mt19937_64 so
/// the stream does not depend on the standard library's distribution
/// implementation.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (have_) {
      have_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(ang);
    have_ = true;
    return r * std::cos(ang);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_ = false;
};

std::array<std::int64_t, 3> key_of(Shape3 s) { return {s.d0, s.d1, s.d2}; }

/// Keys from different (location, op) slots share one similarity index, and
/// several operators here emit value payloads of identical byte size, so a
/// content-only key would let one operator's stored result answer another
/// operator's query whenever the inputs merely look alike. Mixing each key
/// with a signed permutation seeded by its slot fixes that structurally: a
/// signed permutation is orthogonal, so cosine similarity between keys of
/// the SAME slot is unchanged, while comparisons across slots see two
/// unrelated permutations and concentrate near zero, far below any useful
/// acceptance threshold.
void slot_mix(std::vector<float>& v, std::uint64_t seed, std::int64_t location, OpId op) {
  std::uint64_t m = splitmix64(seed ^ 0xA5C1E5D1B7F3C9ull);
  m = splitmix64(m ^ static_cast<std::uint64_t>(location));
  m = splitmix64(m ^ static_cast<std::uint64_t>(static_cast<int>(op)));
  std::mt19937_64 rng(m);
  const std::size_t d = v.size();
  // Explicit Fisher-Yates so the layout does not depend on the standard
  // library's shuffle implementation.
  std::vector<std::uint32_t> perm(d);
  for (std::size_t i = 0; i < d; ++i) perm[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = d; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const float s = (rng() & 1ull) ? 1.0f : -1.0f;
    out[i] = s * v[perm[i]];
  }
  v = std::move(out);
}

/// RMS-normalized (re, im) planes used as the 2-channel CNN input; a chunk
/// slab (e, a, b) is treated as an image of height e*a and width b.
struct CnnInput {
  std::vector<float> data;  // [2][h][w]
  int h = 0, w = 0;
};

CnnInput cnn_input(const Array3& chunk) {
  CnnInput in;
  in.h = static_cast<int>(chunk.shape().d0 * chunk.shape().d1);
  in.w = static_cast<int>(chunk.shape().d2);
  const std::int64_t n = chunk.size();
  double sq = 0.0;
  for (const cplx& v : chunk.flat()) sq += std::norm(v);
  const double rms = std::sqrt(sq / static_cast<double>(n > 0 ? n : 1));
  const double scale = rms > 0.0 ? 1.0 / rms : 0.0;
  in.data.resize(static_cast<std::size_t>(2 * n));
  const cplx* p = chunk.data();
  for (std::int64_t i = 0; i < n; ++i) {
    in.data[static_cast<std::size_t>(i)] = static_cast<float>(p[i].real() * scale);
    in.data[static_cast<std::size_t>(n + i)] = static_cast<float>(p[i].imag() * scale);
  }
  return in;
}

int conv_out(int n) { return (n - 1) / 2 + 1; }  // stride 2, pad ksize/2

/// Per-channel feature maps plus the pre-activation sign mask the backward
/// pass needs.
struct FeatureMap {
  std::vector<float> v;
  int c = 0, h = 0, w = 0;
  float& at(int ch, int y, int x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
  float at(int ch, int y, int x) const {
    return v[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
};

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in) {
  FeatureMap out;
  out.c = layer.out_ch;
  out.h = conv_out(in.h);
  out.w = conv_out(in.w);
  out.v.assign(static_cast<std::size_t>(out.c * out.h * out.w), 0.0f);
  const int pad = layer.ksize / 2;
  for (int o = 0; o < out.c; ++o)
    for (int y2 = 0; y2 < out.h; ++y2)
      for (int x2 = 0; x2 < out.w; ++x2) {
        double acc = layer.b[static_cast<std::size_t>(o)];
        for (int c = 0; c < in.c; ++c)
          for (int ky = 0; ky < layer.ksize; ++ky) {
            const int iy = 2 * y2 + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < layer.ksize; ++kx) {
              const int ix = 2 * x2 + kx - pad;
              if (ix < 0 || ix >= in.w) continue;
              acc += static_cast<double>(
                         layer.w[static_cast<std::size_t>(
                             ((o * in.c + c) * layer.ksize + ky) * layer.ksize + kx)]) *
                     in.at(c, iy, ix);
            }
          }
        out.at(o, y2, x2) = static_cast<float>(acc);
      }
  return out;
}

void relu_inplace(FeatureMap& f) {
  for (float& v : f.v) v = v > 0.0f ? v : 0.0f;
}

struct CnnActivations {
  FeatureMap input, pre1, act1, pre2, act2;
  std::vector<double> gap;
  std::vector<float> z;
};

CnnActivations cnn_forward(const CnnWeights& w, const Array3& chunk) {
  CnnActivations a;
  const CnnInput in = cnn_input(chunk);
  a.input.c = 2;
  a.input.h = in.h;
  a.input.w = in.w;
  a.input.v = in.data;

  a.pre1 = conv_forward(w.c1, a.input);
  a.act1 = a.pre1;
  relu_inplace(a.act1);
  a.pre2 = conv_forward(w.c2, a.act1);
  a.act2 = a.pre2;
  relu_inplace(a.act2);

  a.gap.assign(static_cast<std::size_t>(a.act2.c), 0.0);
  const double inv_hw = 1.0 / static_cast<double>(a.act2.h * a.act2.w);
  for (int c = 0; c < a.act2.c; ++c) {
    double s = 0.0;
    for (int y = 0; y < a.act2.h; ++y)
      for (int x = 0; x < a.act2.w; ++x) s += a.act2.at(c, y, x);
    a.gap[static_cast<std::size_t>(c)] = s * inv_hw;
  }

  a.z.assign(static_cast<std::size_t>(w.key_dim), 0.0f);
  for (int r = 0; r < w.key_dim; ++r) {
    double acc = w.fc_b[static_cast<std::size_t>(r)];
    for (int c = 0; c < a.act2.c; ++c)
      acc += static_cast<double>(w.fc_w[static_cast<std::size_t>(r * a.act2.c + c)]) *
             a.gap[static_cast<std::size_t>(c)];
    a.z[static_cast<std::size_t>(r)] = static_cast<float>(acc);
  }
  return a;
}

/// Gradient buffers mirroring CnnWeights.
struct CnnGrads {
  std::vector<double> c1w, c1b, c2w, c2b, fcw, fcb;

  static CnnGrads zeros(const CnnWeights& w) {
    CnnGrads g;
    g.c1w.assign(w.c1.w.size(), 0.0);
    g.c1b.assign(w.c1.b.size(), 0.0);
    g.c2w.assign(w.c2.w.size(), 0.0);
    g.c2b.assign(w.c2.b.size(), 0.0);
    g.fcw.assign(w.fc_w.size(), 0.0);
    g.fcb.assign(w.fc_b.size(), 0.0);
    return g;
  }
};

FeatureMap conv_backward(const ConvLayer& layer, const FeatureMap& in, const FeatureMap& dout,
                         std::vector<double>& dw, std::vector<double>& db, bool want_dinput) {
  FeatureMap din;
  din.c = in.c;
  din.h = in.h;
  din.w = in.w;
  din.v.assign(in.v.size(), 0.0f);
  const int pad = layer.ksize / 2;
  for (int o = 0; o < dout.c; ++o)
    for (int y2 = 0; y2 < dout.h; ++y2)
      for (int x2 = 0; x2 < dout.w; ++x2) {
        const double g = dout.at(o, y2, x2);
        if (g == 0.0) continue;
        db[static_cast<std::size_t>(o)] += g;
        for (int c = 0; c < in.c; ++c)
          for (int ky = 0; ky < layer.ksize; ++ky) {
            const int iy = 2 * y2 + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < layer.ksize; ++kx) {
              const int ix = 2 * x2 + kx - pad;
              if (ix < 0 || ix >= in.w) continue;
              const std::size_t widx = static_cast<std::size_t>(
                  ((o * in.c + c) * layer.ksize + ky) * layer.ksize + kx);
              dw[widx] += g * in.at(c, iy, ix);
              if (want_dinput)
                din.at(c, iy, ix) += static_cast<float>(g * layer.w[widx]);
            }
          }
      }
  return din;
}

/// Accumulates d(loss)/d(weights) for one branch given dz; shared weights
/// receive contributions from both chunks of a pair.
void cnn_backward(const CnnWeights& w, const CnnActivations& a, const std::vector<double>& dz,
                  CnnGrads& g) {
  std::vector<double> dgap(static_cast<std::size_t>(w.c2.out_ch), 0.0);
  for (int r = 0; r < w.key_dim; ++r) {
    const double gz = dz[static_cast<std::size_t>(r)];
    g.fcb[static_cast<std::size_t>(r)] += gz;
    for (int c = 0; c < w.c2.out_ch; ++c) {
      g.fcw[static_cast<std::size_t>(r * w.c2.out_ch + c)] += gz * a.gap[static_cast<std::size_t>(c)];
      dgap[static_cast<std::size_t>(c)] +=
          gz * static_cast<double>(w.fc_w[static_cast<std::size_t>(r * w.c2.out_ch + c)]);
    }
  }

  FeatureMap dact2;
  dact2.c = a.act2.c;
  dact2.h = a.act2.h;
  dact2.w = a.act2.w;
  dact2.v.assign(a.act2.v.size(), 0.0f);
  const double inv_hw = 1.0 / static_cast<double>(a.act2.h * a.act2.w);
  for (int c = 0; c < dact2.c; ++c) {
    const float gv = static_cast<float>(dgap[static_cast<std::size_t>(c)] * inv_hw);
    for (int y = 0; y < dact2.h; ++y)
      for (int x = 0; x < dact2.w; ++x)
        if (a.pre2.at(c, y, x) > 0.0f) dact2.at(c, y, x) = gv;
  }

  FeatureMap dact1 = conv_backward(w.c2, a.act1, dact2, g.c2w, g.c2b, true);
  for (std::size_t i = 0; i < dact1.v.size(); ++i)
    if (a.pre1.v[i] <= 0.0f) dact1.v[i] = 0.0f;
  conv_backward(w.c1, a.input, dact1, g.c1w, g.c1b, false);
}

double chunk_distance_unit_rms(const Array3& a, const Array3& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("pair chunks must share a shape");
  double sa = 0.0, sb = 0.0;
  for (const cplx& v : a.flat()) sa += std::norm(v);
  for (const cplx& v : b.flat()) sb += std::norm(v);
  const double n = static_cast<double>(a.size() > 0 ? a.size() : 1);
  const double ka = sa > 0.0 ? 1.0 / std::sqrt(sa / n) : 0.0;
  const double kb = sb > 0.0 ? 1.0 / std::sqrt(sb / n) : 0.0;
  double acc = 0.0;
  const cplx* pa = a.data();
  const cplx* pb = b.data();
  for (std::int64_t i = 0; i < a.size(); ++i) acc += std::norm(pa[i] * ka - pb[i] * kb);
  return std::sqrt(acc);
}

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::vector<float>& p, const std::vector<double>& g, AdamState& st, int t,
               double lr) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
    const double mh = st.m[i] / c1;
    const double vh = st.v[i] / c2;
    p[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps));
  }
}

}  // namespace

const char* op_name(OpId op) {
  switch (op) {
    case OpId::fu1d: return "fu1d";
    case OpId::fu2d: return "fu2d";
    case OpId::fu1d_adj: return "fu1d_adj";
    case OpId::fu2d_adj: return "fu2d_adj";
    case OpId::f2d: return "f2d";
    case OpId::f2d_adj: return "f2d_adj";
  }
  return "unknown";
}

void EncoderConfig::validate() const {
  if (key_dim < 2) throw std::invalid_argument("encoder: key_dim must be >= 2");
  if (variant == Variant::cnn) {
    if (epochs < 1 || learning_rate <= 0.0 || pair_samples < 2)
      throw std::invalid_argument("encoder: bad cnn training parameters");
  }
}

RealPlanes complex_split(const Array3& chunk) {
  RealPlanes out;
  out.re.resize(static_cast<std::size_t>(chunk.size()));
  out.im.resize(static_cast<std::size_t>(chunk.size()));
  const cplx* p = chunk.data();
  for (std::int64_t i = 0; i < chunk.size(); ++i) {
    out.re[static_cast<std::size_t>(i)] = p[i].real();
    out.im[static_cast<std::size_t>(i)] = p[i].imag();
  }
  return out;
}

Array3 complex_join(const RealPlanes& planes, Shape3 shape, Domain domain) {
  if (planes.re.size() != planes.im.size() ||
      planes.re.size() != static_cast<std::size_t>(shape.count()))
    throw std::invalid_argument("complex_join: plane sizes do not match the shape");
  Array3 out(shape, domain);
  cplx* p = out.data();
  for (std::size_t i = 0; i < planes.re.size(); ++i) p[i] = cplx{planes.re[i], planes.im[i]};
  return out;
}

Encoder::Encoder(EncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.variant == EncoderConfig::Variant::cnn) {
    cnn_ = init_cnn(cfg_);
    cnn_ready_ = true;
  }
}

void Encoder::register_shape(Shape3 shape) {
  if (cfg_.variant != EncoderConfig::Variant::projection) return;
  const auto k = key_of(shape);
  if (projections_.count(k)) return;
  const std::size_t cols = static_cast<std::size_t>(2 * shape.count());
  std::vector<float> mat(static_cast<std::size_t>(cfg_.key_dim) * cols);
  GaussianStream gs(shape_seed(cfg_.seed, shape));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.key_dim));
  for (float& v : mat) v = static_cast<float>(gs.next() * scale);
  projections_.emplace(k, std::move(mat));
}

bool Encoder::has_shape(Shape3 shape) const {
  if (cfg_.variant != EncoderConfig::Variant::projection) return true;
  return projections_.count(key_of(shape)) > 0;
}

MemoKey Encoder::encode(const Array3& chunk, std::int64_t location, OpId op) const {
  MemoKey key;
  key.location = location;
  key.op = op;
  key.values = cfg_.variant == EncoderConfig::Variant::projection ? encode_projection(chunk)
                                                                  : encode_cnn(chunk);
  slot_mix(key.values, cfg_.seed, location, op);
  return key;
}

MemoKey Encoder::encode_content_only(const Array3& chunk, std::int64_t location, OpId op) const {
  MemoKey key;
  key.location = location;
  key.op = op;
  key.values = cfg_.variant == EncoderConfig::Variant::projection ? encode_projection(chunk)
                                                                  : encode_cnn(chunk);
  return key;
}

std::vector<float> Encoder::encode_projection(const Array3& chunk) const {
  const auto it = projections_.find(key_of(chunk.shape()));
  if (it == projections_.end())
    throw std::invalid_argument("encoder: shape " + chunk.shape().str() + " not registered");
  const std::vector<float>& mat = it->second;
  const std::size_t n = static_cast<std::size_t>(chunk.size());
  const std::size_t cols = 2 * n;
  std::vector<float> out(static_cast<std::size_t>(cfg_.key_dim));
  const cplx* p = chunk.data();
  for (int r = 0; r < cfg_.key_dim; ++r) {
    const float* row = mat.data() + static_cast<std::size_t>(r) * cols;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(row[i]) * p[i].real();
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(row[n + i]) * p[i].imag();
    out[static_cast<std::size_t>(r)] = static_cast<float>(acc);
  }
  return out;
}

std::vector<float> Encoder::encode_cnn(const Array3& chunk) const {
  if (!cnn_ready_) throw std::logic_error("encoder: cnn weights not set");
  return cnn_forward(cnn_, chunk).z;
}

void Encoder::set_cnn_weights(CnnWeights w) {
  if (w.key_dim != cfg_.key_dim)
    throw std::invalid_argument("encoder: weights key_dim does not match config");
  cnn_ = std::move(w);
  cnn_ready_ = true;
}

const CnnWeights& Encoder::cnn_weights() const {
  if (!cnn_ready_) throw std::logic_error("encoder: no cnn weights");
  return cnn_;
}

CnnWeights init_cnn(const EncoderConfig& cfg) {
  CnnWeights w;
  w.key_dim = cfg.key_dim;
  w.c1.in_ch = 2;
  w.c1.out_ch = cfg.conv1_filters;
  w.c1.ksize = cfg.conv1_size;
  w.c2.in_ch = cfg.conv1_filters;
  w.c2.out_ch = cfg.conv2_filters;
  w.c2.ksize = cfg.conv2_size;

  GaussianStream gs(splitmix64(cfg.seed ^ 0xC4E1A5ull));
  auto fill = [&gs](std::vector<float>& v, std::size_t n, double fan_in) {
    v.resize(n);
    const double s = std::sqrt(2.0 / fan_in);
    for (float& x : v) x = static_cast<float>(gs.next() * s);
  };
  fill(w.c1.w,
       static_cast<std::size_t>(w.c1.out_ch * w.c1.in_ch * w.c1.ksize * w.c1.ksize),
       static_cast<double>(w.c1.in_ch * w.c1.ksize * w.c1.ksize));
  w.c1.b.assign(static_cast<std::size_t>(w.c1.out_ch), 0.0f);
  fill(w.c2.w,
       static_cast<std::size_t>(w.c2.out_ch * w.c2.in_ch * w.c2.ksize * w.c2.ksize),
       static_cast<double>(w.c2.in_ch * w.c2.ksize * w.c2.ksize));
  w.c2.b.assign(static_cast<std::size_t>(w.c2.out_ch), 0.0f);
  // Small FC init keeps initial keys near zero so early training is stable.
  fill(w.fc_w, static_cast<std::size_t>(w.key_dim * w.c2.out_ch),
       static_cast<double>(w.c2.out_ch) * 25.0);
  w.fc_b.assign(static_cast<std::size_t>(w.key_dim), 0.0f);
  return w;
}

double contrastive_pair_loss(const CnnWeights& w, const EncoderConfig&, const Array3& a,
                             const Array3& b) {
  const CnnActivations aa = cnn_forward(w, a);
  const CnnActivations ab = cnn_forward(w, b);
  double dz = 0.0;
  for (std::size_t i = 0; i < aa.z.size(); ++i) {
    const double d = static_cast<double>(aa.z[i]) - static_cast<double>(ab.z[i]);
    dz += d * d;
  }
  return std::abs(std::sqrt(dz) - chunk_distance_unit_rms(a, b));
}

TrainResult train_contrastive(const std::vector<std::pair<Array3, Array3>>& pairs,
                              const EncoderConfig& cfg) {
  cfg.validate();
  if (pairs.size() < 2) throw std::invalid_argument("train_contrastive: need at least 2 pairs");

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x7261696Eull));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_hold = std::max<std::size_t>(1, pairs.size() / 5);
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> hold(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());

  TrainResult res;
  res.weights = init_cnn(cfg);

  auto mean_loss = [&](const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (std::size_t i : idx)
      s += contrastive_pair_loss(res.weights, cfg, pairs[i].first, pairs[i].second);
    return s / static_cast<double>(idx.size());
  };

  res.history.push_back(TrainEpoch{0, mean_loss(train), mean_loss(hold)});

  AdamState s_c1w(res.weights.c1.w.size()), s_c1b(res.weights.c1.b.size());
  AdamState s_c2w(res.weights.c2.w.size()), s_c2b(res.weights.c2.b.size());
  AdamState s_fcw(res.weights.fc_w.size()), s_fcb(res.weights.fc_b.size());
  int step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t pi : train) {
      const Array3& ca = pairs[pi].first;
      const Array3& cb = pairs[pi].second;
      const CnnActivations aa = cnn_forward(res.weights, ca);
      const CnnActivations ab = cnn_forward(res.weights, cb);

      std::vector<double> dz(aa.z.size());
      double nz = 0.0;
      for (std::size_t i = 0; i < aa.z.size(); ++i) {
        dz[i] = static_cast<double>(aa.z[i]) - static_cast<double>(ab.z[i]);
        nz += dz[i] * dz[i];
      }
      nz = std::sqrt(nz);
      const double label = chunk_distance_unit_rms(ca, cb);
      const double loss = std::abs(nz - label);
      epoch_loss += loss;
      if (!std::isfinite(loss))
        throw std::runtime_error("train_contrastive: non-finite loss at epoch " +
                                 std::to_string(epoch));

      if (nz > 0.0) {
        const double sgn = (nz - label) > 0.0 ? 1.0 : ((nz - label) < 0.0 ? -1.0 : 0.0);
        std::vector<double> dza(dz.size()), dzb(dz.size());
        for (std::size_t i = 0; i < dz.size(); ++i) {
          dza[i] = sgn * dz[i] / nz;
          dzb[i] = -dza[i];
        }
        CnnGrads g = CnnGrads::zeros(res.weights);
        cnn_backward(res.weights, aa, dza, g);
        cnn_backward(res.weights, ab, dzb, g);
        ++step;
        adam_step(res.weights.c1.w, g.c1w, s_c1w, step, cfg.learning_rate);
        adam_step(res.weights.c1.b, g.c1b, s_c1b, step, cfg.learning_rate);
        adam_step(res.weights.c2.w, g.c2w, s_c2w, step, cfg.learning_rate);
        adam_step(res.weights.c2.b, g.c2b, s_c2b, step, cfg.learning_rate);
        adam_step(res.weights.fc_w, g.fcw, s_fcw, step, cfg.learning_rate);
        adam_step(res.weights.fc_b, g.fcb, s_fcb, step, cfg.learning_rate);
      }
    }
    res.history.push_back(
        TrainEpoch{epoch, epoch_loss / static_cast<double>(train.size()), mean_loss(hold)});
  }
  return res;
}

namespace {

constexpr char kWeightsMagic[4] = {'L', 'E', 'N', 'C'};

void write_tensor(ByteWriter& w, const std::vector<float>& v,
                  const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) n *= d;
  if (n != v.size()) throw std::logic_error("write_tensor: dims do not match data");
  w.u8(static_cast<std::uint8_t>(dims.size()));
  for (std::uint64_t d : dims) w.u64(d);
  for (float x : v) w.f32(x);
}

std::pair<std::vector<float>, std::vector<std::uint64_t>> read_tensor(ByteReader& r) {
  const std::uint8_t rank = r.u8();
  std::vector<std::uint64_t> dims(rank);
  std::uint64_t n = 1;
  for (auto& d : dims) {
    d = r.u64();
    if (d == 0 || d > (1ull << 32)) throw std::runtime_error("weights: bad tensor dim");
    n *= d;
  }
  if (n > (1ull << 28)) throw std::runtime_error("weights: tensor too large");
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return {std::move(v), std::move(dims)};
}

}  // namespace

void Encoder::save_weights(const std::string& path) const {
  ByteWriter w;
  w.raw(kWeightsMagic, 4);
  w.u16(1);  // version
  w.u8(static_cast<std::uint8_t>(cfg_.variant));
  w.u32(static_cast<std::uint32_t>(cfg_.key_dim));

  if (cfg_.variant == EncoderConfig::Variant::projection) {
    w.u32(static_cast<std::uint32_t>(projections_.size()));
    for (const auto& [shape, mat] : projections_) {
      write_tensor(w, mat,
                   {static_cast<std::uint64_t>(cfg_.key_dim), 2,
                    static_cast<std::uint64_t>(shape[0]), static_cast<std::uint64_t>(shape[1]),
                    static_cast<std::uint64_t>(shape[2])});
    }
  } else {
    if (!cnn_ready_) throw std::logic_error("save_weights: no cnn weights");
    w.u32(6);
    write_tensor(w, cnn_.c1.w,
                 {static_cast<std::uint64_t>(cnn_.c1.out_ch),
                  static_cast<std::uint64_t>(cnn_.c1.in_ch),
                  static_cast<std::uint64_t>(cnn_.c1.ksize),
                  static_cast<std::uint64_t>(cnn_.c1.ksize)});
    write_tensor(w, cnn_.c1.b, {static_cast<std::uint64_t>(cnn_.c1.out_ch)});
    write_tensor(w, cnn_.c2.w,
                 {static_cast<std::uint64_t>(cnn_.c2.out_ch),
                  static_cast<std::uint64_t>(cnn_.c2.in_ch),
                  static_cast<std::uint64_t>(cnn_.c2.ksize),
                  static_cast<std::uint64_t>(cnn_.c2.ksize)});
    write_tensor(w, cnn_.c2.b, {static_cast<std::uint64_t>(cnn_.c2.out_ch)});
    write_tensor(w, cnn_.fc_w,
                 {static_cast<std::uint64_t>(cnn_.key_dim),
                  static_cast<std::uint64_t>(cnn_.c2.out_ch)});
    write_tensor(w, cnn_.fc_b, {static_cast<std::uint64_t>(cnn_.key_dim)});
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(w.bytes().data()),
          static_cast<std::streamsize>(w.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

Encoder Encoder::load_weights(const std::string& path, EncoderConfig cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kWeightsMagic, 4) != 0)
    throw std::runtime_error("not a weights file (bad magic): " + path);
  const std::uint16_t version = r.u16();
  if (version != 1) throw std::runtime_error("unsupported weights version");
  const auto variant = static_cast<EncoderConfig::Variant>(r.u8());
  const std::uint32_t key_dim = r.u32();

  cfg.variant = variant;
  cfg.key_dim = static_cast<int>(key_dim);
  Encoder enc(cfg);
  const std::uint32_t n_tensors = r.u32();

  if (variant == EncoderConfig::Variant::projection) {
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
      auto [v, dims] = read_tensor(r);
      if (dims.size() != 5 || dims[0] != key_dim || dims[1] != 2)
        throw std::runtime_error("weights: bad projection tensor shape");
      const std::array<std::int64_t, 3> shape = {static_cast<std::int64_t>(dims[2]),
                                                 static_cast<std::int64_t>(dims[3]),
                                                 static_cast<std::int64_t>(dims[4])};
      enc.projections_[shape] = std::move(v);
    }
  } else {
    if (n_tensors != 6) throw std::runtime_error("weights: cnn file must hold 6 tensors");
    CnnWeights w = init_cnn(cfg);
    auto expect = [&r](std::vector<float>& dst, std::size_t want, const char* what) {
      auto [v, dims] = read_tensor(r);
      (void)dims;
      if (v.size() != want)
        throw std::runtime_error(std::string("weights: unexpected size for ") + what);
      dst = std::move(v);
    };
    expect(w.c1.w, w.c1.w.size(), "conv1 weights");
    expect(w.c1.b, w.c1.b.size(), "conv1 bias");
    expect(w.c2.w, w.c2.w.size(), "conv2 weights");
    expect(w.c2.b, w.c2.b.size(), "conv2 bias");
    expect(w.fc_w, w.fc_w.size(), "fc weights");
    expect(w.fc_b, w.fc_b.size(), "fc bias");
    enc.set_cnn_weights(std::move(w));
  }
  if (!r.done()) throw std::runtime_error("weights: trailing bytes in " + path);
  return enc;
}

}  // namespace mlr
