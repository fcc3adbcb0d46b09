#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mlr/array.hpp"

namespace mlr {

/// Memoizable operator identifiers. Part of cache and wire-level keys, so the
/// numeric values are stable.
enum class OpId : std::uint8_t {
  fu1d = 0,
  fu2d = 1,
  fu1d_adj = 2,
  fu2d_adj = 3,
  f2d = 4,
  f2d_adj = 5,
};
const char* op_name(OpId op);

struct EncoderConfig {
  enum class Variant : std::uint8_t { projection = 0, cnn = 1 };

  int key_dim = 60;
  Variant variant = Variant::projection;
  std::uint64_t seed = 1337;

  // cnn architecture (fixed filter geometry, stride 2, ReLU)
  int conv1_filters = 32;
  int conv1_size = 5;
  int conv2_filters = 64;
  int conv2_size = 3;

  // cnn training
  int epochs = 20;
  double learning_rate = 1e-3;
  int pair_samples = 200;

  void validate() const;
};

struct MemoKey {
  std::vector<float> values;
  std::int64_t location = 0;
  OpId op = OpId::fu1d;
};

/// Real and imaginary planes of a complex array, in the array's row-major
/// order. complex_split/complex_join are lossless inverses.
struct RealPlanes {
  std::vector<double> re;
  std::vector<double> im;
};
RealPlanes complex_split(const Array3& chunk);
Array3 complex_join(const RealPlanes& planes, Shape3 shape, Domain domain);

/// CNN parameters: two strided conv layers, global average pooling, one
/// fully connected layer down to key_dim.
struct ConvLayer {
  int in_ch = 0, out_ch = 0, ksize = 0;
  std::vector<float> w;  // [out_ch][in_ch][ksize][ksize]
  std::vector<float> b;  // [out_ch]
};
struct CnnWeights {
  int key_dim = 0;
  ConvLayer c1, c2;
  std::vector<float> fc_w;  // [key_dim][c2.out_ch]
  std::vector<float> fc_b;  // [key_dim]
};

/// Maps operator-input chunks to key_dim-dimensional float keys.
/// The default variant multiplies the stacked (re, im) planes by a
/// seed-deterministic Gaussian matrix scaled by 1/sqrt(key_dim); the cnn
/// variant runs the trained network on the RMS-normalized planes.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }

  /// Builds (projection) or shape-checks (cnn) the state for one chunk
  /// shape. encode() throws for unregistered shapes.
  void register_shape(Shape3 shape);
  bool has_shape(Shape3 shape) const;

  /// Keys are mixed with a signed permutation seeded by (location, op) so
  /// entries from different slots cannot match in the shared store; the mix
  /// is orthogonal, so same-slot cosine similarity is unchanged.
  MemoKey encode(const Array3& chunk, std::int64_t location, OpId op) const;

  /// encode() without the slot mix; exposes the raw content embedding.
  MemoKey encode_content_only(const Array3& chunk, std::int64_t location, OpId op) const;

  void set_cnn_weights(CnnWeights w);
  const CnnWeights& cnn_weights() const;

  void save_weights(const std::string& path) const;
  static Encoder load_weights(const std::string& path, EncoderConfig cfg);

 private:
  std::vector<float> encode_projection(const Array3& chunk) const;
  std::vector<float> encode_cnn(const Array3& chunk) const;

  EncoderConfig cfg_;
  std::map<std::array<std::int64_t, 3>, std::vector<float>> projections_;
  CnnWeights cnn_;
  bool cnn_ready_ = false;
};

/// Seeded He-style initialization of the CNN for a given config.
CnnWeights init_cnn(const EncoderConfig& cfg);

struct TrainEpoch {
  int epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double holdout_loss = 0.0;
};
struct TrainResult {
  CnnWeights weights;
  std::vector<TrainEpoch> history;
};

/// Contrastive training: per pair, loss = | ||z_a - z_b|| - ||Ch_a - Ch_b|| |
/// with both chunks scaled to unit RMS first (so key-space and chunk-space
/// distances are commensurate). Adam updates; the last 20% of shuffled pairs
/// are the held-out set.
TrainResult train_contrastive(const std::vector<std::pair<Array3, Array3>>& pairs,
                              const EncoderConfig& cfg);

/// Eq-style loss of one pair under the given weights (no update).
double contrastive_pair_loss(const CnnWeights& w, const EncoderConfig& cfg, const Array3& a,
                             const Array3& b);

}  // namespace mlr
