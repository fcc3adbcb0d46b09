#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <shared_mutex>
#include <span>
#include <vector>

namespace mlr {

struct IvfConfig {
  int nlist = 64;
  int nprobe = 8;
  int train_size = 1024;  // inserts before the clustered index is built
  int kmeans_iters = 20;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Seeded k-means (k-means++ init, fixed Lloyd iteration count). k is
/// clamped to the number of keys. Deterministic for a fixed seed.
std::vector<std::vector<float>> kmeans_train(const std::vector<std::vector<float>>& keys, int k,
                                             std::uint64_t seed, int iters);

struct QueryOutcome {
  bool found = false;          // index holds at least one candidate
  bool hit = false;            // cosine similarity above tau
  float cs = 0.0f;             // similarity of the best candidate (0 when none)
  std::uint64_t id = 0;        // value id of the best candidate
  std::vector<std::uint8_t> value;  // filled only on hit
};

/// Memoization database: an IVF index over keys plus an append-only value
/// store. Before `train_size` inserts the index is a flat list and queries
/// scan it exactly; afterwards queries probe the nprobe nearest clusters.
/// Candidates are ranked by L2 distance (ties by insertion id); the final
/// hit decision is gated on cosine similarity > tau.
class MemoStore {
 public:
  explicit MemoStore(IvfConfig cfg = {});

  /// Returns the monotone value id. The first insert fixes the key dim.
  std::uint64_t insert(std::span<const float> key, std::vector<std::uint8_t> value);

  /// nprobe <= 0 selects the configured default.
  QueryOutcome query(std::span<const float> key, float tau, int nprobe = 0) const;

  std::uint64_t key_count() const;
  int key_dim() const;
  bool trained() const;
  std::vector<std::vector<float>> centroids() const;
  const IvfConfig& config() const { return cfg_; }

 private:
  struct Entry {
    std::vector<float> key;
    std::uint64_t id;
  };
  struct Cluster {
    mutable std::shared_mutex mx;
    std::vector<Entry> entries;
  };

  void train_locked();
  std::size_t nearest_centroid_locked(std::span<const float> key) const;

  IvfConfig cfg_;

  mutable std::shared_mutex structure_mx_;  // trained flag, centroids, flat list
  int key_dim_ = 0;
  bool trained_ = false;
  std::vector<Entry> flat_;
  std::vector<std::vector<float>> centroids_;
  std::vector<std::unique_ptr<Cluster>> clusters_;

  mutable std::shared_mutex values_mx_;
  std::deque<std::vector<std::uint8_t>> values_;  // indexed by id
};

/// Cosine similarity with double accumulation; zero-norm inputs yield 0.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Squared L2 distance with double accumulation.
double l2_sq(std::span<const float> a, std::span<const float> b);

}  // namespace mlr
