#include "mlr/memostore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>

namespace mlr {

void IvfConfig::validate() const {
  if (nlist < 1 || nprobe < 1 || train_size < 1 || kmeans_iters < 1)
    throw std::invalid_argument("ivf: nlist, nprobe, train_size, kmeans_iters must be >= 1");
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double l2_sq(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_sq: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

std::vector<std::vector<float>> kmeans_train(const std::vector<std::vector<float>>& keys, int k,
                                             std::uint64_t seed, int iters) {
  if (keys.empty()) throw std::invalid_argument("kmeans: no keys");
  k = std::min<int>(k, static_cast<int>(keys.size()));
  const std::size_t dim = keys.front().size();
  std::mt19937_64 rng(seed);

  // k-means++ seeding: first centroid uniform, the rest weighted by squared
  // distance to the nearest chosen centroid.
  std::vector<std::vector<float>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  centroids.push_back(keys[rng() % keys.size()]);
  std::vector<double> dist2(keys.size());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) best = std::min(best, l2_sq(keys[i], c));
      dist2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target =
          (static_cast<double>(rng() >> 11) * 0x1.0p-53) * total;
      double run = 0.0;
      pick = keys.size() - 1;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        run += dist2[i];
        if (run >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng() % keys.size();
    }
    centroids.push_back(keys[pick]);
  }

  std::vector<std::size_t> owner(keys.size(), 0);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = l2_sq(keys[i], centroids[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      owner[i] = arg;
    }
    std::vector<std::vector<double>> sums(centroids.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      counts[owner[i]]++;
      for (std::size_t d = 0; d < dim; ++d)
        sums[owner[i]][d] += static_cast<double>(keys[i][d]);
    }
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (counts[c] == 0) continue;  // keep the previous centroid
      for (std::size_t d = 0; d < dim; ++d)
        centroids[c][d] = static_cast<float>(sums[c][d] / static_cast<double>(counts[c]));
    }
  }
  return centroids;
}

MemoStore::MemoStore(IvfConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::uint64_t MemoStore::insert(std::span<const float> key, std::vector<std::uint8_t> value) {
  if (key.empty()) throw std::invalid_argument("insert: empty key");

  std::uint64_t id = 0;
  {
    std::unique_lock vlock(values_mx_);
    id = values_.size();
    values_.push_back(std::move(value));
  }

  std::unique_lock slock(structure_mx_);
  if (key_dim_ == 0) key_dim_ = static_cast<int>(key.size());
  if (static_cast<int>(key.size()) != key_dim_)
    throw std::invalid_argument("insert: key dimension mismatch");

  if (!trained_) {
    flat_.push_back(Entry{std::vector<float>(key.begin(), key.end()), id});
    if (static_cast<int>(flat_.size()) >= cfg_.train_size) train_locked();
    return id;
  }

  const std::size_t c = nearest_centroid_locked(key);
  slock.unlock();

  // Structure is immutable after training; only the posting list needs the
  // writer lock.
  std::shared_lock sread(structure_mx_);
  std::unique_lock clock(clusters_[c]->mx);
  clusters_[c]->entries.push_back(Entry{std::vector<float>(key.begin(), key.end()), id});
  return id;
}

void MemoStore::train_locked() {
  std::vector<std::vector<float>> keys;
  keys.reserve(flat_.size());
  for (const Entry& e : flat_) keys.push_back(e.key);
  centroids_ = kmeans_train(keys, cfg_.nlist, cfg_.seed, cfg_.kmeans_iters);

  clusters_.clear();
  for (std::size_t c = 0; c < centroids_.size(); ++c)
    clusters_.push_back(std::make_unique<Cluster>());
  for (Entry& e : flat_) {
    const std::size_t c = nearest_centroid_locked(e.key);
    clusters_[c]->entries.push_back(std::move(e));
  }
  flat_.clear();
  trained_ = true;
}

std::size_t MemoStore::nearest_centroid_locked(std::span<const float> key) const {
  double best = std::numeric_limits<double>::max();
  std::size_t arg = 0;
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    const double d = l2_sq(key, centroids_[c]);
    if (d < best) {
      best = d;
      arg = c;
    }
  }
  return arg;
}

QueryOutcome MemoStore::query(std::span<const float> key, float tau, int nprobe) const {
  QueryOutcome out;
  if (nprobe <= 0) nprobe = cfg_.nprobe;

  std::shared_lock slock(structure_mx_);
  if (key_dim_ != 0 && static_cast<int>(key.size()) != key_dim_)
    throw std::invalid_argument("query: key dimension mismatch");

  double best = std::numeric_limits<double>::max();
  const Entry* best_entry = nullptr;

  auto consider = [&](const Entry& e) {
    const double d = l2_sq(key, e.key);
    if (d < best || (d == best && best_entry && e.id < best_entry->id)) {
      best = d;
      best_entry = &e;
    }
  };

  std::vector<std::shared_lock<std::shared_mutex>> held;  // keeps entry refs valid
  if (!trained_) {
    for (const Entry& e : flat_) consider(e);
  } else {
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(centroids_.size());
    for (std::size_t c = 0; c < centroids_.size(); ++c)
      ranked.emplace_back(l2_sq(key, centroids_[c]), c);
    std::sort(ranked.begin(), ranked.end());
    const std::size_t probes = std::min<std::size_t>(static_cast<std::size_t>(nprobe),
                                                     ranked.size());
    for (std::size_t p = 0; p < probes; ++p) {
      Cluster& cl = *clusters_[ranked[p].second];
      std::shared_lock<std::shared_mutex> lk(cl.mx);
      for (const Entry& e : cl.entries) consider(e);
      held.push_back(std::move(lk));
    }
  }

  if (!best_entry) return out;
  out.found = true;
  out.id = best_entry->id;
  out.cs = static_cast<float>(cosine_similarity(key, best_entry->key));
  out.hit = out.cs > tau;
  if (out.hit) {
    std::shared_lock vlock(values_mx_);
    out.value = values_[static_cast<std::size_t>(out.id)];
  }
  return out;
}

std::uint64_t MemoStore::key_count() const {
  std::shared_lock slock(structure_mx_);
  if (!trained_) return flat_.size();
  std::uint64_t n = 0;
  for (const auto& c : clusters_) {
    std::shared_lock lk(c->mx);
    n += c->entries.size();
  }
  return n;
}

int MemoStore::key_dim() const {
  std::shared_lock slock(structure_mx_);
  return key_dim_;
}

bool MemoStore::trained() const {
  std::shared_lock slock(structure_mx_);
  return trained_;
}

std::vector<std::vector<float>> MemoStore::centroids() const {
  std::shared_lock slock(structure_mx_);
  return centroids_;
}

}  // namespace mlr
