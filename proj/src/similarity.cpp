#include "alq/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "alq/error.hpp"
#include "alq/kernels.hpp"
#include "alq/tensor_io.hpp"

namespace alq {

const char* metric_name(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

Metric parse_metric(const std::string& name) {
  if (name == "euclidean" || name == "euclid" || name == "l2") return Metric::euclidean;
  if (name == "cosine" || name == "cos") return Metric::cosine;
  raise(Errc::bad_config, "unknown metric '" + name + "'");
}

EmbeddingPool::EmbeddingPool(std::vector<Embedding> embeddings) {
  if (embeddings.empty()) return;
  dim_ = embeddings.front().vector.size();
  if (dim_ == 0) raise(Errc::dimension_mismatch, "zero-dimensional embeddings");
  ids_.reserve(embeddings.size());
  flat_.reserve(embeddings.size() * dim_);
  for (auto& e : embeddings) {
    if (e.vector.size() != dim_)
      raise(Errc::dimension_mismatch, "embedding " + e.image_id + " has dimension " +
                                          std::to_string(e.vector.size()) + ", expected " +
                                          std::to_string(dim_));
    ids_.push_back(std::move(e.image_id));
    flat_.insert(flat_.end(), e.vector.begin(), e.vector.end());
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
}

EmbeddingPool EmbeddingPool::from_file(const std::string& path) {
  return EmbeddingPool(read_embeddings(path));
}

std::optional<std::size_t> EmbeddingPool::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::vector<double>& EmbeddingPool::norms() const {
  if (norms_.empty() && !ids_.empty()) {
    const auto& k = kernels::active_table();
    norms_.resize(size());
    for (std::size_t i = 0; i < size(); ++i) norms_[i] = std::sqrt(k.dot(data(i), data(i), dim_));
  }
  return norms_;
}

double pair_distance(const EmbeddingPool& pool, std::size_t i, std::size_t j, Metric metric) {
  if (i == j) return 0.0;
  const auto& k = kernels::active_table();
  if (metric == Metric::euclidean) return k.sq_l2_distance(pool.data(i), pool.data(j), pool.dim());
  const auto& norms = pool.norms();
  const double denom = norms[i] * norms[j];
  if (denom == 0.0) return 1.0;  // zero vector: no direction, treat as orthogonal
  return 1.0 - k.dot(pool.data(i), pool.data(j), pool.dim()) / denom;
}

std::vector<float> build_similarity(const EmbeddingPool& pool, Metric metric, std::size_t cap) {
  const std::size_t m = pool.size();
  if (m == 0) raise(Errc::empty_pool, "no embeddings");
  if (m > cap)
    raise(Errc::pool_too_large_for_dense,
          std::to_string(m) + " items exceed the dense-matrix cap of " + std::to_string(cap) +
              "; shortlist by score first");
  std::vector<float> d(m * m, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto v = float(pair_distance(pool, i, j, metric));
      d[i * m + j] = v;
      d[j * m + i] = v;
    }
  }
  return d;
}

std::vector<float> similarity_from_distances(const std::vector<float>& distances, std::size_t m) {
  std::vector<float> off;
  off.reserve(m * (m - 1) / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) off.push_back(distances[i * m + j]);
  double sigma = 1.0;
  if (!off.empty()) {
    const auto mid = off.begin() + std::ptrdiff_t(off.size() / 2);
    std::nth_element(off.begin(), mid, off.end());
    sigma = double(*mid);
    if (sigma <= 0.0) sigma = 1.0;  // all-duplicate pool
  }
  std::vector<float> s(m * m);
  for (std::size_t i = 0; i < m * m; ++i) s[i] = float(std::exp(-double(distances[i]) / sigma));
  return s;
}

}  // namespace alq
