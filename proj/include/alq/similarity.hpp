#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "alq/types.hpp"

namespace alq {

enum class Metric { euclidean, cosine };

const char* metric_name(Metric m);
Metric parse_metric(const std::string& name);

struct SimilaritySpec {
  Metric metric = Metric::euclidean;
};

// Diversity samplers materialize an M x M matrix (OMP) or stream rows of it;
// pools beyond this must be score-shortlisted first.
inline constexpr std::size_t kDensePoolCap = 20000;

// Uniform-dimension embedding set with id lookup; data is row-major float.
class EmbeddingPool {
public:
  explicit EmbeddingPool(std::vector<Embedding> embeddings);

  static EmbeddingPool from_file(const std::string& path);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const float* data(std::size_t i) const { return flat_.data() + i * dim_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  std::optional<std::size_t> index_of(const std::string& id) const;
  // L2 norms, computed lazily on first use.
  const std::vector<double>& norms() const;

private:
  std::vector<std::string> ids_;
  std::vector<float> flat_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  mutable std::vector<double> norms_;
};

// Pairwise distance under the chosen metric: squared L2, or 1 - cosine.
double pair_distance(const EmbeddingPool& pool, std::size_t i, std::size_t j, Metric metric);

// Dense M x M distance matrix, row-major. Throws PoolTooLargeForDense past the cap.
std::vector<float> build_similarity(const EmbeddingPool& pool, Metric metric,
                                    std::size_t cap = kDensePoolCap);

// Distances -> similarities for the sparse-modeling objective:
// S_ij = exp(-d_ij / sigma) with sigma the median off-diagonal distance, so
// S_ii = 1 and co-selecting near-duplicates is penalized.
std::vector<float> similarity_from_distances(const std::vector<float>& distances, std::size_t m);

}  // namespace alq
