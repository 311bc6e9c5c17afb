#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alq/similarity.hpp"
#include "alq/types.hpp"

namespace alq {

enum class Strategy {
  top_n,
  top_third,
  top_half_bottom_half,
  bottom_n,
  random,
  kmpp,
  coreset,
  omp,
  round_robin,
};

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
bool strategy_needs_embeddings(Strategy s);

struct SelectionBatch {
  std::string strategy;
  std::vector<std::string> selected;
  std::vector<double> scores_at_selection;
  uint64_t seed = 0;
};

// Score-only strategies (top-N, bottom-N, the split, and the seeded
// top-third draw). All ties break by lexicographic image id; batches clamp
// to the pool size.
SelectionBatch select_score_only(std::span<const ScoredImage> scores, std::size_t n,
                                 Strategy strategy, uint64_t seed = 0);

// Uniform random baseline (no informativeness).
SelectionBatch select_random(std::span<const ScoredImage> scores, std::size_t n, uint64_t seed);

// Score-weighted k-means++ seeding: after a uniform first pick, items are
// drawn with probability s(x) * d_min(x) / sum(s * d_min). When every
// remaining weight is zero the draw falls back to uniform.
SelectionBatch select_kmpp(const EmbeddingPool& embeddings, std::span<const ScoredImage> scores,
                           std::size_t n, const SimilaritySpec& spec, uint64_t seed);

// Greedy core-set: first pick is the highest-score item (or seeded-uniform
// with random_first), then argmax over x of s(x) * min distance to the
// chosen set.
SelectionBatch select_coreset(const EmbeddingPool& embeddings, std::span<const ScoredImage> scores,
                              std::size_t n, const SimilaritySpec& spec, uint64_t seed = 0,
                              bool random_first = false);

// Sparse-modeling selection: greedily minimize ||Dx - s||^2 subject to
// ||x||_0 = N and 0 <= x <= 1 over the similarity matrix D, orthogonal
// matching pursuit style with a box-constrained least-squares refit of the
// active set each step. scores_at_selection holds the final coefficients.
SelectionBatch select_omp(const EmbeddingPool& embeddings, std::span<const ScoredImage> scores,
                          std::size_t n, const SimilaritySpec& spec);

// Greedy core of select_omp over an explicit row-major m x m similarity
// matrix; ids and scores are parallel arrays.
SelectionBatch omp_over_similarity(const std::vector<float>& similarity,
                                   std::span<const std::string> ids,
                                   std::span<const double> scores, std::size_t n);

// Alternates over `classes`, each turn taking the best unselected image by
// that class's per-class score.
SelectionBatch select_round_robin(std::span<const ScoredImage> scores,
                                  std::span<const uint32_t> classes, std::size_t n);

// Box-constrained least squares min ||Ax - s||^2 over 0 <= x <= 1, given
// gram = A^T A (row-major k x k) and rhs = A^T s; projected gradient with a
// spectral step. Exposed for the OMP inner-solve oracle tests.
struct BoxLsqResult {
  std::vector<double> x;
  int iterations = 0;
  bool converged = false;
};
BoxLsqResult box_constrained_lsq(const std::vector<double>& gram, const std::vector<double>& rhs,
                                 double tol = 1e-8, int max_iters = 10000);

}  // namespace alq
