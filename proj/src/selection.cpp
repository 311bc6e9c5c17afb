#include "alq/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <Eigen/Dense>

#include "alq/error.hpp"
#include "alq/rng.hpp"

namespace alq {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::top_n: return "topn";
    case Strategy::top_third: return "topthird";
    case Strategy::top_half_bottom_half: return "tophalfbottomhalf";
    case Strategy::bottom_n: return "bottomn";
    case Strategy::random: return "random";
    case Strategy::kmpp: return "kmpp";
    case Strategy::coreset: return "coreset";
    case Strategy::omp: return "omp";
    case Strategy::round_robin: return "roundrobin";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::top_n, Strategy::top_third, Strategy::top_half_bottom_half,
                     Strategy::bottom_n, Strategy::random, Strategy::kmpp, Strategy::coreset,
                     Strategy::omp, Strategy::round_robin}) {
    if (name == strategy_name(s)) return s;
  }
  raise(Errc::bad_config, "unknown strategy '" + name + "'");
}

bool strategy_needs_embeddings(Strategy s) {
  return s == Strategy::kmpp || s == Strategy::coreset || s == Strategy::omp;
}

namespace {

// Canonical candidate order: image id ascending. Makes every sampler's
// output independent of input-file ordering.
std::vector<const ScoredImage*> canonicalize(std::span<const ScoredImage> scores,
                                             bool require_nonnegative) {
  std::vector<const ScoredImage*> items;
  items.reserve(scores.size());
  for (const auto& s : scores) {
    if (!std::isfinite(s.score))
      raise(Errc::value_out_of_range, "non-finite score for " + s.image_id);
    if (require_nonnegative && s.score < 0)
      raise(Errc::value_out_of_range, "negative score for " + s.image_id);
    items.push_back(&s);
  }
  std::sort(items.begin(), items.end(),
            [](const ScoredImage* a, const ScoredImage* b) { return a->image_id < b->image_id; });
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i]->image_id == items[i - 1]->image_id)
      raise(Errc::duplicate_id, "\"" + items[i]->image_id + "\" scored more than once");
  }
  return items;
}

std::vector<std::size_t> rank_descending(const std::vector<const ScoredImage*>& items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a]->score != items[b]->score) return items[a]->score > items[b]->score;
    return items[a]->image_id < items[b]->image_id;
  });
  return order;
}

std::vector<std::size_t> rank_ascending(const std::vector<const ScoredImage*>& items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a]->score != items[b]->score) return items[a]->score < items[b]->score;
    return items[a]->image_id < items[b]->image_id;
  });
  return order;
}

void push(SelectionBatch& batch, const ScoredImage& item, double score) {
  batch.selected.push_back(item.image_id);
  batch.scores_at_selection.push_back(score);
}

// Candidate embeddings in canonical order, as a standalone pool.
EmbeddingPool subpool(const EmbeddingPool& embeddings,
                      const std::vector<const ScoredImage*>& items) {
  std::vector<Embedding> subset;
  subset.reserve(items.size());
  for (const auto* item : items) {
    const auto idx = embeddings.index_of(item->image_id);
    if (!idx) raise(Errc::missing_ref, "no embedding for scored image " + item->image_id);
    Embedding e;
    e.image_id = item->image_id;
    e.vector.assign(embeddings.data(*idx), embeddings.data(*idx) + embeddings.dim());
    subset.push_back(std::move(e));
  }
  return EmbeddingPool(std::move(subset));
}

}  // namespace

SelectionBatch select_random(std::span<const ScoredImage> scores, std::size_t n, uint64_t seed) {
  auto items = canonicalize(scores, false);
  if (items.empty()) raise(Errc::empty_pool, "nothing to select from");
  const std::size_t take = std::min(n, items.size());
  Rng rng(derive_seed(seed, "select/random"));
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  SelectionBatch batch{strategy_name(Strategy::random), {}, {}, seed};
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
    push(batch, *items[order[i]], items[order[i]]->score);
  }
  return batch;
}

SelectionBatch select_score_only(std::span<const ScoredImage> scores, std::size_t n,
                                 Strategy strategy, uint64_t seed) {
  if (strategy == Strategy::random) return select_random(scores, n, seed);
  auto items = canonicalize(scores, false);
  if (items.empty()) raise(Errc::empty_pool, "nothing to select from");
  const std::size_t take = std::min(n, items.size());
  SelectionBatch batch{strategy_name(strategy), {}, {}, seed};

  switch (strategy) {
    case Strategy::top_n: {
      const auto order = rank_descending(items);
      for (std::size_t i = 0; i < take; ++i) push(batch, *items[order[i]], items[order[i]]->score);
      break;
    }
    case Strategy::bottom_n: {
      const auto order = rank_ascending(items);
      for (std::size_t i = 0; i < take; ++i) push(batch, *items[order[i]], items[order[i]]->score);
      break;
    }
    case Strategy::top_half_bottom_half: {
      const auto desc = rank_descending(items);
      const auto asc = rank_ascending(items);
      const std::size_t top_take = (take + 1) / 2;  // odd batch: extra slot to the top half
      std::unordered_set<std::size_t> chosen;
      for (std::size_t i = 0; i < top_take; ++i) {
        chosen.insert(desc[i]);
        push(batch, *items[desc[i]], items[desc[i]]->score);
      }
      for (std::size_t i = 0; batch.selected.size() < take; ++i) {
        if (chosen.count(asc[i])) continue;
        chosen.insert(asc[i]);
        push(batch, *items[asc[i]], items[asc[i]]->score);
      }
      break;
    }
    case Strategy::top_third: {
      const auto desc = rank_descending(items);
      // Seeded uniform draw from the top third of the ranking (widened to the
      // batch size when the batch itself is larger than a third of the pool).
      const std::size_t third = std::max((items.size() + 2) / 3, take);
      std::vector<std::size_t> candidates(desc.begin(), desc.begin() + std::ptrdiff_t(third));
      Rng rng(derive_seed(seed, "select/topthird"));
      std::vector<std::size_t> picked;
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_index(candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
        picked.push_back(candidates[i]);
      }
      // rank order for readability; the draw itself is what is randomized
      std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
        if (items[a]->score != items[b]->score) return items[a]->score > items[b]->score;
        return items[a]->image_id < items[b]->image_id;
      });
      for (const auto idx : picked) push(batch, *items[idx], items[idx]->score);
      break;
    }
    default:
      raise(Errc::bad_config,
            std::string("strategy ") + strategy_name(strategy) + " is not score-only");
  }
  return batch;
}

SelectionBatch select_kmpp(const EmbeddingPool& embeddings, std::span<const ScoredImage> scores,
                           std::size_t n, const SimilaritySpec& spec, uint64_t seed) {
  auto items = canonicalize(scores, true);
  if (items.empty()) raise(Errc::not_enough_items, "nothing to select from");
  const auto pool = subpool(embeddings, items);
  const std::size_t m = items.size();
  const std::size_t take = std::min(n, m);

  Rng rng(derive_seed(seed, "select/kmpp"));
  SelectionBatch batch{strategy_name(Strategy::kmpp), {}, {}, seed};
  std::vector<bool> selected(m, false);
  std::vector<double> d_min(m, 0.0);

  std::size_t first = rng.uniform_index(m);
  selected[first] = true;
  push(batch, *items[first], items[first]->score);
  for (std::size_t i = 0; i < m; ++i)
    if (!selected[i]) d_min[i] = pair_distance(pool, i, first, spec.metric);

  while (batch.selected.size() < take) {
    double total = 0;
    for (std::size_t i = 0; i < m; ++i)
      if (!selected[i]) total += items[i]->score * d_min[i];

    std::size_t pick = m;
    if (total > 0) {
      const double u = rng.uniform() * total;
      double cum = 0;
      for (std::size_t i = 0; i < m; ++i) {
        if (selected[i]) continue;
        cum += items[i]->score * d_min[i];
        if (cum > u) {
          pick = i;
          break;
        }
      }
      if (pick == m) {  // fp underflow at the tail: take the last weighted item
        for (std::size_t i = m; i-- > 0;) {
          if (!selected[i] && items[i]->score * d_min[i] > 0) {
            pick = i;
            break;
          }
        }
      }
    }
    if (pick == m) {
      // every remaining s * d_min is zero: uniform fallback keeps the batch filling
      std::size_t remaining = 0;
      for (std::size_t i = 0; i < m; ++i) remaining += !selected[i];
      std::size_t skip = rng.uniform_index(remaining);
      for (std::size_t i = 0; i < m; ++i) {
        if (selected[i]) continue;
        if (skip-- == 0) {
          pick = i;
          break;
        }
      }
    }
    selected[pick] = true;
    push(batch, *items[pick], items[pick]->score);
    for (std::size_t i = 0; i < m; ++i)
      if (!selected[i]) d_min[i] = std::min(d_min[i], pair_distance(pool, i, pick, spec.metric));
  }
  return batch;
}

SelectionBatch select_coreset(const EmbeddingPool& embeddings, std::span<const ScoredImage> scores,
                              std::size_t n, const SimilaritySpec& spec, uint64_t seed,
                              bool random_first) {
  auto items = canonicalize(scores, true);
  if (items.empty()) raise(Errc::not_enough_items, "nothing to select from");
  const auto pool = subpool(embeddings, items);
  const std::size_t m = items.size();
  const std::size_t take = std::min(n, m);

  SelectionBatch batch{strategy_name(Strategy::coreset), {}, {}, seed};
  std::vector<bool> selected(m, false);
  std::vector<double> d_min(m, 0.0);

  std::size_t first = 0;
  if (random_first) {
    Rng rng(derive_seed(seed, "select/coreset"));
    first = rng.uniform_index(m);
  } else {
    for (std::size_t i = 1; i < m; ++i)
      if (items[i]->score > items[first]->score) first = i;  // id tie-break: first wins
  }
  selected[first] = true;
  push(batch, *items[first], items[first]->score);
  for (std::size_t i = 0; i < m; ++i)
    if (!selected[i]) d_min[i] = pair_distance(pool, i, first, spec.metric);

  while (batch.selected.size() < take) {
    std::size_t pick = m;
    double best = -1;
    for (std::size_t i = 0; i < m; ++i) {
      if (selected[i]) continue;
      const double weighted = items[i]->score * d_min[i];
      if (weighted > best) {
        best = weighted;
        pick = i;
      }
    }
    selected[pick] = true;
    push(batch, *items[pick], items[pick]->score);
    for (std::size_t i = 0; i < m; ++i)
      if (!selected[i]) d_min[i] = std::min(d_min[i], pair_distance(pool, i, pick, spec.metric));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Sparse modeling (OMP)
// ---------------------------------------------------------------------------

BoxLsqResult box_constrained_lsq(const std::vector<double>& gram, const std::vector<double>& rhs,
                                 double tol, int max_iters) {
  const std::size_t k = rhs.size();
  if (gram.size() != k * k) raise(Errc::bad_config, "gram matrix size mismatch");
  BoxLsqResult result;
  if (k == 0) {
    result.converged = true;
    return result;
  }
  Eigen::Map<const Eigen::MatrixXd> g(gram.data(), Eigen::Index(k), Eigen::Index(k));
  Eigen::Map<const Eigen::VectorXd> b(rhs.data(), Eigen::Index(k));

  // spectral step 1/L, L = 2 * lambda_max(G)
  Eigen::VectorXd v = Eigen::VectorXd::Ones(Eigen::Index(k)).normalized();
  double lambda = 0;
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd w = g * v;
    const double norm = w.norm();
    if (norm <= 0) break;
    lambda = norm;
    v = w / norm;
  }
  if (lambda <= 0) {  // zero operator: any feasible point is optimal
    result.x.assign(k, 0.0);
    result.converged = true;
    return result;
  }
  // 5% headroom in case power iteration stopped short of lambda_max
  const double step = 1.0 / (2.0 * lambda * 1.05);

  Eigen::VectorXd x =
      b.cwiseQuotient(g.diagonal().cwiseMax(1e-300)).cwiseMax(0.0).cwiseMin(1.0);
  for (int it = 1; it <= max_iters; ++it) {
    Eigen::VectorXd grad = 2.0 * (g * x - b);
    Eigen::VectorXd next = (x - step * grad).cwiseMax(0.0).cwiseMin(1.0);
    const double delta = (next - x).lpNorm<Eigen::Infinity>();
    x = next;
    if (delta < tol) {
      result.converged = true;
      result.iterations = it;
      break;
    }
    result.iterations = it;
  }
  result.x.assign(x.data(), x.data() + k);
  return result;
}

SelectionBatch omp_over_similarity(const std::vector<float>& similarity,
                                   std::span<const std::string> ids,
                                   std::span<const double> scores, std::size_t n) {
  const std::size_t m = ids.size();
  if (m == 0) raise(Errc::not_enough_items, "nothing to select from");
  if (similarity.size() != m * m) raise(Errc::bad_config, "similarity matrix size mismatch");
  const std::size_t take = std::min(n, m);

  std::vector<double> residual(scores.begin(), scores.end());
  std::vector<std::size_t> active;
  std::vector<bool> in_active(m, false);
  // gram/rhs over the active set, grown a column at a time
  std::vector<double> gram;
  std::vector<double> rhs;
  std::vector<double> x;

  auto column = [&](std::size_t j) { return similarity.data() + j * m; };

  for (std::size_t step = 0; step < take; ++step) {
    // most correlated unselected column vs the residual
    std::size_t pick = m;
    double best = -1;
    for (std::size_t j = 0; j < m; ++j) {
      if (in_active[j]) continue;
      const float* col = column(j);
      double corr = 0;
      for (std::size_t i = 0; i < m; ++i) corr += double(col[i]) * residual[i];
      corr = std::abs(corr);
      if (corr > best || (corr == best && pick != m && ids[j] < ids[pick])) {
        best = corr;
        pick = j;
      }
    }
    in_active[pick] = true;

    // grow gram/rhs with the new column
    const std::size_t k = active.size();
    std::vector<double> grown((k + 1) * (k + 1));
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) grown[a * (k + 1) + b] = gram[a * k + b];
    const float* cnew = column(pick);
    for (std::size_t a = 0; a <= k; ++a) {
      const float* ca = a < k ? column(active[a]) : cnew;
      double dot = 0;
      for (std::size_t i = 0; i < m; ++i) dot += double(ca[i]) * double(cnew[i]);
      grown[a * (k + 1) + k] = dot;
      grown[k * (k + 1) + a] = dot;
    }
    gram = std::move(grown);
    double bnew = 0;
    for (std::size_t i = 0; i < m; ++i) bnew += double(cnew[i]) * scores[i];
    rhs.push_back(bnew);
    active.push_back(pick);

    auto refit = box_constrained_lsq(gram, rhs);
    if (!refit.converged)
      raise(Errc::solver_divergence, "box-constrained refit did not converge at step " +
                                         std::to_string(step + 1));
    x = std::move(refit.x);

    for (std::size_t i = 0; i < m; ++i) {
      double fitted = 0;
      for (std::size_t a = 0; a < active.size(); ++a)
        fitted += double(column(active[a])[i]) * x[a];
      residual[i] = scores[i] - fitted;
    }
  }

  SelectionBatch batch{strategy_name(Strategy::omp), {}, {}, 0};
  for (std::size_t a = 0; a < active.size(); ++a) {
    batch.selected.push_back(ids[active[a]]);
    batch.scores_at_selection.push_back(x[a]);
  }
  return batch;
}

SelectionBatch select_omp(const EmbeddingPool& embeddings, std::span<const ScoredImage> scores,
                          std::size_t n, const SimilaritySpec& spec) {
  auto items = canonicalize(scores, true);
  if (items.empty()) raise(Errc::not_enough_items, "nothing to select from");
  const auto pool = subpool(embeddings, items);
  const auto distances = build_similarity(pool, spec.metric);
  const auto similarity = similarity_from_distances(distances, pool.size());

  std::vector<std::string> ids;
  std::vector<double> s;
  ids.reserve(items.size());
  s.reserve(items.size());
  for (const auto* item : items) {
    ids.push_back(item->image_id);
    s.push_back(item->score);
  }
  return omp_over_similarity(similarity, ids, s, n);
}

SelectionBatch select_round_robin(std::span<const ScoredImage> scores,
                                  std::span<const uint32_t> classes, std::size_t n) {
  auto items = canonicalize(scores, false);
  if (items.empty()) raise(Errc::not_enough_items, "nothing to select from");
  if (classes.empty()) raise(Errc::bad_config, "round-robin needs at least one class");
  for (const auto* item : items) {
    for (const auto cls : classes) {
      if (cls >= item->per_class_scores.size())
        raise(Errc::index_out_of_range, item->image_id + " has no per-class score for class " +
                                            std::to_string(cls));
    }
  }
  const std::size_t take = std::min(n, items.size());

  // per-class rankings; cursors skip already-selected items
  std::vector<std::vector<std::size_t>> ranking(classes.size());
  std::vector<std::size_t> cursor(classes.size(), 0);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto& order = ranking[c];
    order.resize(items.size());
    std::iota(order.begin(), order.end(), 0);
    const uint32_t cls = classes[c];
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = items[a]->per_class_scores[cls];
      const double sb = items[b]->per_class_scores[cls];
      if (sa != sb) return sa > sb;
      return items[a]->image_id < items[b]->image_id;
    });
  }

  SelectionBatch batch{strategy_name(Strategy::round_robin), {}, {}, 0};
  std::vector<bool> selected(items.size(), false);
  for (std::size_t turn = 0; batch.selected.size() < take; ++turn) {
    const std::size_t c = turn % classes.size();
    auto& cur = cursor[c];
    while (cur < ranking[c].size() && selected[ranking[c][cur]]) ++cur;
    if (cur >= ranking[c].size()) continue;  // class exhausted; other turns keep filling
    const std::size_t pick = ranking[c][cur];
    selected[pick] = true;
    push(batch, *items[pick], items[pick]->per_class_scores[classes[c]]);
  }
  return batch;
}

}  // namespace alq
