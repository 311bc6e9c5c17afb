#include "alq/loop.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "alq/error.hpp"
#include "alq/io_util.hpp"
#include "alq/rng.hpp"

namespace alq {

const char* selection_pool_name(SelectionPool p) {
  return p == SelectionPool::unlabeled_only ? "unlabeled" : "union";
}

SelectionPool parse_selection_pool(const std::string& name) {
  if (name == "unlabeled" || name == "unlabeled_only") return SelectionPool::unlabeled_only;
  if (name == "union" || name == "union_labeled_unlabeled")
    return SelectionPool::union_labeled_unlabeled;
  raise(Errc::bad_config, "unknown selection pool '" + name + "'");
}

void LoopConfig::validate() const {
  if (batch_size < 1) raise(Errc::bad_config, "batch_size must be >= 1");
  if (iterations < 1) raise(Errc::bad_config, "iterations must be >= 1");
  scoring.validate();
  if (scoring.function == ScoreFunction::det_ent)
    raise(Errc::bad_config, "the loop scores trainer prediction stacks; Det-Ent is file-only");
  if (!initial_labeled_ids.empty() && initial_labeled_count != 0)
    raise(Errc::bad_config, "give either initial labeled ids or a count, not both");
}

namespace {

std::vector<std::string> sorted_ids(std::span<const ImageRecord> pool) {
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& rec : pool) ids.push_back(rec.id);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 1; i < ids.size(); ++i)
    if (ids[i] == ids[i - 1]) raise(Errc::duplicate_id, "\"" + ids[i] + "\" in loop pool");
  return ids;
}

std::vector<ScoredImage> score_selection_pool(TrainerAdapter& trainer, ModelHandle model,
                                              const std::vector<std::string>& ids,
                                              const ScoringConfig& scoring) {
  constexpr std::size_t kChunk = 1024;
  std::vector<ScoredImage> scores;
  scores.reserve(ids.size());
  for (std::size_t start = 0; start < ids.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, ids.size() - start);
    const std::span chunk(ids.data() + start, count);
    auto stacks = trainer.predict(model, chunk);
    if (stacks.size() != count)
      raise(Errc::bad_config, "trainer returned " + std::to_string(stacks.size()) +
                                  " stacks for " + std::to_string(count) + " ids");
    for (std::size_t j = 0; j < count; ++j) {
      if (stacks[j].image_id() != chunk[j])
        raise(Errc::bad_config, "trainer returned stack for " + stacks[j].image_id() +
                                    ", expected " + chunk[j]);
      scores.push_back(score_image(stacks[j], scoring));
    }
  }
  return scores;
}

SelectionBatch sample_batch(const std::vector<ScoredImage>& scores, const LoopConfig& config,
                            const EmbeddingPool* embeddings, uint64_t iter_seed) {
  const auto& sampling = config.sampling;
  if (strategy_needs_embeddings(sampling.strategy) && embeddings == nullptr)
    raise(Errc::bad_config, std::string(strategy_name(sampling.strategy)) +
                                " sampling needs an embedding pool");
  switch (sampling.strategy) {
    case Strategy::random:
      return select_random(scores, config.batch_size, iter_seed);
    case Strategy::kmpp:
      return select_kmpp(*embeddings, scores, config.batch_size, sampling.similarity, iter_seed);
    case Strategy::coreset:
      return select_coreset(*embeddings, scores, config.batch_size, sampling.similarity,
                            iter_seed, sampling.coreset_random_first);
    case Strategy::omp:
      return select_omp(*embeddings, scores, config.batch_size, sampling.similarity);
    case Strategy::round_robin:
      return select_round_robin(scores, sampling.round_robin_classes, config.batch_size);
    default:
      return select_score_only(scores, config.batch_size, sampling.strategy, iter_seed);
  }
}

}  // namespace

LoopState run_loop(std::span<const ImageRecord> pool, const LoopConfig& config,
                   TrainerAdapter& trainer, const EmbeddingPool* embeddings) {
  config.validate();
  const auto all_ids = sorted_ids(pool);
  if (all_ids.empty()) raise(Errc::empty_pool, "loop pool is empty");

  LoopState state;
  state.unlabeled_ids.insert(all_ids.begin(), all_ids.end());

  // Iteration-0 labeled set.
  std::vector<std::string> initial = config.initial_labeled_ids;
  if (initial.empty() && config.initial_labeled_count > 0) {
    if (config.initial_labeled_count > all_ids.size())
      raise(Errc::pool_exhausted, "initial labeled count exceeds pool size");
    auto shuffled = all_ids;
    Rng rng(derive_seed(config.seed, "loop/init"));
    for (std::size_t i = 0; i < config.initial_labeled_count; ++i) {
      const std::size_t j = i + rng.uniform_index(shuffled.size() - i);
      std::swap(shuffled[i], shuffled[j]);
    }
    initial.assign(shuffled.begin(),
                   shuffled.begin() + std::ptrdiff_t(config.initial_labeled_count));
    std::sort(initial.begin(), initial.end());
  }
  for (const auto& id : initial) {
    if (!state.unlabeled_ids.erase(id))
      raise(Errc::bad_config, "initial labeled id \"" + id + "\" is not in the pool");
    state.labeled_ids.insert(id);
    state.training_list.push_back(id);
  }

  for (uint32_t iter = 1; iter <= config.iterations; ++iter) {
    const std::size_t selectable = config.selection_pool == SelectionPool::unlabeled_only
                                       ? state.unlabeled_ids.size()
                                       : all_ids.size();
    if (selectable < config.batch_size)
      raise(Errc::pool_exhausted, "iteration " + std::to_string(iter) + " needs " +
                                      std::to_string(config.batch_size) + " candidates, has " +
                                      std::to_string(selectable));

    const ModelHandle model = trainer.train(state.training_list);

    std::vector<std::string> selection_ids;
    if (config.selection_pool == SelectionPool::unlabeled_only)
      selection_ids.assign(state.unlabeled_ids.begin(), state.unlabeled_ids.end());
    else
      selection_ids = all_ids;

    const auto scores = score_selection_pool(trainer, model, selection_ids, config.scoring);
    const uint64_t iter_seed =
        derive_seed(config.seed, "loop/iter/" + std::to_string(iter));
    auto batch = sample_batch(scores, config, embeddings, iter_seed);

    IterationRecord record;
    record.iteration = iter;
    record.selected_ids = batch.selected;
    for (const auto& id : batch.selected) {
      if (state.unlabeled_ids.erase(id)) {
        state.labeled_ids.insert(id);
        ++record.newly_labeled_count;
      }
      // fresh picks enter once; re-selected labeled ids become duplicates,
      // over-weighting samples the model finds hard
      state.training_list.push_back(id);
    }
    record.unique_image_count = state.labeled_ids.size();
    record.metrics = trainer.evaluate(model, config.test_ids);
    state.ledger.push_back(std::move(record));
    state.iteration = iter;
  }
  return state;
}

std::vector<DedupRecord> dedup_accounting(std::span<const IterationRecord> ledger) {
  std::vector<DedupRecord> out;
  out.reserve(ledger.size());
  for (const auto& rec : ledger) {
    DedupRecord d;
    d.iteration = rec.iteration;
    d.labeling_cost = rec.newly_labeled_count;
    d.training_repeats = rec.selected_ids.size() - rec.newly_labeled_count;
    out.push_back(d);
  }
  return out;
}

LoopConfig read_loop_config(const std::string& path) {
  LineReader reader(path);
  LoopConfig config;
  std::string line;
  while (reader.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos)
      raise(Errc::malformed_record,
            path + ":" + std::to_string(reader.line_number()) + ": expected 'key = value'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    const std::string context = path + ":" + std::to_string(reader.line_number());
    if (key == "initial_labeled") {
      config.initial_labeled_count = parse_u64(value, context);
    } else if (key == "initial_labeled_ids") {
      for (const auto part : split(value, ','))
        if (!part.empty()) config.initial_labeled_ids.emplace_back(part);
    } else if (key == "batch_size") {
      config.batch_size = parse_u64(value, context);
    } else if (key == "iterations") {
      config.iterations = uint32_t(parse_u64(value, context));
    } else if (key == "function") {
      if (value == "entropy") config.scoring.function = ScoreFunction::entropy;
      else if (value == "mi") config.scoring.function = ScoreFunction::mutual_information;
      else if (value == "grad") config.scoring.function = ScoreFunction::grad;
      else if (value == "detent") config.scoring.function = ScoreFunction::det_ent;
      else raise(Errc::bad_config, context + ": unknown function '" + value + "'");
    } else if (key == "aggregation") {
      if (value == "max") config.scoring.aggregation = Aggregation::max;
      else if (value == "avg") config.scoring.aggregation = Aggregation::avg;
      else if (value == "sum") config.scoring.aggregation = Aggregation::sum;
      else raise(Errc::bad_config, context + ": unknown aggregation '" + value + "'");
    } else if (key == "grad_reduce") {
      if (value == "none") config.scoring.grad_ensemble_reduce = GradReduce::none;
      else if (value == "maxvar") config.scoring.grad_ensemble_reduce = GradReduce::max_variance;
      else if (value == "meanvar")
        config.scoring.grad_ensemble_reduce = GradReduce::mean_variance;
      else raise(Errc::bad_config, context + ": unknown grad_reduce '" + value + "'");
    } else if (key == "epsilon") {
      config.scoring.epsilon = parse_double(value, context);
    } else if (key == "strategy") {
      config.sampling.strategy = parse_strategy(value);
    } else if (key == "metric") {
      config.sampling.similarity.metric = parse_metric(value);
    } else if (key == "classes") {
      for (const auto part : split(value, ','))
        if (!part.empty())
          config.sampling.round_robin_classes.push_back(uint32_t(parse_u64(part, context)));
    } else if (key == "coreset_random_first") {
      config.sampling.coreset_random_first = value == "true" || value == "1";
    } else if (key == "selection_pool") {
      config.selection_pool = parse_selection_pool(value);
    } else if (key == "seed") {
      config.seed = parse_u64(value, context);
    } else if (key == "test_ids") {
      for (const auto part : split(value, ','))
        if (!part.empty()) config.test_ids.emplace_back(part);
    } else {
      raise(Errc::bad_config, context + ": unknown key '" + key + "'");
    }
  }
  return config;
}

void write_ledger(const std::string& path, const LoopState& state, const LoopConfig& config,
                  const std::vector<std::pair<std::string, std::string>>& header_extras) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + path);
  HeaderWriter header(out);
  header.field("alq", "loop v1");
  header.field("iterations", uint64_t(config.iterations));
  header.field("batch_size", uint64_t(config.batch_size));
  header.field("function", score_function_name(config.scoring.function));
  header.field("aggregation", aggregation_name(config.scoring.aggregation));
  header.field("strategy", strategy_name(config.sampling.strategy));
  header.field("metric", metric_name(config.sampling.similarity.metric));
  header.field("selection_pool", selection_pool_name(config.selection_pool));
  header.field("seed", config.seed);
  for (const auto& [k, v] : header_extras) header.field(k, v);
  for (const auto& rec : state.ledger) {
    nlohmann::json j;
    j["iteration"] = rec.iteration;
    j["selected"] = rec.selected_ids.size();
    j["newly_labeled"] = rec.newly_labeled_count;
    j["cumulative_unique"] = rec.unique_image_count;
    j["metrics"] = rec.metrics;
    out << j.dump() << '\n';
  }
  if (!out) raise(Errc::io_error, "short write to " + path);
}

}  // namespace alq
