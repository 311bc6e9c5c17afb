#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alq/scoring.hpp"
#include "alq/selection.hpp"
#include "alq/types.hpp"

namespace alq {

enum class SelectionPool { unlabeled_only, union_labeled_unlabeled };

const char* selection_pool_name(SelectionPool p);
SelectionPool parse_selection_pool(const std::string& name);

struct SamplingConfig {
  Strategy strategy = Strategy::top_n;
  SimilaritySpec similarity;
  std::vector<uint32_t> round_robin_classes;
  bool coreset_random_first = false;
};

struct LoopConfig {
  // Iteration-0 labeled set: either an explicit id list, or a count drawn
  // uniformly at random with the run seed.
  std::size_t initial_labeled_count = 0;
  std::vector<std::string> initial_labeled_ids;
  std::size_t batch_size = 1;
  uint32_t iterations = 1;
  ScoringConfig scoring;
  SamplingConfig sampling;
  SelectionPool selection_pool = SelectionPool::unlabeled_only;
  uint64_t seed = 0;
  // Optional explicit test ids for evaluate(); empty means the adapter's own
  // held-out split.
  std::vector<std::string> test_ids;

  void validate() const;
};

struct ModelHandle {
  uint64_t value = 0;
};

// Stand-in for the training/prediction/evaluation stack. Training lists may
// contain duplicate ids (re-selected labeled images); adapters choose whether
// to honor or collapse duplicates and must document which.
class TrainerAdapter {
public:
  virtual ~TrainerAdapter() = default;
  virtual ModelHandle train(std::span<const std::string> training_ids) = 0;
  virtual std::vector<PredictionStack> predict(ModelHandle model,
                                               std::span<const std::string> ids) = 0;
  virtual MetricRecord evaluate(ModelHandle model, std::span<const std::string> test_ids) = 0;
};

// Runs the full query loop: train, predict over the configured selection
// pool, score, sample a batch, move fresh picks into the labeled set, track
// unique-image accounting, evaluate.
LoopState run_loop(std::span<const ImageRecord> pool, const LoopConfig& config,
                   TrainerAdapter& trainer, const EmbeddingPool* embeddings = nullptr);

struct DedupRecord {
  uint32_t iteration = 0;
  std::size_t labeling_cost = 0;     // fresh ids in the batch
  std::size_t training_repeats = 0;  // re-selected already-labeled ids
};

std::vector<DedupRecord> dedup_accounting(std::span<const IterationRecord> ledger);

// Ledger serialization: "# key: value" header then one JSON record per
// iteration.
void write_ledger(const std::string& path, const LoopState& state, const LoopConfig& config,
                  const std::vector<std::pair<std::string, std::string>>& header_extras = {});

// "key = value" loop configuration files (see README for the key list).
LoopConfig read_loop_config(const std::string& path);

}  // namespace alq
