#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alq/loop.hpp"
#include "alq/types.hpp"

namespace alq {

// Synthetic pool: scenes are points in an 8-D latent space, replicated
// duplicates_per_scene times with small jitter (stand-in for consecutive
// video frames); per-scene class presence follows the prevalence profile and
// shifts the latent along a fixed per-class direction. Embeddings are the
// jittered latents plus observation noise.
struct SynthPoolSpec {
  std::size_t pool_size = 1000;
  uint32_t classes = 2;
  uint32_t height = 1;
  uint32_t width = 1;
  uint32_t ensemble = 6;
  std::vector<double> prevalence;  // per class in (0,1]; empty = all 0.5
  uint32_t duplicates_per_scene = 1;
  double noise = 0.02;
  uint64_t seed = 1;

  // generator internals, desk-scale defaults
  double class_signal = 2.5;
  std::vector<double> class_signal_per_class;  // optional per-class override
  double scene_spread = 1.0;
  double perturbation = 0.02;

  double signal_for(uint32_t cls) const {
    return class_signal_per_class.empty() ? class_signal : class_signal_per_class[cls];
  }

  static constexpr uint32_t kLatentDim = 8;

  std::vector<double> effective_prevalence() const;
  void validate() const;
  std::string class_tag(uint32_t cls) const { return "c" + std::to_string(cls); }
};

struct SynthPool {
  SynthPoolSpec spec;
  std::vector<ImageRecord> records;    // class_tags carry the ground truth
  std::vector<Embedding> embeddings;   // parallel to records
};

SynthPool generate_pool(const SynthPoolSpec& spec);

struct ToyTrainerOptions {
  bool bootstrap = true;   // off = E identical members, zero disagreement
  double l2 = 1e-3;
  int fit_iterations = 25;
  std::size_t test_size = 1000;
  double map_wobble = 0.08;  // spatial tiling amplitude (fraction of headroom)
};

// Per-class ensemble of L2-regularized logistic scorers fit on bootstrap
// resamples of the labeled embeddings. Duplicate ids in the training list are
// honored as duplicate rows (they over-weight re-selected samples). A class
// whose labels are absent or single-valued falls back to a constant prior.
// evaluate() reports per-class average precision on an internal held-out
// split drawn from the same generator distribution (or on explicit test ids).
class ToyTrainer : public TrainerAdapter {
public:
  explicit ToyTrainer(const SynthPool& pool, ToyTrainerOptions options = {});
  ~ToyTrainer() override;

  ModelHandle train(std::span<const std::string> training_ids) override;
  std::vector<PredictionStack> predict(ModelHandle model,
                                       std::span<const std::string> ids) override;
  MetricRecord evaluate(ModelHandle model, std::span<const std::string> test_ids) override;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Pool directory layout written by the synth subcommand: manifest.jsonl,
// embeddings.alem, synth_spec.cfg, and (optionally) stacks/ with one ALPM per
// image predicted by an ensemble trained on a seeded random subset.
// stack_pool_cap > 0 writes only that many distinct stack files and cycles
// manifest references over them; benchmark pools use this to bound disk.
void write_pool_dir(const SynthPool& pool, const std::string& dir, bool emit_stacks = true,
                    std::size_t stack_pool_cap = 0);

// Key-value spec file used inside pool directories.
void write_synth_spec(const std::string& path, const SynthPoolSpec& spec);
SynthPoolSpec read_synth_spec(const std::string& path);

}  // namespace alq
