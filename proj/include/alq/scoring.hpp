#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "alq/types.hpp"

namespace alq {

enum class ScoreFunction { entropy, mutual_information, grad, det_ent };
enum class Aggregation { max, avg, sum };
enum class GradReduce { none, max_variance, mean_variance };

const char* score_function_name(ScoreFunction f);
const char* aggregation_name(Aggregation a);
const char* grad_reduce_name(GradReduce r);

struct ScoringConfig {
  ScoreFunction function = ScoreFunction::mutual_information;
  Aggregation aggregation = Aggregation::max;
  // Ensemble handling for Grad: per-cell variance of the member gradients,
  // reduced per image by max (MaxVariance) or mean (MeanVariance); the
  // aggregation field is not consulted on that path. `none` scores the
  // gradient of the ensemble-mean map.
  GradReduce grad_ensemble_reduce = GradReduce::none;
  double epsilon = 1e-12;

  // Throws Errc::bad_config; Sum aggregation is Det-Ent only, Avg is map-functions only.
  void validate() const;
};

// --- Map-level operations. Outputs are H*W doubles, row-major. ---

std::vector<double> entropy_map(const PredictionStack& stack, uint32_t member, uint32_t cls,
                                double epsilon = 1e-12);
std::vector<double> mean_probability_map(const PredictionStack& stack, uint32_t cls);
std::vector<double> mutual_information_map(const PredictionStack& stack, uint32_t cls,
                                           double epsilon = 1e-12);
std::vector<double> grad_map(const PredictionStack& stack, uint32_t member, uint32_t cls);
// Per-cell population variance of member gradient magnitudes; needs E >= 2.
std::vector<double> grad_ensemble_map(const PredictionStack& stack, uint32_t cls);

ScoredImage detection_entropy(const DetectionSet& dets, Aggregation aggregation,
                              double epsilon = 1e-12);

// --- Image-level scoring. ---

ScoredImage score_image(const PredictionStack& stack, const ScoringConfig& config);
ScoredImage score_image(const DetectionSet& dets, const ScoringConfig& config);

// --- Pool scoring (streaming). ---

struct ScoreOptions {
  int workers = 1;
  bool keep_going = false;
  std::string base_dir;  // refs resolved relative to this
};

struct ScoreFailure {
  std::string image_id;
  std::string message;
  Errc code = Errc::io_error;
};

// Pull-based record source; fills `out` and returns true, or returns false at
// end of input. Lets million-record manifests flow through without being
// materialized; duplicate-id checking is load_manifest's job, not ours.
using RecordSource = std::function<bool(ImageRecord&)>;

// Scores every record from `source`, emitting results in input order through
// `sink` on the calling thread. Failures go to `on_error` (still in input
// order) when keep_going is set, otherwise the first failure is thrown.
// Peak memory is O(workers), independent of pool size.
void score_pool(const RecordSource& source, const ScoringConfig& config,
                const ScoreOptions& options, const std::function<void(const ScoredImage&)>& sink,
                const std::function<void(const ScoreFailure&)>& on_error = {});

// Convenience overload for in-memory pools.
std::vector<ScoredImage> score_pool(std::span<const ImageRecord> records,
                                    const ScoringConfig& config, const ScoreOptions& options = {});

}  // namespace alq
