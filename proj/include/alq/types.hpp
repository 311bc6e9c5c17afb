#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "alq/error.hpp"

namespace alq {

// One row of a pool manifest. Absent optional fields are empty strings.
struct ImageRecord {
  std::string id;
  std::string sequence_id;
  std::vector<std::string> class_tags;  // sorted, unique
  std::string predictions_ref;
  std::string detections_ref;
  std::string embedding_ref;
  bool labeled = false;

  bool operator==(const ImageRecord&) const = default;
};

// Ensemble probability maps for one image: E members, C classes, H x W cells.
// Values are probabilities in [0,1]; layout is member-major, class-major, row-major.
class PredictionStack {
public:
  PredictionStack(std::string image_id, uint32_t members, uint32_t classes, uint32_t height,
                  uint32_t width, std::vector<float> probs);

  const std::string& image_id() const { return image_id_; }
  uint32_t members() const { return members_; }
  uint32_t classes() const { return classes_; }
  uint32_t height() const { return height_; }
  uint32_t width() const { return width_; }
  std::size_t cells() const { return std::size_t(height_) * width_; }
  std::size_t member_stride() const { return std::size_t(classes_) * cells(); }

  // Contiguous H*W map of one (member, class) pair.
  const float* map(uint32_t member, uint32_t cls) const {
    return probs_.data() + member * member_stride() + cls * cells();
  }
  const std::vector<float>& probs() const { return probs_; }

private:
  std::string image_id_;
  uint32_t members_, classes_, height_, width_;
  std::vector<float> probs_;
};

struct Detection {
  uint32_t cls = 0;
  float x = 0, y = 0, w = 0, h = 0;
  float confidence = 0;
};

struct DetectionSet {
  std::string image_id;
  std::vector<Detection> detections;
};

struct Embedding {
  std::string image_id;
  std::vector<float> vector;
};

struct ScoredImage {
  std::string image_id;
  double score = 0;
  std::vector<double> per_class_scores;  // empty when not applicable
};

// Adapter-defined evaluation metrics; keys are metric names.
using MetricRecord = std::map<std::string, double>;

struct IterationRecord {
  uint32_t iteration = 0;
  std::vector<std::string> selected_ids;
  std::size_t newly_labeled_count = 0;
  std::size_t unique_image_count = 0;  // cumulative distinct labeled ids, initial set included
  MetricRecord metrics;
};

struct LoopState {
  uint32_t iteration = 0;
  std::set<std::string> labeled_ids;
  std::set<std::string> unlabeled_ids;
  // Training list passed to the adapter; re-selected labeled ids appear as duplicates.
  std::vector<std::string> training_list;
  std::vector<IterationRecord> ledger;
};

}  // namespace alq
