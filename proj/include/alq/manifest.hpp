#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alq/types.hpp"

namespace alq {

// Pool manifests are JSON-lines: one object per image with fields id,
// sequence_id, class_tags, predictions_ref, detections_ref, embedding_ref,
// labeled. Absent optional fields are omitted on write.

std::string record_to_json(const ImageRecord& record);
ImageRecord record_from_json(std::string_view line, const std::string& context);

// Full load with duplicate-id rejection.
std::vector<ImageRecord> load_manifest(const std::string& path);
void write_manifest(const std::string& path, std::span<const ImageRecord> records);

// Streaming reader for pools too large to materialize; does not retain seen
// ids, so duplicate detection is the full loader's job.
class ManifestReader {
public:
  explicit ManifestReader(const std::string& path);
  ~ManifestReader();
  bool next(ImageRecord& record);
  const std::string& base_dir() const { return base_dir_; }

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string base_dir_;
};

}  // namespace alq
