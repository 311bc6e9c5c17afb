#include "alq/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "alq/error.hpp"
#include "alq/io_util.hpp"

namespace alq {
namespace {

using nlohmann::json;

bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  // ids flow into tab-separated score and selection files
  return std::none_of(id.begin(), id.end(),
                      [](unsigned char c) { return std::isspace(c) || std::iscntrl(c); });
}

std::string opt_string(const json& j, const char* key, const std::string& context) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) raise(Errc::malformed_record, context + ": " + key + " must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string record_to_json(const ImageRecord& record) {
  json j;
  j["id"] = record.id;
  if (!record.sequence_id.empty()) j["sequence_id"] = record.sequence_id;
  if (!record.class_tags.empty()) j["class_tags"] = record.class_tags;
  if (!record.predictions_ref.empty()) j["predictions_ref"] = record.predictions_ref;
  if (!record.detections_ref.empty()) j["detections_ref"] = record.detections_ref;
  if (!record.embedding_ref.empty()) j["embedding_ref"] = record.embedding_ref;
  j["labeled"] = record.labeled;
  return j.dump();
}

ImageRecord record_from_json(std::string_view line, const std::string& context) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(Errc::malformed_record, context + ": not a JSON object");
  ImageRecord rec;
  rec.id = opt_string(j, "id", context);
  if (!valid_id(rec.id))
    raise(Errc::malformed_record, context + ": missing or invalid id");
  rec.sequence_id = opt_string(j, "sequence_id", context);
  rec.predictions_ref = opt_string(j, "predictions_ref", context);
  rec.detections_ref = opt_string(j, "detections_ref", context);
  rec.embedding_ref = opt_string(j, "embedding_ref", context);
  if (const auto it = j.find("class_tags"); it != j.end() && !it->is_null()) {
    if (!it->is_array())
      raise(Errc::malformed_record, context + ": class_tags must be an array");
    for (const auto& tag : *it) {
      if (!tag.is_string())
        raise(Errc::malformed_record, context + ": class_tags entries must be strings");
      rec.class_tags.push_back(tag.get<std::string>());
    }
    std::sort(rec.class_tags.begin(), rec.class_tags.end());
    rec.class_tags.erase(std::unique(rec.class_tags.begin(), rec.class_tags.end()),
                         rec.class_tags.end());
  }
  if (const auto it = j.find("labeled"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean())
      raise(Errc::malformed_record, context + ": labeled must be a boolean");
    rec.labeled = it->get<bool>();
  }
  return rec;
}

std::vector<ImageRecord> load_manifest(const std::string& path) {
  LineReader reader(path);
  std::vector<ImageRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  while (reader.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    auto rec = record_from_json(line, path + ":" + std::to_string(reader.line_number()));
    if (!seen.insert(rec.id).second)
      raise(Errc::duplicate_id, "\"" + rec.id + "\" appears more than once in " + path);
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(const std::string& path, std::span<const ImageRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + path);
  for (const auto& rec : records) out << record_to_json(rec) << '\n';
  if (!out) raise(Errc::io_error, "short write to " + path);
}

struct ManifestReader::Impl {
  explicit Impl(const std::string& path) : reader(path) {}
  LineReader reader;
};

ManifestReader::ManifestReader(const std::string& path)
    : impl_(std::make_unique<Impl>(path)), base_dir_(parent_dir(path)) {}

ManifestReader::~ManifestReader() = default;

bool ManifestReader::next(ImageRecord& record) {
  std::string line;
  while (impl_->reader.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    record = record_from_json(
        line, impl_->reader.path() + ":" + std::to_string(impl_->reader.line_number()));
    return true;
  }
  return false;
}

}  // namespace alq
