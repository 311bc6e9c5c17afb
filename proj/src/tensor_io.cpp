#include "alq/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "alq/error.hpp"
#include "alq/io_util.hpp"
#include "alq/kernels.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor formats are little-endian; big-endian hosts are unsupported");
static_assert(sizeof(float) == 4);

namespace alq {
namespace {

constexpr std::size_t kMaxElements = std::size_t(1) << 31;

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ostream& out, uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); }

uint32_t get_u32(std::istream& in, const std::string& path) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) raise(Errc::truncated_payload, path);
  return v;
}

uint16_t get_u16(std::istream& in, const std::string& path) {
  uint16_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 2)) raise(Errc::truncated_payload, path);
  return v;
}

void check_magic(std::istream& in, const char expect[4], const std::string& path) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, expect, 4) != 0)
    raise(Errc::bad_magic, path + " is not a " + std::string(expect, 4) + " file");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path);
  return in;
}

}  // namespace

void write_prediction_stack(const std::string& path, const PredictionStack& stack) {
  auto out = open_out(path);
  out.write("ALPM", 4);
  put_u32(out, kTensorFormatVersion);
  put_u32(out, stack.members());
  put_u32(out, stack.classes());
  put_u32(out, stack.height());
  put_u32(out, stack.width());
  out.write(reinterpret_cast<const char*>(stack.probs().data()),
            std::streamsize(stack.probs().size() * 4));
  if (!out) raise(Errc::io_error, "short write to " + path);
}

PredictionStack read_prediction_stack(const std::string& path, const std::string& image_id) {
  auto in = open_in(path);
  check_magic(in, "ALPM", path);
  const uint32_t version = get_u32(in, path);
  if (version != kTensorFormatVersion)
    raise(Errc::bad_magic, path + ": unsupported ALPM version " + std::to_string(version));
  const uint32_t members = get_u32(in, path);
  const uint32_t classes = get_u32(in, path);
  const uint32_t height = get_u32(in, path);
  const uint32_t width = get_u32(in, path);
  if (members == 0 || classes == 0 || height == 0 || width == 0)
    raise(Errc::malformed_record, path + ": zero dimension in header");
  // stepwise so a crafted header cannot overflow the element count
  std::size_t n = std::size_t(members) * classes;
  if (n > kMaxElements || n * height > kMaxElements || n * height * width > kMaxElements)
    raise(Errc::malformed_record, path + ": dimensions too large");
  n *= std::size_t(height) * width;
  std::vector<float> probs(n);
  if (!in.read(reinterpret_cast<char*>(probs.data()), std::streamsize(n * 4)))
    raise(Errc::truncated_payload,
          path + ": expected " + std::to_string(n) + " float32 values");
  return PredictionStack(image_id, members, classes, height, width, std::move(probs));
}

void write_embeddings(const std::string& path, std::span<const Embedding> embeddings) {
  const uint32_t dim = embeddings.empty() ? 0 : uint32_t(embeddings.front().vector.size());
  for (const auto& e : embeddings) {
    if (e.vector.size() != dim)
      raise(Errc::dimension_mismatch,
            path + ": embedding " + e.image_id + " has dimension " +
                std::to_string(e.vector.size()) + ", expected " + std::to_string(dim));
    if (e.image_id.empty() || e.image_id.size() > std::numeric_limits<uint16_t>::max())
      raise(Errc::malformed_record, path + ": bad embedding id");
  }
  auto out = open_out(path);
  out.write("ALEM", 4);
  put_u32(out, kTensorFormatVersion);
  put_u32(out, dim);
  put_u32(out, uint32_t(embeddings.size()));
  for (const auto& e : embeddings) {
    put_u16(out, uint16_t(e.image_id.size()));
    out.write(e.image_id.data(), std::streamsize(e.image_id.size()));
    out.write(reinterpret_cast<const char*>(e.vector.data()), std::streamsize(dim * 4));
  }
  if (!out) raise(Errc::io_error, "short write to " + path);
}

std::vector<Embedding> read_embeddings(const std::string& path) {
  auto in = open_in(path);
  check_magic(in, "ALEM", path);
  const uint32_t version = get_u32(in, path);
  if (version != kTensorFormatVersion)
    raise(Errc::bad_magic, path + ": unsupported ALEM version " + std::to_string(version));
  const uint32_t dim = get_u32(in, path);
  const uint32_t count = get_u32(in, path);
  if (count > 0 && dim == 0) raise(Errc::dimension_mismatch, path + ": zero dimension");
  std::vector<Embedding> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t id_len = get_u16(in, path);
    Embedding e;
    e.image_id.resize(id_len);
    if (!in.read(e.image_id.data(), id_len)) raise(Errc::truncated_payload, path);
    if (e.image_id.empty()) raise(Errc::malformed_record, path + ": empty embedding id");
    e.vector.resize(dim);
    if (!in.read(reinterpret_cast<char*>(e.vector.data()), std::streamsize(dim) * 4))
      raise(Errc::truncated_payload, path);
    for (std::size_t d = 0; d < dim; ++d) {
      if (!std::isfinite(e.vector[d]))
        raise(Errc::value_out_of_range,
              path + ": non-finite value in embedding " + e.image_id + " at dim " +
                  std::to_string(d));
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_detections(const std::string& path, std::span<const DetectionSet> sets) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + path);
  for (const auto& set : sets) {
    for (const auto& d : set.detections) {
      out << set.image_id << '\t' << d.cls << '\t' << format_double(d.x) << '\t'
          << format_double(d.y) << '\t' << format_double(d.w) << '\t' << format_double(d.h)
          << '\t' << format_double(d.confidence) << '\n';
    }
  }
  if (!out) raise(Errc::io_error, "short write to " + path);
}

DetectionSet read_detections(const std::string& path, const std::string& image_id) {
  LineReader reader(path);
  DetectionSet set;
  set.image_id = image_id;
  std::string line;
  while (reader.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::string context = path + ":" + std::to_string(reader.line_number());
    const auto cols = split(line, '\t');
    if (cols.size() != 7) raise(Errc::malformed_record, context + ": expected 7 columns");
    if (cols[0] != image_id) continue;
    Detection d;
    d.cls = uint32_t(parse_u64(cols[1], context));
    d.x = float(parse_double(cols[2], context));
    d.y = float(parse_double(cols[3], context));
    d.w = float(parse_double(cols[4], context));
    d.h = float(parse_double(cols[5], context));
    d.confidence = float(parse_double(cols[6], context));
    if (!(d.confidence >= 0.0f && d.confidence <= 1.0f))
      raise(Errc::value_out_of_range, context + ": confidence outside [0,1]");
    if (!(d.w > 0.0f) || !(d.h > 0.0f))
      raise(Errc::value_out_of_range, context + ": box with non-positive extent");
    set.detections.push_back(d);
  }
  return set;
}

PredictionStack::PredictionStack(std::string image_id, uint32_t members, uint32_t classes,
                                 uint32_t height, uint32_t width, std::vector<float> probs)
    : image_id_(std::move(image_id)),
      members_(members),
      classes_(classes),
      height_(height),
      width_(width),
      probs_(std::move(probs)) {
  if (members_ == 0 || classes_ == 0 || height_ == 0 || width_ == 0)
    raise(Errc::malformed_record, "prediction stack with zero dimension");
  const std::size_t expected = std::size_t(members_) * classes_ * height_ * width_;
  if (probs_.size() != expected)
    raise(Errc::truncated_payload, "prediction stack payload has " +
                                       std::to_string(probs_.size()) + " values, expected " +
                                       std::to_string(expected));
  const std::size_t bad = kernels::active_table().range_check(probs_.data(), probs_.size());
  if (bad != probs_.size())
    raise(Errc::value_out_of_range, "probability outside [0,1] at position " +
                                        std::to_string(bad) + " of stack " + image_id_);
}

}  // namespace alq
