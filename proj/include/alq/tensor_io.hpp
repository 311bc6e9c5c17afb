#pragma once

#include <span>
#include <string>
#include <vector>

#include "alq/types.hpp"

namespace alq {

// Binary tensor formats (little-endian):
//   ALPM: "ALPM", version u32, E u32, C u32, H u32, W u32, E*C*H*W float32
//         in member-major, class-major, row-major order.
//   ALEM: "ALEM", version u32, D u32, count u32, then per item:
//         id length u16, UTF-8 id bytes, D float32 values.
// Detections are text: one "image_id \t class \t x \t y \t w \t h \t conf"
// row per box; '#' lines are ignored.

inline constexpr uint32_t kTensorFormatVersion = 1;

void write_prediction_stack(const std::string& path, const PredictionStack& stack);
PredictionStack read_prediction_stack(const std::string& path, const std::string& image_id);

void write_embeddings(const std::string& path, std::span<const Embedding> embeddings);
std::vector<Embedding> read_embeddings(const std::string& path);

void write_detections(const std::string& path, std::span<const DetectionSet> sets);
// Rows for other image ids are skipped; an absent id yields an empty set.
DetectionSet read_detections(const std::string& path, const std::string& image_id);

}  // namespace alq
