#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alq {

// FNV-1a 64-bit, used for input digests in output-file headers.
class Fnv1a {
public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  uint64_t value() const { return hash_; }

private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

// Digest of a whole file, formatted "fnv1a:<16 hex>". Throws Errc::io_error.
std::string file_digest(const std::string& path);

// Shortest-round-trip decimal formatting; identical bytes for identical doubles.
std::string format_double(double v);

double parse_double(std::string_view text, const std::string& context);
uint64_t parse_u64(std::string_view text, const std::string& context);

std::vector<std::string_view> split(std::string_view line, char sep);

// Line-oriented reader tracking line numbers; skips nothing by itself.
class LineReader {
public:
  explicit LineReader(const std::string& path);
  // Returns false at EOF. Strips a trailing '\r'.
  bool next(std::string& line);
  std::size_t line_number() const { return line_number_; }
  const std::string& path() const { return path_; }

private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_number_ = 0;
};

// "# key: value" header block at the top of score/selection/ledger files.
class HeaderWriter {
public:
  explicit HeaderWriter(std::ostream& out) : out_(out) {}
  void field(std::string_view key, std::string_view value);
  void field(std::string_view key, uint64_t value);

private:
  std::ostream& out_;
};

// Reads the leading "# key: value" block; stops at the first non-header line
// (which is pushed back for the caller).
class HeaderReader {
public:
  static std::map<std::string, std::string> read(LineReader& reader, std::string& first_body_line,
                                                 bool& has_body);
};

// Score files: header block + one "id \t score [\t c0,c1,...]" row per image.
struct ScoreFileRow {
  std::string image_id;
  double score = 0;
  std::vector<double> per_class_scores;
};

void write_score_row(std::ostream& out, const std::string& id, double score,
                     const std::vector<double>& per_class);
ScoreFileRow parse_score_row(std::string_view line, const std::string& context);

std::vector<ScoreFileRow> read_score_file(const std::string& path,
                                          std::map<std::string, std::string>* header = nullptr);

// Paths in manifests are resolved relative to the manifest's directory.
std::string resolve_ref(const std::string& base_dir, const std::string& ref);
std::string parent_dir(const std::string& path);

}  // namespace alq
