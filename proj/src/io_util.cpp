#include "alq/io_util.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <cstring>

#include "alq/error.hpp"

namespace alq {

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path);
  Fnv1a fnv;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) fnv.update(buf, std::size_t(in.gcount()));
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a:%016" PRIx64, fnv.value());
  return out;
}

std::string format_double(double v) {
  // Shortest representation that parses back to the same double.
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

double parse_double(std::string_view text, const std::string& context) {
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    raise(Errc::malformed_record, context + ": bad number '" + std::string(text) + "'");
  return v;
}

uint64_t parse_u64(std::string_view text, const std::string& context) {
  uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    raise(Errc::malformed_record, context + ": bad integer '" + std::string(text) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

LineReader::LineReader(const std::string& path) : path_(path), in_(path) {
  if (!in_) raise(Errc::io_error, "cannot open " + path);
}

bool LineReader::next(std::string& line) {
  if (!std::getline(in_, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  ++line_number_;
  return true;
}

void HeaderWriter::field(std::string_view key, std::string_view value) {
  out_ << "# " << key << ": " << value << "\n";
}

void HeaderWriter::field(std::string_view key, uint64_t value) {
  out_ << "# " << key << ": " << value << "\n";
}

std::map<std::string, std::string> HeaderReader::read(LineReader& reader,
                                                      std::string& first_body_line,
                                                      bool& has_body) {
  std::map<std::string, std::string> header;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    if (line[0] != '#') {
      first_body_line = line;
      has_body = true;
      return header;
    }
    std::string_view body(line);
    body.remove_prefix(1);
    while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
    const auto colon = body.find(": ");
    if (colon != std::string_view::npos)
      header.emplace(std::string(body.substr(0, colon)), std::string(body.substr(colon + 2)));
  }
  has_body = false;
  return header;
}

void write_score_row(std::ostream& out, const std::string& id, double score,
                     const std::vector<double>& per_class) {
  out << id << '\t' << format_double(score);
  if (!per_class.empty()) {
    out << '\t';
    for (std::size_t i = 0; i < per_class.size(); ++i) {
      if (i) out << ',';
      out << format_double(per_class[i]);
    }
  }
  out << '\n';
}

ScoreFileRow parse_score_row(std::string_view line, const std::string& context) {
  const auto cols = split(line, '\t');
  if (cols.size() < 2 || cols[0].empty())
    raise(Errc::malformed_record, context + ": expected 'id<TAB>score'");
  ScoreFileRow row;
  row.image_id = std::string(cols[0]);
  row.score = parse_double(cols[1], context);
  if (cols.size() >= 3 && !cols[2].empty()) {
    for (const auto part : split(cols[2], ','))
      row.per_class_scores.push_back(parse_double(part, context));
  }
  return row;
}

std::vector<ScoreFileRow> read_score_file(const std::string& path,
                                          std::map<std::string, std::string>* header) {
  LineReader reader(path);
  std::string first;
  bool has_body = false;
  auto hdr = HeaderReader::read(reader, first, has_body);
  if (header) *header = std::move(hdr);
  std::vector<ScoreFileRow> rows;
  if (!has_body) return rows;
  std::string line = first;
  do {
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(parse_score_row(line, path + ":" + std::to_string(reader.line_number())));
  } while (reader.next(line));
  return rows;
}

std::string parent_dir(const std::string& path) {
  const auto slash = path.find_last_of('/');
  if (slash == std::string::npos) return ".";
  if (slash == 0) return "/";
  return path.substr(0, slash);
}

std::string resolve_ref(const std::string& base_dir, const std::string& ref) {
  if (ref.empty() || ref.front() == '/' || base_dir.empty() || base_dir == ".") return ref;
  return base_dir + "/" + ref;
}

}  // namespace alq
