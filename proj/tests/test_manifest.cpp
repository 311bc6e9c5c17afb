#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "alq/error.hpp"
#include "alq/manifest.hpp"

using namespace alq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("alq_man_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("empty manifest loads as an empty pool") {
  TempDir tmp;
  const auto path = tmp.file("m.jsonl");
  std::ofstream(path).close();
  CHECK(load_manifest(path).empty());
}

TEST_CASE("records load in file order") {
  TempDir tmp;
  const auto path = tmp.file("m.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"b","labeled":false})" << "\n";
    out << R"({"id":"a","sequence_id":"s1","class_tags":["car","person"],"predictions_ref":"a.alpm"})"
        << "\n";
    out << R"({"id":"c","labeled":true,"embedding_ref":"pool.alem"})" << "\n";
  }
  const auto records = load_manifest(path);
  REQUIRE(records.size() == 3);
  CHECK(records[0].id == "b");
  CHECK(records[1].id == "a");
  CHECK(records[1].sequence_id == "s1");
  CHECK(records[1].class_tags == std::vector<std::string>{"car", "person"});
  CHECK(records[1].predictions_ref == "a.alpm");
  CHECK(records[2].labeled);
  CHECK(records[2].embedding_ref == "pool.alem");
}

TEST_CASE("duplicate ids are rejected") {
  TempDir tmp;
  const auto path = tmp.file("m.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"img7"})" << "\n" << R"({"id":"img8"})" << "\n" << R"({"id":"img7"})" << "\n";
  }
  try {
    load_manifest(path);
    FAIL("expected duplicate id");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::duplicate_id);
    CHECK(std::string(e.what()).find("img7") != std::string::npos);
  }
}

TEST_CASE("malformed lines report their line number") {
  TempDir tmp;
  const auto path = tmp.file("m.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"a"})" << "\n" << "this is not json\n";
  }
  try {
    load_manifest(path);
    FAIL("expected malformed record");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::malformed_record);
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }

  // ids that would break tab-separated outputs are rejected too
  {
    std::ofstream out(path);
    out << R"({"id":"has space"})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), Error);
}

TEST_CASE("manifest write/load round-trip is record exact") {
  TempDir tmp;
  const auto path = tmp.file("m.jsonl");
  std::vector<ImageRecord> records(5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].id = "img" + std::to_string(i);
    records[i].sequence_id = i % 2 ? "even" : "odd";
    records[i].labeled = i == 2;
    if (i != 3) records[i].predictions_ref = "stacks/" + records[i].id + ".alpm";
    records[i].embedding_ref = "pool.alem";
    if (i == 4) records[i].class_tags = {"bicycle", "person"};
  }
  write_manifest(path, records);
  CHECK(load_manifest(path) == records);

  // a second write of the loaded records is byte-identical
  const auto path2 = tmp.file("m2.jsonl");
  write_manifest(path2, load_manifest(path));
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("streaming reader yields the same records as the full loader") {
  TempDir tmp;
  const auto path = tmp.file("m.jsonl");
  std::vector<ImageRecord> records(100);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].id = "img" + std::to_string(i);
  write_manifest(path, records);

  ManifestReader reader(path);
  ImageRecord rec;
  std::vector<ImageRecord> streamed;
  while (reader.next(rec)) streamed.push_back(rec);
  CHECK(streamed == load_manifest(path));
  CHECK(reader.base_dir() == tmp.path.string());
}
