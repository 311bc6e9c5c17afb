#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

std::string alq_bin() {
  const char* bin = std::getenv("ALQ_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "ALQ_BIN must point at the alq binary");
  return bin;
}

int run(const std::string& args) {
  const std::string cmd = alq_bin() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::size_t body_lines(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++count;
  return count;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("alq_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("synth + score + select pipeline") {
  TempDir tmp;
  const auto pool = tmp / "pool";
  REQUIRE(run("synth --out " + pool +
              " --pool-size 30 --classes 2 --map-size 4x4 --ensemble 3 --seed 5") == 0);

  const auto scores = tmp / "scores.tsv";
  REQUIRE(run("score --manifest " + pool + "/manifest.jsonl --out " + scores +
              " --function mi --agg max") == 0);
  CHECK(body_lines(scores) == 30);

  const auto header = slurp(scores);
  CHECK(header.find("# function: mi") != std::string::npos);
  CHECK(header.find("# manifest_digest: fnv1a:") != std::string::npos);

  const auto selection = tmp / "sel.tsv";
  REQUIRE(run("select --scores " + scores + " --out " + selection +
              " --strategy topn --n 10") == 0);
  CHECK(body_lines(selection) == 10);

  // diversity strategies read the pool's ALEM file
  const auto diverse = tmp / "div.tsv";
  REQUIRE(run("select --scores " + scores + " --out " + diverse +
              " --strategy coreset --n 10 --embeddings " + pool + "/embeddings.alem") == 0);
  CHECK(body_lines(diverse) == 10);
}

TEST_CASE("usage errors exit 2, runtime errors exit 1") {
  TempDir tmp;
  CHECK(run("score --manifest nope.jsonl --out x.tsv --function nosuch") == 2);
  CHECK(run("score --manifest does_not_exist.jsonl --out " + (tmp / "x.tsv")) == 1);
  CHECK(run("nosuchcommand") == 2);

  // selection of a diversity strategy without embeddings is a usage error
  const auto scores = tmp / "scores.tsv";
  std::ofstream(scores) << "a\t0.5\nb\t0.25\nc\t0.125\n";
  CHECK(run("select --scores " + scores + " --out " + (tmp / "s.tsv") +
            " --strategy coreset --n 2") == 2);

  // pool smaller than N clamps rather than failing
  REQUIRE(run("select --scores " + scores + " --out " + (tmp / "s.tsv") +
              " --strategy topn --n 5") == 0);
  CHECK(body_lines(tmp / "s.tsv") == 3);
}

TEST_CASE("repeated runs with one config produce identical bytes") {
  TempDir tmp;
  const auto pool_a = tmp / "pa";
  const auto pool_b = tmp / "pb";
  REQUIRE(run("synth --out " + pool_a + " --pool-size 20 --map-size 2x2 --seed 9") == 0);
  REQUIRE(run("synth --out " + pool_b + " --pool-size 20 --map-size 2x2 --seed 9") == 0);
  CHECK(slurp(pool_a + "/manifest.jsonl"s) == slurp(pool_b + "/manifest.jsonl"s));
  CHECK(slurp(pool_a + "/embeddings.alem"s) == slurp(pool_b + "/embeddings.alem"s));

  for (int i = 0; i < 2; ++i) {
    REQUIRE(run("score --manifest " + pool_a + "/manifest.jsonl --out " + tmp /
                ("score" + std::to_string(i) + ".tsv") + " --function entropy --agg avg") == 0);
  }
  CHECK(slurp(tmp / "score0.tsv") == slurp(tmp / "score1.tsv"));

  for (int i = 0; i < 2; ++i) {
    REQUIRE(run("select --scores " + (tmp / "score0.tsv") + " --out " + tmp /
                ("sel" + std::to_string(i) + ".tsv") +
                " --strategy kmpp --n 6 --seed 33 --embeddings " + pool_a +
                "/embeddings.alem") == 0);
  }
  CHECK(slurp(tmp / "sel0.tsv") == slurp(tmp / "sel1.tsv"));
}

TEST_CASE("detection files feed the detent function end to end") {
  TempDir tmp;
  const auto dets = tmp / "boxes.tsv";
  std::ofstream(dets) << "a\t0\t1\t1\t4\t4\t0.5\n"
                      << "a\t1\t2\t2\t4\t4\t0.5\n"
                      << "b\t0\t0\t0\t2\t2\t0.9\n";
  const auto manifest = tmp / "m.jsonl";
  std::ofstream(manifest) << R"({"id":"a","detections_ref":"boxes.tsv"})" << "\n"
                          << R"({"id":"b","detections_ref":"boxes.tsv"})" << "\n";

  const auto scores = tmp / "det_scores.tsv";
  REQUIRE(run("score --manifest " + manifest + " --out " + scores +
              " --function detent --agg sum") == 0);
  CHECK(body_lines(scores) == 2);
  const auto text = slurp(scores);
  // two half-confidence boxes sum to 2 ln 2
  CHECK(text.find("a\t1.3862943611198906") != std::string::npos);
}

TEST_CASE("round-robin selection balances the requested classes") {
  TempDir tmp;
  const auto scores = tmp / "scores.tsv";
  std::ofstream(scores) << "both\t0.9\t0.9,0.9\n"
                        << "c0only\t0.5\t0.8,0.1\n"
                        << "c1only\t0.5\t0.1,0.7\n";
  const auto out = tmp / "rr.tsv";
  REQUIRE(run("select --scores " + scores + " --out " + out +
              " --strategy roundrobin --classes 0,1 --n 3") == 0);
  const auto text = slurp(out);
  CHECK(body_lines(out) == 3);
  CHECK(text.find("1\tboth") != std::string::npos);
  CHECK(text.find("2\tc1only") != std::string::npos);
  CHECK(text.find("3\tc0only") != std::string::npos);
}

TEST_CASE("keep-going reports failures but scores the rest") {
  TempDir tmp;
  const auto manifest = tmp / "m.jsonl";
  std::ofstream(manifest) << R"({"id":"missing","predictions_ref":"nope.alpm"})" << "\n"
                          << R"({"id":"bare"})" << "\n";
  const auto out = tmp / "s.tsv";
  // without keep-going the run fails outright
  CHECK(run("score --manifest " + manifest + " --out " + out + " --function entropy") == 1);
  // with keep-going it still exits nonzero but reports what it could
  CHECK(run("score --manifest " + manifest + " --out " + out +
            " --function entropy --keep-going") == 1);
  CHECK(body_lines(out) == 0);
}

TEST_CASE("worker count accepts the environment override") {
  TempDir tmp;
  const auto pool = tmp / "pool";
  REQUIRE(run("synth --out " + pool + " --pool-size 12 --map-size 2x2 --seed 2") == 0);
  const std::string cmd = "ALQ_WORKERS=3 " + alq_bin() + " score --manifest " + pool +
                          "/manifest.jsonl --out " + (tmp / "s.tsv") +
                          " --function mi > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(body_lines(tmp / "s.tsv") == 12);
}

TEST_CASE("kernel dispatch honors the ALQ_SIMD override") {
  TempDir tmp;
  const auto pool = tmp / "pool";
  REQUIRE(run("synth --out " + pool + " --pool-size 10 --map-size 4x4 --seed 6") == 0);
  const auto scalar_run = "ALQ_SIMD=scalar " + alq_bin() + " score --manifest " + pool +
                          "/manifest.jsonl --out " + (tmp / "scalar.tsv") +
                          " --function mi > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(scalar_run.c_str())) == 0);
  CHECK(slurp(tmp / "scalar.tsv").find("# simd: scalar") != std::string::npos);
  CHECK(body_lines(tmp / "scalar.tsv") == 10);

  const auto bogus = "ALQ_SIMD=bogus " + alq_bin() + " score --manifest " + pool +
                     "/manifest.jsonl --out " + (tmp / "x.tsv") +
                     " --function mi > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(bogus.c_str())) == 2);
}

TEST_CASE("loop subcommand writes a one-record ledger per iteration") {
  TempDir tmp;
  const auto pool = tmp / "pool";
  REQUIRE(run("synth --out " + pool + " --pool-size 40 --classes 2 --no-stacks --seed 3") == 0);

  const auto config = tmp / "loop.cfg";
  std::ofstream(config) << "initial_labeled = 10\n"
                        << "batch_size = 5\n"
                        << "iterations = 1\n"
                        << "function = mi\n"
                        << "aggregation = max\n"
                        << "strategy = topn\n"
                        << "seed = 4\n";

  const auto ledger = tmp / "run.ledger";
  REQUIRE(run("loop --manifest " + pool + "/manifest.jsonl --config " + config + " --out " +
              ledger) == 0);
  CHECK(body_lines(ledger) == 1);
  const auto text = slurp(ledger);
  CHECK(text.find("\"newly_labeled\":5") != std::string::npos);

  // replay is byte-identical
  const auto ledger2 = tmp / "run2.ledger";
  REQUIRE(run("loop --manifest " + pool + "/manifest.jsonl --config " + config + " --out " +
              ledger2) == 0);
  CHECK(slurp(ledger) == slurp(ledger2));

  // the random baseline runs through the same interface
  std::ofstream(config, std::ios::app) << "\n";
  const auto random_cfg = tmp / "loop_random.cfg";
  std::ofstream(random_cfg) << "initial_labeled = 10\n"
                            << "batch_size = 5\n"
                            << "iterations = 1\n"
                            << "strategy = random\n"
                            << "seed = 4\n";
  REQUIRE(run("loop --manifest " + pool + "/manifest.jsonl --config " + random_cfg + " --out " +
              (tmp / "rand.ledger")) == 0);
  CHECK(body_lines(tmp / "rand.ledger") == 1);
}
