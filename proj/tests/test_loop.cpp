#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "alq/error.hpp"
#include "alq/loop.hpp"

using namespace alq;
namespace fs = std::filesystem;

namespace {

// Scripted stand-in: per-image probabilities are fixed up front, so entropy
// ranks images deterministically and the whole run can be traced by hand.
struct ScriptedTrainer : TrainerAdapter {
  std::map<std::string, double> probs;
  std::vector<std::vector<std::string>> train_calls;
  std::vector<std::vector<std::string>> predict_calls;

  ModelHandle train(std::span<const std::string> ids) override {
    train_calls.emplace_back(ids.begin(), ids.end());
    return ModelHandle{train_calls.size() - 1};
  }

  std::vector<PredictionStack> predict(ModelHandle,
                                       std::span<const std::string> ids) override {
    predict_calls.emplace_back(ids.begin(), ids.end());
    std::vector<PredictionStack> out;
    for (const auto& id : ids)
      out.emplace_back(id, 1, 1, 1, 1, std::vector<float>{float(probs.at(id))});
    return out;
  }

  MetricRecord evaluate(ModelHandle model, std::span<const std::string>) override {
    return {{"model", double(model.value)}};
  }
};

std::vector<ImageRecord> ten_image_pool() {
  std::vector<ImageRecord> pool(10);
  for (int i = 0; i < 10; ++i) pool[i].id = "img" + std::to_string(i);
  return pool;
}

ScriptedTrainer scripted() {
  ScriptedTrainer trainer;
  // entropy increases with p on [0, 0.5]: img9 is always the most uncertain
  for (int i = 0; i < 10; ++i)
    trainer.probs["img" + std::to_string(i)] = 0.05 * (i + 1);
  return trainer;
}

LoopConfig base_config() {
  LoopConfig config;
  config.initial_labeled_ids = {"img0"};
  config.batch_size = 2;
  config.iterations = 3;
  config.scoring.function = ScoreFunction::entropy;
  config.scoring.aggregation = Aggregation::max;
  config.sampling.strategy = Strategy::top_n;
  config.seed = 7;
  return config;
}

}  // namespace

TEST_CASE("hand-traced run over the unlabeled pool") {
  auto trainer = scripted();
  const auto pool = ten_image_pool();
  auto config = base_config();

  const auto state = run_loop(pool, config, trainer);

  REQUIRE(state.ledger.size() == 3);
  CHECK(state.ledger[0].selected_ids == std::vector<std::string>{"img9", "img8"});
  CHECK(state.ledger[1].selected_ids == std::vector<std::string>{"img7", "img6"});
  CHECK(state.ledger[2].selected_ids == std::vector<std::string>{"img5", "img4"});
  for (const auto& rec : state.ledger) CHECK(rec.newly_labeled_count == 2);
  CHECK(state.ledger[0].unique_image_count == 3);
  CHECK(state.ledger[1].unique_image_count == 5);
  CHECK(state.ledger[2].unique_image_count == 7);

  // training list grows by exactly the fresh picks
  CHECK(state.training_list ==
        std::vector<std::string>{"img0", "img9", "img8", "img7", "img6", "img5", "img4"});

  // disjointness and the exact-growth property
  for (const auto& id : state.labeled_ids) CHECK(state.unlabeled_ids.count(id) == 0);
  CHECK(state.labeled_ids.size() == 1 + 3 * 2);

  // scoring only ever saw unlabeled ids
  REQUIRE(trainer.predict_calls.size() == 3);
  CHECK(trainer.predict_calls[0].size() == 9);
  for (const auto& id : trainer.predict_calls[1]) {
    CHECK(id != "img9");
    CHECK(id != "img8");
    CHECK(id != "img0");
  }
}

TEST_CASE("hand-traced run over the union keeps re-selecting the hot images") {
  auto trainer = scripted();
  const auto pool = ten_image_pool();
  auto config = base_config();
  config.selection_pool = SelectionPool::union_labeled_unlabeled;

  const auto state = run_loop(pool, config, trainer);

  REQUIRE(state.ledger.size() == 3);
  for (const auto& rec : state.ledger)
    CHECK(rec.selected_ids == std::vector<std::string>{"img9", "img8"});
  CHECK(state.ledger[0].newly_labeled_count == 2);
  CHECK(state.ledger[1].newly_labeled_count == 0);
  CHECK(state.ledger[2].newly_labeled_count == 0);
  for (const auto& rec : state.ledger) CHECK(rec.unique_image_count == 3);

  // repeats are passed to the trainer as duplicate entries
  CHECK(state.training_list ==
        std::vector<std::string>{"img0", "img9", "img8", "img9", "img8", "img9", "img8"});
  REQUIRE(trainer.train_calls.size() == 3);
  CHECK(trainer.train_calls[0].size() == 1);
  CHECK(trainer.train_calls[1].size() == 3);
  CHECK(trainer.train_calls[2].size() == 5);

  // union runs predict over the whole pool
  CHECK(trainer.predict_calls[0].size() == 10);

  // dedup accounting: cost + repeats = N, cumulative cost = unique - initial
  const auto dedup = dedup_accounting(state.ledger);
  REQUIRE(dedup.size() == 3);
  CHECK(dedup[0].labeling_cost == 2);
  CHECK(dedup[0].training_repeats == 0);
  CHECK(dedup[1].labeling_cost == 0);
  CHECK(dedup[1].training_repeats == 2);
  CHECK(dedup[2].labeling_cost == 0);
  CHECK(dedup[2].training_repeats == 2);
  std::size_t cumulative_cost = 0;
  for (const auto& d : dedup) {
    CHECK(d.labeling_cost + d.training_repeats == config.batch_size);
    cumulative_cost += d.labeling_cost;
  }
  CHECK(cumulative_cost + config.initial_labeled_ids.size() ==
        state.ledger.back().unique_image_count);
}

TEST_CASE("cumulative unique never exceeds cumulative selected") {
  auto trainer = scripted();
  auto config = base_config();
  config.selection_pool = SelectionPool::union_labeled_unlabeled;
  const auto state = run_loop(ten_image_pool(), config, trainer);
  std::size_t cumulative_selected = config.initial_labeled_ids.size();
  for (const auto& rec : state.ledger) {
    cumulative_selected += rec.selected_ids.size();
    CHECK(rec.unique_image_count <= cumulative_selected);
    CHECK(rec.newly_labeled_count <= rec.selected_ids.size());
  }
}

TEST_CASE("single exhausting iteration labels the whole pool") {
  auto trainer = scripted();
  auto config = base_config();
  config.iterations = 1;
  config.batch_size = 9;  // the remainder after img0
  const auto state = run_loop(ten_image_pool(), config, trainer);
  CHECK(state.labeled_ids.size() == 10);
  CHECK(state.unlabeled_ids.empty());
  CHECK(state.ledger[0].unique_image_count == 10);
}

TEST_CASE("over-draining the pool raises PoolExhausted") {
  auto trainer = scripted();
  auto config = base_config();
  config.batch_size = 4;  // 9 unlabeled, 3 iterations of 4 cannot fit
  try {
    run_loop(ten_image_pool(), config, trainer);
    FAIL("expected exhaustion");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::pool_exhausted);
  }
}

TEST_CASE("seeded initial labeled set is reproducible and counted") {
  auto trainer = scripted();
  auto config = base_config();
  config.initial_labeled_ids.clear();
  config.initial_labeled_count = 4;
  config.iterations = 1;
  const auto a = run_loop(ten_image_pool(), config, trainer);
  auto trainer2 = scripted();
  const auto b = run_loop(ten_image_pool(), config, trainer2);
  CHECK(a.training_list == b.training_list);
  CHECK(a.ledger[0].unique_image_count == 4 + 2);
}

TEST_CASE("ledger replay writes byte-identical files") {
  const auto dir = fs::temp_directory_path() / "alq_loop_test";
  fs::create_directories(dir);
  auto config = base_config();
  config.selection_pool = SelectionPool::union_labeled_unlabeled;

  for (const char* name : {"a.ledger", "b.ledger"}) {
    auto trainer = scripted();
    const auto state = run_loop(ten_image_pool(), config, trainer);
    write_ledger((dir / name).string(), state, config);
  }
  std::ifstream fa(dir / "a.ledger"), fb(dir / "b.ledger");
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(sa.find("\"cumulative_unique\":3") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("loop config validation") {
  LoopConfig config;
  config.batch_size = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config.batch_size = 1;
  config.iterations = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config.iterations = 1;
  config.scoring.function = ScoreFunction::det_ent;
  config.scoring.aggregation = Aggregation::sum;
  CHECK_THROWS_AS(config.validate(), Error);
}
