// alq: score -> select -> loop pipelines over image pools, plus a synthetic
// pool generator for end-to-end verification. Exit codes: 0 success,
// 1 runtime/IO error, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "alq/error.hpp"
#include "alq/io_util.hpp"
#include "alq/kernels.hpp"
#include "alq/loop.hpp"
#include "alq/manifest.hpp"
#include "alq/scoring.hpp"
#include "alq/selection.hpp"
#include "alq/similarity.hpp"
#include "alq/synth.hpp"
#include "alq/tensor_io.hpp"

namespace {

using namespace alq;

int default_workers() {
  if (const char* env = std::getenv("ALQ_WORKERS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return int(std::min(hw == 0 ? 1u : hw, 8u));
}

ScoreFunction parse_function_flag(const std::string& name) {
  if (name == "entropy") return ScoreFunction::entropy;
  if (name == "mi") return ScoreFunction::mutual_information;
  if (name == "grad") return ScoreFunction::grad;
  if (name == "detent") return ScoreFunction::det_ent;
  raise(Errc::bad_config, "unknown function '" + name + "'");
}

Aggregation parse_agg_flag(const std::string& name) {
  if (name == "max") return Aggregation::max;
  if (name == "avg") return Aggregation::avg;
  if (name == "sum") return Aggregation::sum;
  raise(Errc::bad_config, "unknown aggregation '" + name + "'");
}

GradReduce parse_reduce_flag(const std::string& name) {
  if (name == "none") return GradReduce::none;
  if (name == "maxvar") return GradReduce::max_variance;
  if (name == "meanvar") return GradReduce::mean_variance;
  raise(Errc::bad_config, "unknown grad reduce '" + name + "'");
}

struct ScoreArgs {
  std::string manifest, out;
  std::string function = "mi", agg = "max", reduce = "none";
  double epsilon = 1e-12;
  int workers = default_workers();
  bool keep_going = false;
};

int cmd_score(const ScoreArgs& args) {
  ScoringConfig config;
  config.function = parse_function_flag(args.function);
  config.aggregation = parse_agg_flag(args.agg);
  config.grad_ensemble_reduce = parse_reduce_flag(args.reduce);
  config.epsilon = args.epsilon;
  config.validate();

  ManifestReader reader(args.manifest);
  ScoreOptions options;
  options.workers = std::max(1, args.workers);
  options.keep_going = args.keep_going;
  options.base_dir = reader.base_dir();

  std::ofstream out(args.out, std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + args.out);
  HeaderWriter header(out);
  header.field("alq", "score v1");
  header.field("function", score_function_name(config.function));
  header.field("aggregation", aggregation_name(config.aggregation));
  header.field("grad_reduce", grad_reduce_name(config.grad_ensemble_reduce));
  header.field("epsilon", format_double(config.epsilon));
  header.field("manifest", args.manifest);
  header.field("manifest_digest", file_digest(args.manifest));
  header.field("simd", kernels::active_table().name);

  std::size_t failures = 0;
  score_pool([&](ImageRecord& rec) { return reader.next(rec); }, config, options,
             [&](const ScoredImage& s) { write_score_row(out, s.image_id, s.score, s.per_class_scores); },
             [&](const ScoreFailure& f) {
               ++failures;
               std::cerr << "ERROR\t" << f.image_id << "\t" << errc_name(f.code) << ": "
                         << f.message << "\n";
             });
  out.flush();
  if (!out) raise(Errc::io_error, "short write to " + args.out);
  if (failures > 0) {
    std::cerr << failures << " image(s) failed to score\n";
    return 1;
  }
  return 0;
}

struct SelectArgs {
  std::string scores, out, embeddings;
  std::string strategy = "topn", metric = "euclidean", classes;
  std::size_t n = 0;
  uint64_t seed = 0;
  bool coreset_random_first = false;
};

int cmd_select(const SelectArgs& args) {
  const Strategy strategy = parse_strategy(args.strategy);
  SimilaritySpec spec;
  spec.metric = parse_metric(args.metric);
  if (strategy_needs_embeddings(strategy) && args.embeddings.empty())
    raise(Errc::bad_config,
          std::string(strategy_name(strategy)) + " needs --embeddings");

  const auto rows = read_score_file(args.scores);
  std::vector<ScoredImage> scores;
  scores.reserve(rows.size());
  for (const auto& row : rows) scores.push_back({row.image_id, row.score, row.per_class_scores});

  SelectionBatch batch;
  if (strategy_needs_embeddings(strategy)) {
    const auto pool = EmbeddingPool::from_file(args.embeddings);
    if (strategy == Strategy::kmpp) batch = select_kmpp(pool, scores, args.n, spec, args.seed);
    else if (strategy == Strategy::coreset)
      batch = select_coreset(pool, scores, args.n, spec, args.seed, args.coreset_random_first);
    else
      batch = select_omp(pool, scores, args.n, spec);
  } else if (strategy == Strategy::round_robin) {
    std::vector<uint32_t> classes;
    for (const auto part : split(args.classes, ','))
      if (!part.empty()) classes.push_back(uint32_t(parse_u64(part, "--classes")));
    batch = select_round_robin(scores, classes, args.n);
  } else {
    batch = select_score_only(scores, args.n, strategy, args.seed);
  }

  std::ofstream out(args.out, std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + args.out);
  HeaderWriter header(out);
  header.field("alq", "select v1");
  header.field("strategy", batch.strategy);
  header.field("metric", metric_name(spec.metric));
  header.field("seed", batch.seed);
  header.field("n", uint64_t(args.n));
  header.field("scores", args.scores);
  header.field("scores_digest", file_digest(args.scores));
  if (!args.embeddings.empty()) {
    header.field("embeddings", args.embeddings);
    header.field("embeddings_digest", file_digest(args.embeddings));
  }
  for (std::size_t i = 0; i < batch.selected.size(); ++i) {
    out << (i + 1) << '\t' << batch.selected[i] << '\t'
        << format_double(batch.scores_at_selection[i]) << '\n';
  }
  out.flush();
  if (!out) raise(Errc::io_error, "short write to " + args.out);
  return 0;
}

struct LoopArgs {
  std::string manifest, config, out, embeddings;
};

int cmd_loop(const LoopArgs& args) {
  const LoopConfig config = read_loop_config(args.config);
  const auto records = load_manifest(args.manifest);

  // The loop subcommand drives the synthetic trainer; the pool directory
  // carries the generator parameters next to its manifest.
  const std::string spec_path = parent_dir(args.manifest) + "/synth_spec.cfg";
  const SynthPoolSpec spec = read_synth_spec(spec_path);
  const SynthPool pool = generate_pool(spec);
  if (pool.records.size() != records.size())
    raise(Errc::bad_config, "manifest does not match " + spec_path);
  ToyTrainer trainer(pool);

  std::unique_ptr<EmbeddingPool> embeddings;
  if (strategy_needs_embeddings(config.sampling.strategy)) {
    std::string path = args.embeddings;
    if (path.empty() && !records.empty() && !records.front().embedding_ref.empty())
      path = resolve_ref(parent_dir(args.manifest), records.front().embedding_ref);
    if (path.empty())
      raise(Errc::bad_config, "diversity sampling needs --embeddings or manifest refs");
    embeddings = std::make_unique<EmbeddingPool>(EmbeddingPool::from_file(path));
  }

  const LoopState state = run_loop(records, config, trainer, embeddings.get());
  write_ledger(args.out, state, config,
               {{"manifest", args.manifest},
                {"manifest_digest", file_digest(args.manifest)},
                {"config_digest", file_digest(args.config)}});
  return 0;
}

struct SynthArgs {
  std::string out, map_size = "1x1", prevalence;
  std::size_t pool_size = 1000;
  uint32_t classes = 2, ensemble = 6, redundancy = 1;
  double noise = 0.02;
  uint64_t seed = 1;
  std::size_t stack_pool = 0;
  bool no_stacks = false;
};

int cmd_synth(const SynthArgs& args) {
  SynthPoolSpec spec;
  spec.pool_size = args.pool_size;
  spec.classes = args.classes;
  spec.ensemble = args.ensemble;
  spec.duplicates_per_scene = args.redundancy;
  spec.noise = args.noise;
  spec.seed = args.seed;
  const auto x = args.map_size.find('x');
  if (x == std::string::npos) raise(Errc::bad_config, "--map-size must look like 64x64");
  spec.height = uint32_t(parse_u64(args.map_size.substr(0, x), "--map-size"));
  spec.width = uint32_t(parse_u64(args.map_size.substr(x + 1), "--map-size"));
  if (!args.prevalence.empty()) {
    for (const auto part : split(args.prevalence, ','))
      if (!part.empty()) spec.prevalence.push_back(parse_double(part, "--prevalence"));
  }
  spec.validate();

  const SynthPool pool = generate_pool(spec);
  write_pool_dir(pool, args.out, !args.no_stacks, args.stack_pool);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"active-learning query engine: score, select, loop, synth"};
  app.require_subcommand(1);

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "score a pool's informativeness");
  score->add_option("--manifest", score_args.manifest, "pool manifest (JSONL)")->required();
  score->add_option("--out", score_args.out, "output score file")->required();
  score->add_option("--function", score_args.function, "entropy|mi|grad|detent");
  score->add_option("--agg", score_args.agg, "max|avg|sum");
  score->add_option("--grad-reduce", score_args.reduce, "none|maxvar|meanvar");
  score->add_option("--epsilon", score_args.epsilon, "log clamp epsilon");
  score->add_option("--workers", score_args.workers, "parallel scoring workers");
  score->add_flag("--keep-going", score_args.keep_going, "report per-image errors and continue");

  SelectArgs select_args;
  auto* select = app.add_subcommand("select", "select a labeling batch from scores");
  select->add_option("--scores", select_args.scores, "score file")->required();
  select->add_option("--out", select_args.out, "output selection file")->required();
  select->add_option("--strategy", select_args.strategy,
                     "topn|topthird|tophalfbottomhalf|bottomn|random|kmpp|coreset|omp|roundrobin");
  select->add_option("--n", select_args.n, "batch size")->required();
  select->add_option("--embeddings", select_args.embeddings, "ALEM embedding file");
  select->add_option("--metric", select_args.metric, "euclidean|cosine");
  select->add_option("--seed", select_args.seed, "RNG seed");
  select->add_option("--classes", select_args.classes, "round-robin class indices, e.g. 0,1");
  select->add_flag("--coreset-random-first", select_args.coreset_random_first,
                   "seeded-uniform core-set first pick");

  LoopArgs loop_args;
  auto* loop = app.add_subcommand("loop", "run the active-learning loop (synthetic trainer)");
  loop->add_option("--manifest", loop_args.manifest, "pool manifest (from synth)")->required();
  loop->add_option("--config", loop_args.config, "loop config (key = value)")->required();
  loop->add_option("--out", loop_args.out, "output ledger file")->required();
  loop->add_option("--embeddings", loop_args.embeddings, "ALEM file for diversity sampling");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic pool directory");
  synth->add_option("--out", synth_args.out, "output pool directory")->required();
  synth->add_option("--pool-size", synth_args.pool_size, "number of images");
  synth->add_option("--classes", synth_args.classes, "number of classes");
  synth->add_option("--map-size", synth_args.map_size, "HxW of prediction maps");
  synth->add_option("--ensemble", synth_args.ensemble, "ensemble members");
  synth->add_option("--prevalence", synth_args.prevalence, "per-class prevalence, e.g. 0.5,0.05");
  synth->add_option("--redundancy", synth_args.redundancy, "duplicates per scene");
  synth->add_option("--noise", synth_args.noise, "embedding noise level");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--stack-pool", synth_args.stack_pool,
                    "cap on distinct stack files (benchmark pools; 0 = per-image)");
  synth->add_flag("--no-stacks", synth_args.no_stacks, "skip ALPM stack emission");

  try {
    app.parse(argc, argv);
    if (*score) return cmd_score(score_args);
    if (*select) return cmd_select(select_args);
    if (*loop) return cmd_loop(loop_args);
    if (*synth) return cmd_synth(synth_args);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const alq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::bad_config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
