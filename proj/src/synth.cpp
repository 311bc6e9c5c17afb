#include "alq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <Eigen/Dense>

#include "alq/error.hpp"
#include "alq/io_util.hpp"
#include "alq/manifest.hpp"
#include "alq/rng.hpp"
#include "alq/tensor_io.hpp"

namespace alq {

namespace {
constexpr uint32_t kD = SynthPoolSpec::kLatentDim;
}

std::vector<double> SynthPoolSpec::effective_prevalence() const {
  if (!prevalence.empty()) return prevalence;
  return std::vector<double>(classes, 0.5);
}

void SynthPoolSpec::validate() const {
  if (pool_size == 0) raise(Errc::invalid_spec, "pool_size must be >= 1");
  if (classes == 0) raise(Errc::invalid_spec, "classes must be >= 1");
  if (height == 0 || width == 0) raise(Errc::invalid_spec, "map size must be >= 1x1");
  if (ensemble == 0) raise(Errc::invalid_spec, "ensemble must be >= 1");
  if (duplicates_per_scene == 0) raise(Errc::invalid_spec, "duplicates_per_scene must be >= 1");
  if (!(noise >= 0)) raise(Errc::invalid_spec, "noise must be >= 0");
  if (!prevalence.empty() && prevalence.size() != classes)
    raise(Errc::invalid_spec, "prevalence must have one entry per class");
  if (!class_signal_per_class.empty() && class_signal_per_class.size() != classes)
    raise(Errc::invalid_spec, "class_signal_per_class must have one entry per class");
  for (const double p : effective_prevalence())
    if (!(p > 0.0) || !(p <= 1.0)) raise(Errc::invalid_spec, "prevalence must lie in (0,1]");
}

namespace {

// Random orthonormal class directions (Gram-Schmidt over gaussian draws, up
// to the latent dimension); orthogonality keeps per-class difficulty stable
// across seeds.
std::vector<std::vector<double>> class_directions(const SynthPoolSpec& spec) {
  Rng rng(derive_seed(spec.seed, "synth/classdirs"));
  std::vector<std::vector<double>> dirs(spec.classes, std::vector<double>(kD));
  for (std::size_t c = 0; c < dirs.size(); ++c) {
    auto& dir = dirs[c];
    for (int attempt = 0; attempt < 50; ++attempt) {
      for (auto& v : dir) v = rng.gaussian();
      for (std::size_t prev = 0; prev < std::min<std::size_t>(c, kD); ++prev) {
        double proj = 0;
        for (uint32_t d = 0; d < kD; ++d) proj += dir[d] * dirs[prev][d];
        for (uint32_t d = 0; d < kD; ++d) dir[d] -= proj * dirs[prev][d];
      }
      double norm2 = 0;
      for (const auto v : dir) norm2 += v * v;
      if (norm2 > 1e-6) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : dir) v *= inv;
        break;
      }
    }
  }
  return dirs;
}

std::string padded_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%08zu", prefix, i);
  return buf;
}

}  // namespace

SynthPool generate_pool(const SynthPoolSpec& spec) {
  spec.validate();
  const auto prevalence = spec.effective_prevalence();
  const auto dirs = class_directions(spec);
  const std::size_t scenes =
      (spec.pool_size + spec.duplicates_per_scene - 1) / spec.duplicates_per_scene;

  Rng rng(derive_seed(spec.seed, "synth/pool"));
  SynthPool pool;
  pool.spec = spec;
  pool.records.reserve(spec.pool_size);
  pool.embeddings.reserve(spec.pool_size);

  // Scene centers are kept apart from each other by 5x the worst-case
  // intra-scene spread so near-duplicate clusters stay separable; the O(S^2)
  // check is skipped on pools past desk scale.
  const double intra_radius =
      std::sqrt(double(kD)) * (spec.perturbation + 4.0 * spec.noise);
  const double min_separation = 5.0 * 2.0 * intra_radius;
  const bool enforce_separation = scenes <= 4096;

  std::vector<std::vector<double>> centers;
  centers.reserve(scenes);
  std::vector<std::vector<std::string>> scene_tags(scenes);

  for (std::size_t s = 0; s < scenes; ++s) {
    std::vector<double> center(kD);
    std::vector<uint32_t> present;
    for (int attempt = 0; attempt < 50; ++attempt) {
      for (auto& v : center) v = spec.scene_spread * rng.gaussian();
      present.clear();
      for (uint32_t c = 0; c < spec.classes; ++c)
        if (rng.uniform() < prevalence[c]) present.push_back(c);
      for (const uint32_t c : present)
        for (uint32_t d = 0; d < kD; ++d) center[d] += spec.signal_for(c) * dirs[c][d];
      bool ok = true;
      if (enforce_separation) {
        for (const auto& other : centers) {
          double dist2 = 0;
          for (uint32_t d = 0; d < kD; ++d) {
            const double diff = center[d] - other[d];
            dist2 += diff * diff;
          }
          if (dist2 < min_separation * min_separation) {
            ok = false;
            break;
          }
        }
      }
      if (ok) break;
      // when the geometry cannot host another well-separated scene the last
      // draw stands; the margin guarantee is best effort past that point
    }
    scene_tags[s].clear();
    for (const uint32_t c : present) scene_tags[s].push_back(spec.class_tag(c));
    centers.push_back(center);
  }

  for (std::size_t i = 0; i < spec.pool_size; ++i) {
    const std::size_t s = i / spec.duplicates_per_scene;
    ImageRecord rec;
    rec.id = padded_id("img", i);
    rec.sequence_id = padded_id("scene", s);
    rec.class_tags = scene_tags[s];
    pool.records.push_back(std::move(rec));

    Embedding emb;
    emb.image_id = pool.records.back().id;
    emb.vector.resize(kD);
    for (uint32_t d = 0; d < kD; ++d) {
      const double jitter = spec.perturbation * (2.0 * rng.uniform() - 1.0);
      emb.vector[d] = float(centers[s][d] + jitter + spec.noise * rng.gaussian());
    }
    pool.embeddings.push_back(std::move(emb));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Toy trainer
// ---------------------------------------------------------------------------

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct TestItem {
  std::string id;
  std::vector<float> embedding;
  std::vector<bool> positives;  // per class
};

struct FittedModel {
  // weights[c * E + e] is a (D+1)-vector (bias last); empty when degenerate
  std::vector<Eigen::VectorXd> weights;
  std::vector<double> class_prior;
  std::vector<bool> degenerate;
};

Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double l2,
                             int iterations) {
  const Eigen::Index d = x.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd z = x * w;
    Eigen::VectorXd p = z.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd grad = x.transpose() * (p - y) + l2 * w;
    Eigen::VectorXd s = p.array() * (1.0 - p.array()) + 1e-6;
    Eigen::MatrixXd hess = x.transpose() * s.asDiagonal() * x;
    hess.diagonal().array() += l2;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    w -= step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return w;
}

}  // namespace

struct ToyTrainer::Impl {
  const SynthPool& pool;
  ToyTrainerOptions options;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<TestItem> held_out;
  std::vector<FittedModel> models;
  uint64_t train_calls = 0;

  Impl(const SynthPool& p, ToyTrainerOptions opts) : pool(p), options(opts) {
    for (std::size_t i = 0; i < pool.records.size(); ++i)
      index.emplace(pool.records[i].id, i);
    build_test_split();
  }

  // Held-out test items: fresh draws from the same latent process
  // (scene structure is irrelevant for evaluation, so redundancy is 1).
  void build_test_split() {
    const auto& spec = pool.spec;
    const auto prevalence = spec.effective_prevalence();
    const auto dirs = class_directions_cached();
    Rng rng(derive_seed(spec.seed, "synth/test"));
    held_out.reserve(options.test_size);
    for (std::size_t i = 0; i < options.test_size; ++i) {
      TestItem item;
      item.id = padded_id("test", i);
      item.positives.assign(spec.classes, false);
      std::vector<double> center(kD);
      for (auto& v : center) v = spec.scene_spread * rng.gaussian();
      for (uint32_t c = 0; c < spec.classes; ++c) {
        if (rng.uniform() < prevalence[c]) {
          item.positives[c] = true;
          for (uint32_t d = 0; d < kD; ++d) center[d] += spec.signal_for(c) * dirs[c][d];
        }
      }
      item.embedding.resize(kD);
      for (uint32_t d = 0; d < kD; ++d) {
        const double jitter = spec.perturbation * (2.0 * rng.uniform() - 1.0);
        item.embedding[d] = float(center[d] + jitter + spec.noise * rng.gaussian());
      }
      held_out.push_back(std::move(item));
    }
  }

  const std::vector<std::vector<double>>& class_directions_cached() {
    if (dirs_.empty()) dirs_ = class_directions(pool.spec);
    return dirs_;
  }

  const float* features_of(const std::string& id) const {
    const auto it = index.find(id);
    if (it != index.end()) return pool.embeddings[it->second].vector.data();
    return nullptr;
  }

  bool tag_positive(const std::string& id, uint32_t cls) const {
    const auto it = index.find(id);
    const auto& tags = pool.records[it->second].class_tags;
    return std::find(tags.begin(), tags.end(), pool.spec.class_tag(cls)) != tags.end();
  }

  double member_probability(const FittedModel& model, uint32_t cls, uint32_t member,
                            const float* features) const {
    if (model.degenerate[cls]) return model.class_prior[cls];
    const auto& w = model.weights[cls * pool.spec.ensemble + member];
    double z = w[kD];
    for (uint32_t d = 0; d < kD; ++d) z += w[d] * double(features[d]);
    return sigmoid(z);
  }

private:
  std::vector<std::vector<double>> dirs_;
};

ToyTrainer::ToyTrainer(const SynthPool& pool, ToyTrainerOptions options)
    : impl_(std::make_unique<Impl>(pool, options)) {}

ToyTrainer::~ToyTrainer() = default;

ModelHandle ToyTrainer::train(std::span<const std::string> training_ids) {
  auto& im = *impl_;
  const auto& spec = im.pool.spec;
  const std::size_t n = training_ids.size();
  const Eigen::Index ni = Eigen::Index(n);

  Eigen::MatrixXd x(ni, Eigen::Index(kD + 1));
  for (std::size_t i = 0; i < n; ++i) {
    const float* f = im.features_of(training_ids[i]);
    if (!f) raise(Errc::bad_config, "training id \"" + training_ids[i] + "\" not in pool");
    for (uint32_t d = 0; d < kD; ++d) x(Eigen::Index(i), d) = double(f[d]);
    x(Eigen::Index(i), kD) = 1.0;
  }

  FittedModel model;
  model.weights.resize(std::size_t(spec.classes) * spec.ensemble);
  model.class_prior.assign(spec.classes, 0.0);
  model.degenerate.assign(spec.classes, false);
  const auto prevalence = spec.effective_prevalence();

  Rng rng(derive_seed(spec.seed, "trainer/train/" + std::to_string(im.train_calls++)));
  for (uint32_t c = 0; c < spec.classes; ++c) {
    Eigen::VectorXd y(ni);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pos = im.tag_positive(training_ids[i], c);
      positives += pos;
      y(Eigen::Index(i)) = pos ? 1.0 : 0.0;
    }
    if (n == 0 || positives == 0 || positives == n) {
      // single-class labels: fall back to a constant prior for this class
      model.degenerate[c] = true;
      model.class_prior[c] =
          n == 0 ? prevalence[c]
                 : std::clamp(double(positives) / double(n), 1.0 / double(n + 2),
                              1.0 - 1.0 / double(n + 2));
      continue;
    }
    for (uint32_t e = 0; e < spec.ensemble; ++e) {
      if (!im.options.bootstrap) {
        model.weights[c * spec.ensemble + e] =
            e == 0 ? fit_logistic(x, y, im.options.l2, im.options.fit_iterations)
                   : model.weights[c * spec.ensemble];
        continue;
      }
      Eigen::MatrixXd xb(ni, Eigen::Index(kD + 1));
      Eigen::VectorXd yb(ni);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rng.uniform_index(n);
        xb.row(Eigen::Index(i)) = x.row(Eigen::Index(j));
        yb(Eigen::Index(i)) = y(Eigen::Index(j));
      }
      // a resample can lose the minority class; refit on the full set then
      if (yb.sum() <= 0.0 || yb.sum() >= double(n))
        model.weights[c * spec.ensemble + e] =
            fit_logistic(x, y, im.options.l2, im.options.fit_iterations);
      else
        model.weights[c * spec.ensemble + e] =
            fit_logistic(xb, yb, im.options.l2, im.options.fit_iterations);
    }
  }
  im.models.push_back(std::move(model));
  return ModelHandle{im.models.size() - 1};
}

std::vector<PredictionStack> ToyTrainer::predict(ModelHandle handle,
                                                 std::span<const std::string> ids) {
  auto& im = *impl_;
  const auto& spec = im.pool.spec;
  if (handle.value >= im.models.size()) raise(Errc::bad_config, "unknown model handle");
  const auto& model = im.models[handle.value];
  const std::size_t cells = std::size_t(spec.height) * spec.width;

  std::vector<PredictionStack> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const float* f = im.features_of(id);
    if (!f) {
      // explicit test ids resolve against the held-out split
      for (const auto& item : im.held_out)
        if (item.id == id) {
          f = item.embedding.data();
          break;
        }
      if (!f) raise(Errc::bad_config, "predict id \"" + id + "\" not in pool");
    }
    std::vector<float> probs(std::size_t(spec.ensemble) * spec.classes * cells);
    for (uint32_t e = 0; e < spec.ensemble; ++e) {
      for (uint32_t c = 0; c < spec.classes; ++c) {
        const double p = im.member_probability(model, c, e, f);
        float* map = probs.data() + (std::size_t(e) * spec.classes + c) * cells;
        if (cells == 1) {
          map[0] = float(p);
        } else {
          // smooth separable wobble keeps max and avg aggregation distinct
          uint64_t h = derive_seed(spec.seed, "map/" + id);
          h = splitmix64(h) + 0x9e3779b97f4a7c15ULL * (uint64_t(e) * spec.classes + c);
          Rng map_rng(h);
          const double fy = 1.0 + map_rng.uniform_index(3);
          const double fx = 1.0 + map_rng.uniform_index(3);
          const double py = map_rng.uniform() * 6.283185307179586;
          const double px = map_rng.uniform() * 6.283185307179586;
          const double amp = im.options.map_wobble * 2.0 * std::min(p, 1.0 - p);
          std::vector<double> uy(spec.height), ux(spec.width);
          for (uint32_t hh = 0; hh < spec.height; ++hh)
            uy[hh] = std::sin(6.283185307179586 * fy * hh / spec.height + py);
          for (uint32_t ww = 0; ww < spec.width; ++ww)
            ux[ww] = std::sin(6.283185307179586 * fx * ww / spec.width + px);
          for (uint32_t hh = 0; hh < spec.height; ++hh)
            for (uint32_t ww = 0; ww < spec.width; ++ww)
              map[hh * spec.width + ww] =
                  float(std::clamp(p + amp * uy[hh] * ux[ww], 0.0, 1.0));
        }
      }
    }
    out.emplace_back(id, spec.ensemble, spec.classes, spec.height, spec.width, std::move(probs));
  }
  return out;
}

MetricRecord ToyTrainer::evaluate(ModelHandle handle, std::span<const std::string> test_ids) {
  auto& im = *impl_;
  const auto& spec = im.pool.spec;
  if (handle.value >= im.models.size()) raise(Errc::bad_config, "unknown model handle");
  const auto& model = im.models[handle.value];

  // Assemble the evaluation set: explicit ids (pool ground truth) or the
  // internal held-out split.
  struct EvalItem {
    const float* features;
    std::vector<bool> positives;
    const std::string* id;
  };
  std::vector<EvalItem> items;
  if (!test_ids.empty()) {
    for (const auto& id : test_ids) {
      const float* f = im.features_of(id);
      if (!f) raise(Errc::bad_config, "test id \"" + id + "\" not in pool");
      EvalItem item{f, {}, &id};
      item.positives.resize(spec.classes);
      for (uint32_t c = 0; c < spec.classes; ++c) item.positives[c] = im.tag_positive(id, c);
      items.push_back(std::move(item));
    }
  } else {
    for (const auto& t : im.held_out)
      items.push_back({t.embedding.data(), {t.positives.begin(), t.positives.end()}, &t.id});
  }

  MetricRecord metrics;
  double ap_sum = 0;
  std::size_t ap_count = 0;
  for (uint32_t c = 0; c < spec.classes; ++c) {
    std::vector<std::pair<double, std::size_t>> ranked(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      double mean = 0;
      for (uint32_t e = 0; e < spec.ensemble; ++e)
        mean += im.member_probability(model, c, e, items[i].features);
      ranked[i] = {mean / spec.ensemble, i};
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return *items[a.second].id < *items[b.second].id;
    });
    std::size_t positives = 0;
    for (const auto& item : items) positives += item.positives[c];
    if (positives == 0) continue;  // AP undefined without positives
    std::size_t hits = 0;
    double ap = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      if (items[ranked[k].second].positives[c]) {
        ++hits;
        ap += double(hits) / double(k + 1);
      }
    }
    ap /= double(positives);
    metrics["ap_" + spec.class_tag(c)] = ap;
    ap_sum += ap;
    ++ap_count;
  }
  metrics["mean_ap"] = ap_count ? ap_sum / double(ap_count) : 0.0;
  metrics["test_items"] = double(items.size());
  return metrics;
}

// ---------------------------------------------------------------------------
// Pool directory
// ---------------------------------------------------------------------------

void write_synth_spec(const std::string& path, const SynthPoolSpec& spec) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(Errc::io_error, "cannot write " + path);
  out << "pool_size = " << spec.pool_size << "\n";
  out << "classes = " << spec.classes << "\n";
  out << "height = " << spec.height << "\n";
  out << "width = " << spec.width << "\n";
  out << "ensemble = " << spec.ensemble << "\n";
  out << "prevalence =";
  for (const double p : spec.effective_prevalence()) out << " " << format_double(p);
  out << "\n";
  out << "duplicates_per_scene = " << spec.duplicates_per_scene << "\n";
  out << "noise = " << format_double(spec.noise) << "\n";
  out << "seed = " << spec.seed << "\n";
  out << "class_signal = " << format_double(spec.class_signal) << "\n";
  if (!spec.class_signal_per_class.empty()) {
    out << "class_signal_per_class =";
    for (const double s : spec.class_signal_per_class) out << " " << format_double(s);
    out << "\n";
  }
  out << "scene_spread = " << format_double(spec.scene_spread) << "\n";
  out << "perturbation = " << format_double(spec.perturbation) << "\n";
  if (!out) raise(Errc::io_error, "short write to " + path);
}

SynthPoolSpec read_synth_spec(const std::string& path) {
  LineReader reader(path);
  SynthPoolSpec spec;
  spec.prevalence.clear();
  std::string line;
  while (reader.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos)
      raise(Errc::malformed_record,
            path + ":" + std::to_string(reader.line_number()) + ": expected 'key = value'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    const std::string context = path + ":" + std::to_string(reader.line_number());
    if (key == "pool_size") spec.pool_size = parse_u64(value, context);
    else if (key == "classes") spec.classes = uint32_t(parse_u64(value, context));
    else if (key == "height") spec.height = uint32_t(parse_u64(value, context));
    else if (key == "width") spec.width = uint32_t(parse_u64(value, context));
    else if (key == "ensemble") spec.ensemble = uint32_t(parse_u64(value, context));
    else if (key == "duplicates_per_scene")
      spec.duplicates_per_scene = uint32_t(parse_u64(value, context));
    else if (key == "noise") spec.noise = parse_double(value, context);
    else if (key == "seed") spec.seed = parse_u64(value, context);
    else if (key == "class_signal") spec.class_signal = parse_double(value, context);
    else if (key == "class_signal_per_class") {
      for (const auto part : split(value, ' '))
        if (!part.empty()) spec.class_signal_per_class.push_back(parse_double(part, context));
    }
    else if (key == "scene_spread") spec.scene_spread = parse_double(value, context);
    else if (key == "perturbation") spec.perturbation = parse_double(value, context);
    else if (key == "prevalence") {
      for (const auto part : split(value, ' '))
        if (!part.empty()) spec.prevalence.push_back(parse_double(part, context));
    }
  }
  spec.validate();
  return spec;
}

void write_pool_dir(const SynthPool& pool, const std::string& dir, bool emit_stacks,
                    std::size_t stack_pool_cap) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_synth_spec(dir + "/synth_spec.cfg", pool.spec);
  write_embeddings(dir + "/embeddings.alem", pool.embeddings);

  std::vector<ImageRecord> records = pool.records;
  for (auto& rec : records) rec.embedding_ref = "embeddings.alem";

  if (emit_stacks) {
    fs::create_directories(dir + "/stacks");
    // ensemble trained on a seeded random subset of the pool's ground truth
    const std::size_t train_count =
        std::min(pool.records.size(), std::max<std::size_t>(200, pool.records.size() / 20));
    std::vector<std::string> ids;
    ids.reserve(pool.records.size());
    for (const auto& rec : pool.records) ids.push_back(rec.id);
    Rng rng(derive_seed(pool.spec.seed, "synth/stacktrain"));
    for (std::size_t i = 0; i < train_count; ++i) {
      const std::size_t j = i + rng.uniform_index(ids.size() - i);
      std::swap(ids[i], ids[j]);
    }
    std::vector<std::string> train_ids(ids.begin(), ids.begin() + std::ptrdiff_t(train_count));
    std::sort(train_ids.begin(), train_ids.end());

    ToyTrainer trainer(pool);
    const ModelHandle model = trainer.train(train_ids);

    const std::size_t distinct =
        stack_pool_cap > 0 ? std::min(stack_pool_cap, records.size()) : records.size();
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < distinct; start += kChunk) {
      const std::size_t count = std::min(kChunk, distinct - start);
      std::vector<std::string> chunk;
      chunk.reserve(count);
      for (std::size_t i = 0; i < count; ++i) chunk.push_back(pool.records[start + i].id);
      auto stacks = trainer.predict(model, chunk);
      for (std::size_t i = 0; i < count; ++i) {
        const std::string ref = "stacks/" + chunk[i] + ".alpm";
        write_prediction_stack(dir + "/" + ref, stacks[i]);
        records[start + i].predictions_ref = ref;
      }
    }
    // benchmark pools: remaining records cycle over the distinct stacks
    for (std::size_t i = distinct; i < records.size(); ++i)
      records[i].predictions_ref = records[i % distinct].predictions_ref;
  }

  write_manifest(dir + "/manifest.jsonl", records);
}

}  // namespace alq
