#include "alq/scoring.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <variant>

#include "alq/error.hpp"
#include "alq/io_util.hpp"
#include "alq/kernels.hpp"
#include "alq/tensor_io.hpp"

namespace alq {

const char* score_function_name(ScoreFunction f) {
  switch (f) {
    case ScoreFunction::entropy: return "entropy";
    case ScoreFunction::mutual_information: return "mi";
    case ScoreFunction::grad: return "grad";
    case ScoreFunction::det_ent: return "detent";
  }
  return "?";
}

const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::max: return "max";
    case Aggregation::avg: return "avg";
    case Aggregation::sum: return "sum";
  }
  return "?";
}

const char* grad_reduce_name(GradReduce r) {
  switch (r) {
    case GradReduce::none: return "none";
    case GradReduce::max_variance: return "maxvar";
    case GradReduce::mean_variance: return "meanvar";
  }
  return "?";
}

void ScoringConfig::validate() const {
  if (!(epsilon > 0.0) || !(epsilon < 1e-6))
    raise(Errc::bad_config, "epsilon must lie in (0, 1e-6)");
  if (function == ScoreFunction::det_ent) {
    if (aggregation == Aggregation::avg)
      raise(Errc::bad_config, "Det-Ent aggregates by max or sum, not avg");
    if (grad_ensemble_reduce != GradReduce::none)
      raise(Errc::bad_config, "grad ensemble reduce applies to the grad function only");
  } else {
    if (aggregation == Aggregation::sum)
      raise(Errc::bad_config, "sum aggregation is Det-Ent only");
    if (function != ScoreFunction::grad && grad_ensemble_reduce != GradReduce::none)
      raise(Errc::bad_config, "grad ensemble reduce applies to the grad function only");
  }
}

namespace {

void check_indices(const PredictionStack& stack, std::optional<uint32_t> member, uint32_t cls) {
  if (member && *member >= stack.members())
    raise(Errc::index_out_of_range, "member " + std::to_string(*member) + " of stack with E=" +
                                        std::to_string(stack.members()));
  if (cls >= stack.classes())
    raise(Errc::index_out_of_range,
          "class " + std::to_string(cls) + " of stack with C=" + std::to_string(stack.classes()));
}

// Reused per-image buffers; workers each own one.
struct Scratch {
  std::vector<double> map;
  std::vector<double> mean;
  std::vector<double> mi;

  void reserve(std::size_t n) {
    if (map.size() < n) map.resize(n);
    if (mi.size() < 2 * n) mi.resize(2 * n);
  }
};

// Per-class informativeness map for the configured function, into scratch.map.
void class_map(const PredictionStack& stack, uint32_t cls, const ScoringConfig& config,
               Scratch& scratch) {
  const auto& k = kernels::active_table();
  const std::size_t n = stack.cells();
  scratch.reserve(n);
  const float* base = stack.map(0, cls);
  const std::size_t stride = stack.member_stride();

  switch (config.function) {
    case ScoreFunction::entropy:
      if (stack.members() == 1) {
        k.entropy_map_f32(base, n, config.epsilon, scratch.map.data());
      } else {
        if (scratch.mean.size() < n) scratch.mean.resize(n);
        k.mean_map(base, stride, stack.members(), n, scratch.mean.data());
        k.entropy_map_f64(scratch.mean.data(), n, config.epsilon, scratch.map.data());
      }
      break;
    case ScoreFunction::mutual_information:
      k.mi_map(base, stride, stack.members(), n, config.epsilon, scratch.map.data(),
               scratch.mi.data());
      break;
    case ScoreFunction::grad:
      if (config.grad_ensemble_reduce == GradReduce::none) {
        if (stack.members() == 1) {
          k.grad_map_f32(base, n, scratch.map.data());
        } else {
          if (scratch.mean.size() < n) scratch.mean.resize(n);
          k.mean_map(base, stride, stack.members(), n, scratch.mean.data());
          k.grad_map_f64(scratch.mean.data(), n, scratch.map.data());
        }
      } else {
        if (stack.members() < 2)
          raise(Errc::too_few_members, "grad ensemble variance needs E >= 2");
        k.grad_variance_map(base, stride, stack.members(), n, scratch.map.data());
      }
      break;
    case ScoreFunction::det_ent:
      raise(Errc::kind_mismatch, "Det-Ent consumes detection sets, not prediction stacks");
  }
}

ScoredImage score_stack(const PredictionStack& stack, const ScoringConfig& config,
                        Scratch& scratch) {
  const auto& k = kernels::active_table();
  const std::size_t n = stack.cells();
  Aggregation agg = config.aggregation;
  if (config.function == ScoreFunction::grad && config.grad_ensemble_reduce != GradReduce::none)
    agg = config.grad_ensemble_reduce == GradReduce::max_variance ? Aggregation::max
                                                                  : Aggregation::avg;

  ScoredImage out;
  out.image_id = stack.image_id();
  out.per_class_scores.resize(stack.classes());
  double total_sum = 0;
  double total_max = 0;
  for (uint32_t c = 0; c < stack.classes(); ++c) {
    class_map(stack, c, config, scratch);
    if (agg == Aggregation::max) {
      const double m = k.max_reduce(scratch.map.data(), n);
      out.per_class_scores[c] = m;
      total_max = c == 0 ? m : std::max(total_max, m);
    } else {
      const double s = k.sum_reduce(scratch.map.data(), n);
      out.per_class_scores[c] = s / double(n);
      total_sum += s;
    }
  }
  out.score = agg == Aggregation::max ? total_max : total_sum / (double(n) * stack.classes());
  // MI and variance maps can round to tiny negatives at zero-disagreement cells.
  out.score = std::max(0.0, out.score);
  for (auto& v : out.per_class_scores) v = std::max(0.0, v);
  return out;
}

}  // namespace

std::vector<double> entropy_map(const PredictionStack& stack, uint32_t member, uint32_t cls,
                                double epsilon) {
  check_indices(stack, member, cls);
  std::vector<double> out(stack.cells());
  kernels::active_table().entropy_map_f32(stack.map(member, cls), out.size(), epsilon,
                                          out.data());
  return out;
}

std::vector<double> mean_probability_map(const PredictionStack& stack, uint32_t cls) {
  check_indices(stack, std::nullopt, cls);
  std::vector<double> out(stack.cells());
  kernels::active_table().mean_map(stack.map(0, cls), stack.member_stride(), stack.members(),
                                   out.size(), out.data());
  return out;
}

std::vector<double> mutual_information_map(const PredictionStack& stack, uint32_t cls,
                                           double epsilon) {
  check_indices(stack, std::nullopt, cls);
  std::vector<double> out(stack.cells());
  std::vector<double> scratch(2 * out.size());
  kernels::active_table().mi_map(stack.map(0, cls), stack.member_stride(), stack.members(),
                                 out.size(), epsilon, out.data(), scratch.data());
  return out;
}

std::vector<double> grad_map(const PredictionStack& stack, uint32_t member, uint32_t cls) {
  check_indices(stack, member, cls);
  std::vector<double> out(stack.cells());
  kernels::active_table().grad_map_f32(stack.map(member, cls), out.size(), out.data());
  return out;
}

std::vector<double> grad_ensemble_map(const PredictionStack& stack, uint32_t cls) {
  check_indices(stack, std::nullopt, cls);
  if (stack.members() < 2) raise(Errc::too_few_members, "grad ensemble variance needs E >= 2");
  std::vector<double> out(stack.cells());
  kernels::active_table().grad_variance_map(stack.map(0, cls), stack.member_stride(),
                                            stack.members(), out.size(), out.data());
  return out;
}

ScoredImage detection_entropy(const DetectionSet& dets, Aggregation aggregation, double epsilon) {
  if (aggregation == Aggregation::avg)
    raise(Errc::bad_config, "Det-Ent aggregates by max or sum, not avg");
  ScoredImage out;
  out.image_id = dets.image_id;
  double acc = 0;
  for (const auto& d : dets.detections) {
    const double h = kernels::bernoulli_entropy(double(d.confidence), epsilon);
    acc = aggregation == Aggregation::max ? std::max(acc, h) : acc + h;
  }
  out.score = acc;
  return out;
}

ScoredImage score_image(const PredictionStack& stack, const ScoringConfig& config) {
  config.validate();
  if (config.function == ScoreFunction::det_ent)
    raise(Errc::kind_mismatch, "Det-Ent consumes detection sets, not prediction stacks");
  Scratch scratch;
  return score_stack(stack, config, scratch);
}

ScoredImage score_image(const DetectionSet& dets, const ScoringConfig& config) {
  config.validate();
  if (config.function != ScoreFunction::det_ent)
    raise(Errc::kind_mismatch,
          std::string(score_function_name(config.function)) + " consumes prediction stacks");
  return detection_entropy(dets, config.aggregation, config.epsilon);
}

// ---------------------------------------------------------------------------
// Pool scoring
// ---------------------------------------------------------------------------

namespace {

ScoredImage score_record(const ImageRecord& rec, const ScoringConfig& config,
                         const std::string& base_dir, Scratch& scratch) {
  try {
    if (config.function == ScoreFunction::det_ent) {
      if (rec.detections_ref.empty())
        raise(Errc::missing_ref, rec.id + " has no detections_ref");
      auto dets = read_detections(resolve_ref(base_dir, rec.detections_ref), rec.id);
      return detection_entropy(dets, config.aggregation, config.epsilon);
    }
    if (rec.predictions_ref.empty())
      raise(Errc::missing_ref, rec.id + " has no predictions_ref");
    auto stack = read_prediction_stack(resolve_ref(base_dir, rec.predictions_ref), rec.id);
    return score_stack(stack, config, scratch);
  } catch (const Error& e) {
    // Tag with the offending image id once.
    if (e.message().find(rec.id) != std::string::npos) throw;
    throw Error(e.code(), rec.id + ": " + e.message());
  }
}

struct JobResult {
  uint64_t seq = 0;
  std::variant<ScoredImage, ScoreFailure> value;
};

void score_pool_parallel(const RecordSource& source, const ScoringConfig& config,
                         const ScoreOptions& options,
                         const std::function<void(const ScoredImage&)>& sink,
                         const std::function<void(const ScoreFailure&)>& on_error) {
  struct Shared {
    std::mutex mu;
    std::condition_variable cv_workers, cv_caller;
    std::deque<std::pair<uint64_t, ImageRecord>> jobs;
    std::map<uint64_t, JobResult> done;
    bool input_closed = false;
    bool stop = false;
  } shared;

  const std::size_t cap = std::size_t(options.workers) * 4;

  auto worker = [&] {
    Scratch scratch;
    for (;;) {
      std::pair<uint64_t, ImageRecord> job;
      {
        std::unique_lock lock(shared.mu);
        shared.cv_workers.wait(lock,
                               [&] { return shared.stop || shared.input_closed || !shared.jobs.empty(); });
        if (shared.stop || (shared.jobs.empty() && shared.input_closed)) return;
        if (shared.jobs.empty()) continue;
        job = std::move(shared.jobs.front());
        shared.jobs.pop_front();
      }
      JobResult result;
      result.seq = job.first;
      try {
        result.value = score_record(job.second, config, options.base_dir, scratch);
      } catch (const Error& e) {
        result.value = ScoreFailure{job.second.id, e.message(), e.code()};
      } catch (const std::exception& e) {
        result.value = ScoreFailure{job.second.id, e.what(), Errc::io_error};
      }
      {
        std::lock_guard lock(shared.mu);
        shared.done.emplace(result.seq, std::move(result));
      }
      shared.cv_caller.notify_one();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(std::size_t(options.workers));
  for (int i = 0; i < options.workers; ++i) threads.emplace_back(worker);

  // stops and joins the workers on every exit path, including exceptions
  // thrown by the source or the sink
  struct Joiner {
    Shared& shared;
    std::vector<std::thread>& threads;
    ~Joiner() {
      {
        std::lock_guard lock(shared.mu);
        shared.stop = true;
        shared.input_closed = true;
      }
      shared.cv_workers.notify_all();
      for (auto& t : threads)
        if (t.joinable()) t.join();
    }
  } joiner{shared, threads};

  uint64_t next_feed = 0, next_emit = 0;
  bool source_done = false;
  std::optional<Error> pending_error;

  auto drain_one = [&](std::unique_lock<std::mutex>& lock) {
    shared.cv_caller.wait(lock, [&] {
      return shared.done.count(next_emit) != 0;
    });
    JobResult result = std::move(shared.done.at(next_emit));
    shared.done.erase(next_emit);
    ++next_emit;
    lock.unlock();
    if (auto* ok = std::get_if<ScoredImage>(&result.value)) {
      sink(*ok);
    } else {
      const auto& fail = std::get<ScoreFailure>(result.value);
      if (!options.keep_going) {
        pending_error.emplace(fail.code, fail.message);
        std::lock_guard relock(shared.mu);
        shared.stop = true;
      } else if (on_error) {
        on_error(fail);
      }
    }
    lock.lock();
  };

  {
    std::unique_lock lock(shared.mu);
    while (!pending_error && (!source_done || next_emit < next_feed)) {
      // Keep the workers fed up to the pending cap, then drain in order.
      while (!source_done && next_feed - next_emit < cap) {
        ImageRecord rec;
        lock.unlock();
        const bool got = source(rec);
        lock.lock();
        if (!got) {
          source_done = true;
          shared.input_closed = true;
          shared.cv_workers.notify_all();
          break;
        }
        shared.jobs.emplace_back(next_feed++, std::move(rec));
        shared.cv_workers.notify_one();
      }
      if (next_emit < next_feed) drain_one(lock);
    }
  }
  if (pending_error) throw *pending_error;
}

}  // namespace

void score_pool(const RecordSource& source, const ScoringConfig& config,
                const ScoreOptions& options, const std::function<void(const ScoredImage&)>& sink,
                const std::function<void(const ScoreFailure&)>& on_error) {
  config.validate();
  if (options.workers > 1) {
    score_pool_parallel(source, config, options, sink, on_error);
    return;
  }
  Scratch scratch;
  ImageRecord rec;
  while (source(rec)) {
    try {
      sink(score_record(rec, config, options.base_dir, scratch));
    } catch (const Error& e) {
      if (!options.keep_going) throw;
      if (on_error) on_error({rec.id, e.message(), e.code()});
    }
  }
}

std::vector<ScoredImage> score_pool(std::span<const ImageRecord> records,
                                    const ScoringConfig& config, const ScoreOptions& options) {
  std::vector<ScoredImage> out;
  out.reserve(records.size());
  std::size_t i = 0;
  score_pool(
      [&](ImageRecord& rec) {
        if (i >= records.size()) return false;
        rec = records[i++];
        return true;
      },
      config, options, [&](const ScoredImage& s) { out.push_back(s); });
  return out;
}

}  // namespace alq
