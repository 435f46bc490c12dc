#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "kblab/evaluate.hpp"
#include "kblab/formatting.hpp"
#include "kblab/knowledge_base.hpp"
#include "kblab/model.hpp"
#include "kblab/optimizer.hpp"
#include "kblab/sampling.hpp"

namespace kblab {

struct TrainConfig {
  double alpha = 0.3;                  // fraction of the dataset drawn per epoch
  double init_importance = 1e6;        // weight of never-sampled items
  double importance_floor = 1e-4;      // keeps memorized items sampleable
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t eval_every = 100;        // optimizer steps between evals; 0 = epoch ends only
  std::size_t patience_epochs = 10;
  double em_stop_threshold = 0.96;
  std::uint64_t seed = 0;
  bool resample_per_batch = false;     // draw a fresh subset per batch instead of per epoch
  int eval_max_new = 8;                // decode budget during eval

  // Finetuning runs use the shorter patience.
  static TrainConfig qa_defaults() {
    TrainConfig cfg;
    cfg.patience_epochs = 5;
    cfg.max_epochs = 30;
    return cfg;
  }

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("TrainConfig: alpha must be in (0,1]");
    if (!(init_importance > 0.0)) throw std::invalid_argument("TrainConfig: init_importance must be positive");
    if (!(importance_floor > 0.0 && importance_floor < init_importance)) {
      throw std::invalid_argument("TrainConfig: importance_floor must be in (0, init_importance)");
    }
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
  }
};

enum class SampleMode { Importance, Uniform };

inline const char* sample_mode_name(SampleMode m) {
  return m == SampleMode::Importance ? "importance" : "uniform";
}

inline SampleMode parse_sample_mode(const std::string& s) {
  if (s == "importance") return SampleMode::Importance;
  if (s == "uniform") return SampleMode::Uniform;
  throw std::invalid_argument("unknown sampling mode '" + s + "'");
}

struct CurvePoint {
  long step = 0;
  long epoch = 0;
  double em = 0.0;
  double f1 = 0.0;
  double train_loss = 0.0;
  double seconds = 0.0;
};

using Curve = std::vector<CurvePoint>;

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline void write_curve_csv(std::ostream& os, const Curve& curve) {
  os << "step,epoch,em,f1,train_loss,seconds\n";
  for (const auto& pt : curve) {
    os << pt.step << ',' << pt.epoch << ',' << format_double(pt.em) << ',' << format_double(pt.f1)
       << ',' << format_double(pt.train_loss) << ',' << format_double(pt.seconds) << '\n';
  }
}

inline void write_curve_csv(const std::string& path, const Curve& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_curve_csv(os, curve);
}

// Per-sample importance weights plus everything a resumed run needs. Items
// never sampled keep exactly init_importance; sampled items carry their last
// measured loss, floored.
struct TrainState {
  std::vector<double> importance;
  long epoch = 0;
  long step = 0;
  AdamState adam;
  Rng rng{0};
  double best_f1 = -1.0;
  double best_em = 0.0;
  long best_epoch = 0;
  long best_step = 0;
};

inline TrainState make_train_state(std::size_t n, const ModelConfig& mc, const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.importance.assign(n, cfg.init_importance);
  state.adam = AdamState::init(mc);
  state.rng = Rng(cfg.seed);
  return state;
}

// Raised when a batch produces a non-finite loss; the driver is expected to
// drop a diagnostic checkpoint.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(long epoch, long step)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step)) {}
};

struct EpochLog {
  std::vector<std::size_t> sampled;  // dataset indices in processing order
  std::vector<double> losses;        // per-sample losses aligned with sampled
};

// Called after every optimizer step with the mean batch loss; return false
// to leave the epoch early.
using StepHook = std::function<bool(double)>;

namespace detail {

inline bool run_batches(Parameters& params, const ModelConfig& mc,
                        const std::vector<EncodedSample>& data, const TrainConfig& cfg,
                        TrainState& state, const std::vector<std::size_t>& order,
                        bool update_importance, const StepHook& hook, EpochLog* log) {
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(begin + cfg.batch_size, order.size());
    Batch batch;
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);

    GradResult res = loss_and_gradients(params, mc, batch);
    if (!std::isfinite(res.loss.mean)) throw NonFiniteLossError(state.epoch + 1, state.step + 1);

    if (update_importance) {
      // Importance reflects the loss measured on this forward pass, i.e.
      // before the weights move.
      for (std::size_t i = begin; i < end; ++i) {
        state.importance[order[i]] =
            std::max(res.loss.per_sample[i - begin], cfg.importance_floor);
      }
    }
    adam_step(params, res.grads, state.adam, cfg.learning_rate);
    state.step += 1;
    if (log) {
      for (std::size_t i = begin; i < end; ++i) {
        log->sampled.push_back(order[i]);
        log->losses.push_back(res.loss.per_sample[i - begin]);
      }
    }
    if (hook && !hook(res.loss.mean)) return false;
  }
  return true;
}

}  // namespace detail

// One importance-sampled epoch: draw a subset of ceil(n * alpha) with
// probability proportional to importance, walk it in sampled order as
// mini-batches, refresh the importance of sampled items from their measured
// losses, and take one optimizer step per batch.
inline void train_epoch(Parameters& params, const ModelConfig& mc,
                        const std::vector<EncodedSample>& data, const TrainConfig& cfg,
                        TrainState& state, const StepHook& hook = {}, EpochLog* log = nullptr) {
  cfg.validate();
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("train_epoch: empty dataset");
  if (state.importance.size() != n) throw std::invalid_argument("train_epoch: state/dataset size mismatch");

  bool completed = true;
  if (cfg.resample_per_batch) {
    const std::size_t k = std::min(percentile_cut(cfg.alpha, n), n);
    const std::size_t n_batches = (k + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t b = 0; b < n_batches && completed; ++b) {
      const auto subset =
          sample_subset(state.importance, std::min(cfg.batch_size, n), state.rng);
      completed = detail::run_batches(params, mc, data, cfg, state, subset, true, hook, log);
    }
  } else {
    const std::size_t k = std::min(percentile_cut(cfg.alpha, n), n);
    const auto subset = sample_subset(state.importance, k, state.rng);
    completed = detail::run_batches(params, mc, data, cfg, state, subset, true, hook, log);
  }
  if (completed) state.epoch += 1;
}

// Baseline epoch: one shuffled full pass, importance untouched.
inline void train_uniform_epoch(Parameters& params, const ModelConfig& mc,
                                const std::vector<EncodedSample>& data, const TrainConfig& cfg,
                                TrainState& state, const StepHook& hook = {},
                                EpochLog* log = nullptr) {
  cfg.validate();
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("train_uniform_epoch: empty dataset");
  if (state.importance.size() != n) throw std::invalid_argument("train_uniform_epoch: state/dataset size mismatch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  state.rng.shuffle(order);
  if (detail::run_batches(params, mc, data, cfg, state, order, false, hook, log)) {
    state.epoch += 1;
  }
}

enum class StopReason { MaxEpochs, EmThreshold, Patience, NonFiniteLoss };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::EmThreshold: return "em_threshold";
    case StopReason::Patience: return "patience";
    case StopReason::NonFiniteLoss: return "non_finite_loss";
  }
  return "?";
}

struct RunResult {
  Curve curve;
  Parameters final_params;
  Parameters best_params;
  TrainState state;
  StopReason reason = StopReason::MaxEpochs;
};

// Full training loop: evaluates EM/F1 by greedy decoding every eval_every
// steps (plus at step 0 and at epoch ends), stops on the EM threshold, on
// patience epochs without F1 improvement, or at max_epochs, and keeps the
// best-F1 parameter snapshot. Pass the state restored from a checkpoint to
// resume; steps and epochs keep counting from where they stood.
inline RunResult run_training(Parameters params, const ModelConfig& mc, const Vocab& vocab,
                              const std::vector<EncodedSample>& data,
                              const std::vector<EvalItem>& eval_items, const TrainConfig& cfg,
                              SampleMode mode, TrainState* resume_state = nullptr) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("run_training: empty dataset");
  if (eval_items.empty()) throw std::invalid_argument("run_training: empty eval set");

  RunResult result;
  if (resume_state) {
    if (resume_state->importance.size() != data.size()) {
      throw std::invalid_argument("run_training: resumed state does not match dataset size");
    }
    result.state = std::move(*resume_state);
  } else {
    result.state = make_train_state(data.size(), mc, cfg);
  }
  TrainState& state = result.state;

  const auto t0 = std::chrono::steady_clock::now();
  double loss_sum = 0.0;
  long loss_count = 0;
  bool em_reached = false;

  auto evaluate_now = [&]() {
    const EvalReport report =
        evaluate_items(params, mc, vocab, eval_items, "eval", cfg.eval_max_new);
    CurvePoint pt;
    pt.step = state.step;
    pt.epoch = state.epoch;
    pt.em = report.em;
    pt.f1 = report.f1;
    pt.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count)
                                   : std::numeric_limits<double>::quiet_NaN();
    pt.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curve.push_back(pt);
    loss_sum = 0.0;
    loss_count = 0;
    if (report.f1 > state.best_f1) {
      state.best_f1 = report.f1;
      state.best_em = report.em;
      state.best_epoch = state.epoch;
      state.best_step = state.step;
      result.best_params = params;
    }
    if (report.em >= cfg.em_stop_threshold) em_reached = true;
  };

  evaluate_now();

  StepHook hook = [&](double batch_loss) {
    loss_sum += batch_loss;
    loss_count += 1;
    if (cfg.eval_every > 0 && state.step % static_cast<long>(cfg.eval_every) == 0) {
      evaluate_now();
      if (em_reached) return false;
    }
    return true;
  };

  try {
    while (!em_reached && state.epoch < static_cast<long>(cfg.max_epochs)) {
      if (mode == SampleMode::Importance) {
        train_epoch(params, mc, data, cfg, state, hook);
      } else {
        train_uniform_epoch(params, mc, data, cfg, state, hook);
      }
      if (em_reached) break;
      if (result.curve.empty() || result.curve.back().step != state.step) {
        evaluate_now();
        if (em_reached) break;
      }
      if (state.epoch - state.best_epoch >= static_cast<long>(cfg.patience_epochs)) {
        result.reason = StopReason::Patience;
        result.final_params = std::move(params);
        return result;
      }
    }
  } catch (const NonFiniteLossError&) {
    result.reason = StopReason::NonFiniteLoss;
    result.final_params = std::move(params);
    return result;
  }

  result.reason = em_reached ? StopReason::EmThreshold : StopReason::MaxEpochs;
  result.final_params = std::move(params);
  return result;
}

struct QaPair {
  std::string question;
  std::string answer;
};

// Templated QA pairs for every triplet whose relation has a template; the
// answer is always the triplet's object.
inline std::vector<QaPair> make_qa_pairs(const std::vector<Triplet>& triplets,
                                         const TemplateTable& templates,
                                         std::size_t* skipped = nullptr) {
  std::vector<QaPair> pairs;
  std::size_t missing = 0;
  for (const Triplet& t : triplets) {
    if (!templates.has(t.relation)) {
      ++missing;
      continue;
    }
    pairs.push_back(QaPair{templates.format_question(t), t.object});
  }
  if (skipped) *skipped = missing;
  return pairs;
}

inline std::vector<EncodedSample> encode_qa_pairs(const Vocab& vocab,
                                                  const std::vector<QaPair>& pairs,
                                                  int max_seq_len) {
  std::vector<EncodedSample> samples;
  samples.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    samples.push_back(make_sample(vocab, pairs[i].question, pairs[i].answer, i, max_seq_len));
  }
  return samples;
}

inline std::vector<EvalItem> qa_eval_items(const std::vector<QaPair>& pairs) {
  std::vector<EvalItem> items;
  items.reserve(pairs.size());
  for (const auto& p : pairs) items.push_back(EvalItem{p.question, {p.answer}, ""});
  return items;
}

// Question-format finetuning from an existing parameter snapshot: same loop
// as run_training but uniform sampling over QA pairs and the finetuning
// patience.
inline RunResult qa_finetune(Parameters start, const ModelConfig& mc, const Vocab& vocab,
                             const std::vector<EncodedSample>& qa_train,
                             const std::vector<EvalItem>& qa_val, const TrainConfig& cfg) {
  if (qa_train.empty()) throw std::invalid_argument("qa_finetune: empty qa data");
  return run_training(std::move(start), mc, vocab, qa_train, qa_val, cfg, SampleMode::Uniform);
}

inline std::optional<long> steps_to_threshold(const Curve& curve, double em_threshold) {
  for (const auto& pt : curve) {
    if (pt.em >= em_threshold) return pt.step;
  }
  return std::nullopt;
}

struct ConvergenceComparison {
  RunResult importance_run;
  RunResult uniform_run;
  std::vector<double> thresholds;
  std::vector<std::optional<long>> importance_steps;  // aligned with thresholds
  std::vector<std::optional<long>> uniform_steps;
};

// Both arms start from identical initial parameters and the same seed; the
// summary records the first step at which each curve crosses each EM
// threshold. The arms own disjoint state, so they run concurrently.
inline ConvergenceComparison compare_convergence(const Parameters& init, const ModelConfig& mc,
                                                 const Vocab& vocab,
                                                 const std::vector<EncodedSample>& data,
                                                 const std::vector<EvalItem>& eval_items,
                                                 const TrainConfig& cfg,
                                                 std::vector<double> thresholds) {
  ConvergenceComparison cmp;
  cmp.thresholds = std::move(thresholds);
  std::exception_ptr importance_error;
  std::thread importance_arm([&] {
    try {
      cmp.importance_run =
          run_training(init, mc, vocab, data, eval_items, cfg, SampleMode::Importance);
    } catch (...) {
      importance_error = std::current_exception();
    }
  });
  try {
    cmp.uniform_run = run_training(init, mc, vocab, data, eval_items, cfg, SampleMode::Uniform);
  } catch (...) {
    importance_arm.join();
    throw;
  }
  importance_arm.join();
  if (importance_error) std::rethrow_exception(importance_error);
  for (double th : cmp.thresholds) {
    cmp.importance_steps.push_back(steps_to_threshold(cmp.importance_run.curve, th));
    cmp.uniform_steps.push_back(steps_to_threshold(cmp.uniform_run.curve, th));
  }
  return cmp;
}

}  // namespace kblab
