#include <catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "kblab/formatting.hpp"
#include "kblab/sampling.hpp"
#include "kblab/synth.hpp"
#include "kblab/trainer.hpp"

using namespace kblab;

namespace {

struct Fixture {
  ModelConfig cfg;
  Vocab vocab;
  std::vector<Triplet> triplets;
  std::vector<EncodedSample> samples;
  std::vector<EvalItem> eval_items;
};

Fixture make_fixture(std::size_t n_facts, std::uint64_t seed, int d_model = 16) {
  SynthSpec spec;
  spec.n_entities = std::max<std::size_t>(8, n_facts / 2);
  spec.n_relations = 4;
  spec.n_triplets = n_facts * 3;
  spec.seed = seed;
  const auto kb = KnowledgeBase::build(gen_synthetic(spec), seed + 1);

  Fixture f;
  for (std::size_t i = 0; i < std::min(n_facts, kb.size()); ++i) f.triplets.push_back(kb.triplet(i));
  std::vector<std::string> corpus;
  for (const auto& t : f.triplets) {
    corpus.push_back(format_input(t));
    corpus.push_back(t.object);
  }
  f.vocab = Vocab::build(corpus);
  f.cfg.d_model = d_model;
  f.cfg.n_layers = 1;
  f.cfg.n_heads = 2;
  f.cfg.max_seq_len = 24;
  f.cfg.vocab_size = f.vocab.size();
  for (std::size_t i = 0; i < f.triplets.size(); ++i) {
    f.samples.push_back(
        make_sample(f.vocab, format_input(f.triplets[i]), f.triplets[i].object, i, f.cfg.max_seq_len));
  }
  Dataset ds{"eval", f.triplets};
  f.eval_items = make_eval_items(ds, PromptMode::TripletFormat);
  return f;
}

std::vector<double> flatten(const Parameters& p) {
  std::vector<double> out;
  for (const auto& ref : tensor_refs(p)) {
    out.insert(out.end(), ref.tensor->data(), ref.tensor->data() + ref.tensor->size());
  }
  return out;
}

}  // namespace

TEST_CASE("alpha 1 samples the whole dataset and updates every importance") {
  Fixture f = make_fixture(10, 3);
  TrainConfig tc;
  tc.alpha = 1.0;
  tc.batch_size = 4;
  tc.seed = 1;
  Parameters p = Parameters::init(f.cfg, 1);
  TrainState state = make_train_state(f.samples.size(), f.cfg, tc);
  EpochLog log;
  train_epoch(p, f.cfg, f.samples, tc, state, {}, &log);
  CHECK(log.sampled.size() == f.samples.size());
  CHECK(std::set<std::size_t>(log.sampled.begin(), log.sampled.end()).size() == f.samples.size());
  for (double w : state.importance) CHECK(w < tc.init_importance);
  CHECK(state.epoch == 1);
}

TEST_CASE("importance bookkeeping after one epoch at alpha 0.3 on 10 samples") {
  Fixture f = make_fixture(10, 5);
  REQUIRE(f.samples.size() == 10);
  TrainConfig tc;
  tc.alpha = 0.3;
  tc.batch_size = 3;
  tc.seed = 11;
  Parameters p = Parameters::init(f.cfg, 2);
  TrainState state = make_train_state(10, f.cfg, tc);

  // oracle for the sampled set: replay the seeded sampler on the initial
  // all-equal weights
  Rng oracle_rng(tc.seed);
  const auto expected = sample_subset(std::vector<double>(10, tc.init_importance), 3, oracle_rng);

  EpochLog log;
  train_epoch(p, f.cfg, f.samples, tc, state, {}, &log);
  CHECK(log.sampled == expected);

  std::size_t updated = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    if (state.importance[i] != tc.init_importance) {
      ++updated;
      // equal to the measured loss (floored)
      const auto it = std::find(log.sampled.begin(), log.sampled.end(), i);
      REQUIRE(it != log.sampled.end());
      const double measured = log.losses[static_cast<std::size_t>(it - log.sampled.begin())];
      CHECK(state.importance[i] == std::max(measured, tc.importance_floor));
    }
  }
  CHECK(updated == 3);
}

TEST_CASE("two epochs replay bit-identically under a fixed seed") {
  Fixture f = make_fixture(12, 7);
  TrainConfig tc;
  tc.alpha = 0.4;
  tc.batch_size = 4;
  tc.seed = 21;
  auto run_two = [&]() {
    Parameters p = Parameters::init(f.cfg, 4);
    TrainState state = make_train_state(f.samples.size(), f.cfg, tc);
    train_epoch(p, f.cfg, f.samples, tc, state);
    train_epoch(p, f.cfg, f.samples, tc, state);
    return std::pair{state.importance, flatten(p)};
  };
  const auto a = run_two();
  const auto b = run_two();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("uniform epoch touches every sample exactly once and keeps importance") {
  Fixture f = make_fixture(9, 9);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.seed = 2;
  Parameters p = Parameters::init(f.cfg, 5);
  TrainState state = make_train_state(f.samples.size(), f.cfg, tc);
  EpochLog log;
  train_uniform_epoch(p, f.cfg, f.samples, tc, state, {}, &log);
  CHECK(log.sampled.size() == f.samples.size());
  CHECK(std::set<std::size_t>(log.sampled.begin(), log.sampled.end()).size() == f.samples.size());
  for (double w : state.importance) CHECK(w == tc.init_importance);

  Parameters p2 = Parameters::init(f.cfg, 5);
  TrainState state2 = make_train_state(f.samples.size(), f.cfg, tc);
  EpochLog log2;
  train_uniform_epoch(p2, f.cfg, f.samples, tc, state2, {}, &log2);
  CHECK(log.sampled == log2.sampled);
}

TEST_CASE("on one sample, importance at alpha 1 and uniform make the same update") {
  Fixture f = make_fixture(1, 13);
  REQUIRE(f.samples.size() == 1);
  TrainConfig tc;
  tc.alpha = 1.0;
  tc.batch_size = 1;
  tc.seed = 3;

  Parameters pa = Parameters::init(f.cfg, 6);
  TrainState sa = make_train_state(1, f.cfg, tc);
  train_epoch(pa, f.cfg, f.samples, tc, sa);

  Parameters pb = Parameters::init(f.cfg, 6);
  TrainState sb = make_train_state(1, f.cfg, tc);
  train_uniform_epoch(pb, f.cfg, f.samples, tc, sb);

  CHECK(flatten(pa) == flatten(pb));
}

TEST_CASE("run_training memorizes a single triplet and stops on the EM threshold") {
  Fixture f = make_fixture(1, 17);
  TrainConfig tc;
  tc.alpha = 1.0;
  tc.batch_size = 1;
  tc.learning_rate = 1e-2;
  tc.max_epochs = 500;
  tc.eval_every = 0;  // epoch ends only
  tc.em_stop_threshold = 0.96;
  tc.patience_epochs = 1000;
  tc.seed = 4;
  const RunResult r = run_training(Parameters::init(f.cfg, 7), f.cfg, f.vocab, f.samples,
                                   f.eval_items, tc, SampleMode::Importance);
  CHECK(r.reason == StopReason::EmThreshold);
  CHECK(r.curve.back().em == 1.0);
  CHECK(static_cast<std::size_t>(r.state.epoch) < tc.max_epochs);
}

TEST_CASE("patience fires when F1 stays flat") {
  Fixture f = make_fixture(6, 19);
  TrainConfig tc;
  tc.learning_rate = 0.0;  // frozen model: no improvement ever
  tc.batch_size = 2;
  tc.max_epochs = 100;
  tc.eval_every = 0;
  tc.patience_epochs = 5;
  tc.seed = 5;
  const RunResult r = run_training(Parameters::init(f.cfg, 8), f.cfg, f.vocab, f.samples,
                                   f.eval_items, tc, SampleMode::Uniform);
  CHECK(r.reason == StopReason::Patience);
  CHECK(r.state.epoch == 5);
}

TEST_CASE("importance stays at or above the floor once losses collapse") {
  const Vocab v = Vocab::from_tokens({"a"});
  ModelConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.max_seq_len = 8;
  cfg.vocab_size = v.size();
  Parameters p = Parameters::zeros(cfg);
  p.final_offset(0, 0) = 1.0;
  p.tok_emb(Vocab::kEos, 0) = 40.0;  // loss ~ 1e-17 on the EOS-only sample

  std::vector<EncodedSample> data = {make_sample(v, "a", "", 0, cfg.max_seq_len)};
  TrainConfig tc;
  tc.alpha = 1.0;
  tc.batch_size = 1;
  tc.learning_rate = 0.0;
  tc.seed = 6;
  TrainState state = make_train_state(1, cfg, tc);
  train_epoch(p, cfg, data, tc, state);
  CHECK(state.importance[0] == tc.importance_floor);
}

TEST_CASE("whole-run determinism: identical config gives identical curves") {
  Fixture f = make_fixture(8, 23);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 3;
  tc.eval_every = 2;
  tc.seed = 7;
  auto run = [&]() {
    return run_training(Parameters::init(f.cfg, 9), f.cfg, f.vocab, f.samples, f.eval_items, tc,
                        SampleMode::Importance);
  };
  const RunResult a = run();
  const RunResult b = run();
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].step == b.curve[i].step);
    CHECK(a.curve[i].epoch == b.curve[i].epoch);
    CHECK(a.curve[i].em == b.curve[i].em);
    CHECK(a.curve[i].f1 == b.curve[i].f1);
    // wall-clock seconds is the one nondeterministic column by design
    const bool nan_ok = std::isnan(a.curve[i].train_loss) && std::isnan(b.curve[i].train_loss);
    if (!nan_ok) CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
  }
  CHECK(flatten(a.final_params) == flatten(b.final_params));
}

TEST_CASE("per-batch resampling mode runs and stays deterministic") {
  Fixture f = make_fixture(10, 29);
  TrainConfig tc;
  tc.alpha = 0.5;
  tc.batch_size = 2;
  tc.resample_per_batch = true;
  tc.seed = 8;
  auto run = [&]() {
    Parameters p = Parameters::init(f.cfg, 10);
    TrainState state = make_train_state(f.samples.size(), f.cfg, tc);
    EpochLog log;
    train_epoch(p, f.cfg, f.samples, tc, state, {}, &log);
    return log.sampled;
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(a.size() == 6);  // ceil(5 / 2) = 3 batches of 2
}

TEST_CASE("qa pair construction keeps answers equal to objects") {
  const TemplateTable table = TemplateTable::builtin();
  const std::vector<Triplet> triplets = {{"alice", "father", "bob"},
                                         {"paris", "capital of", "france"},
                                         {"x", "unmapped relation", "y"}};
  std::size_t skipped = 0;
  const auto pairs = make_qa_pairs(triplets, table, &skipped);
  REQUIRE(pairs.size() == 2);
  CHECK(skipped == 1);
  CHECK(pairs[0].question == "the father of alice is");
  CHECK(pairs[0].answer == "bob");
  CHECK(pairs[1].answer == "france");
}

TEST_CASE("qa_finetune rejects empty data") {
  Fixture f = make_fixture(4, 31);
  TrainConfig tc = TrainConfig::qa_defaults();
  CHECK_THROWS(qa_finetune(Parameters::init(f.cfg, 11), f.cfg, f.vocab, {}, f.eval_items, tc));
}

TEST_CASE("compare_convergence is deterministic and reports both arms") {
  Fixture f = make_fixture(8, 37);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 2;
  tc.eval_every = 0;
  tc.seed = 9;
  const Parameters init = Parameters::init(f.cfg, 12);
  const auto a = compare_convergence(init, f.cfg, f.vocab, f.samples, f.eval_items, tc, {0.5});
  const auto b = compare_convergence(init, f.cfg, f.vocab, f.samples, f.eval_items, tc, {0.5});
  REQUIRE(a.importance_run.curve.size() == b.importance_run.curve.size());
  for (std::size_t i = 0; i < a.importance_run.curve.size(); ++i) {
    CHECK(a.importance_run.curve[i].em == b.importance_run.curve[i].em);
  }
  CHECK(a.importance_steps == b.importance_steps);
  CHECK(a.uniform_steps == b.uniform_steps);
  // both runs started from the same init: step-0 points agree
  CHECK(a.importance_run.curve[0].em == a.uniform_run.curve[0].em);
}

TEST_CASE("coverage: nearly all items are sampled within ceil(2/alpha) epochs") {
  const std::size_t n = 1000;
  TrainConfig tc;
  for (std::uint64_t seed : {1ULL, 2ULL}) {
    Rng rng(seed);
    std::vector<double> importance(n, tc.init_importance);
    std::set<std::size_t> seen;
    const std::size_t epochs = static_cast<std::size_t>(std::ceil(2.0 / tc.alpha));
    const std::size_t k = percentile_cut(tc.alpha, n);
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t idx : sample_subset(importance, k, rng)) {
        seen.insert(idx);
        // stand-in for a measured loss: small positive value
        importance[idx] = std::max(0.1 + 5.0 * rng.uniform01(), tc.importance_floor);
      }
    }
    CHECK(static_cast<double>(seen.size()) >= 0.99 * static_cast<double>(n));
  }
}

TEST_CASE("curve CSV has the documented header and row shape") {
  Curve curve = {{0, 0, 0.5, 0.625, std::numeric_limits<double>::quiet_NaN(), 0.0},
                 {100, 1, 0.75, 0.8, 2.5, 1.5}};
  std::ostringstream os;
  write_curve_csv(os, curve);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "step,epoch,em,f1,train_loss,seconds");
  std::getline(is, line);
  CHECK(line == "0,0,0.5,0.625,nan,0");
  std::getline(is, line);
  CHECK(line == "100,1,0.75,0.8,2.5,1.5");
}

TEST_CASE("steps_to_threshold finds the first crossing") {
  Curve curve = {{0, 0, 0.0, 0, 0, 0}, {50, 1, 0.4, 0, 0, 0}, {100, 2, 0.9, 0, 0, 0},
                 {150, 3, 0.95, 0, 0, 0}};
  CHECK(steps_to_threshold(curve, 0.9) == 100);
  CHECK(steps_to_threshold(curve, 0.3) == 50);
  CHECK_FALSE(steps_to_threshold(curve, 0.99).has_value());
}
