// Acceptance suite: one pass/fail line per criterion. Slow criteria train
// real models on the standard synthetic fixture; expect tens of minutes on a
// desktop CPU. --only N runs a single criterion, --list names them.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kblab/kblab.hpp"

namespace fs = std::filesystem;
using namespace kblab;

namespace {

constexpr std::uint64_t kFixtureSynthSeed = 42;
constexpr std::uint64_t kFixtureDedupSeed = 43;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// The standard synthetic fixture: 1,000 entities, 50 relations, 10,000
// raw triplets at zipf 1.1, deduplicated.
KnowledgeBase fixture_kb() {
  SynthSpec spec;
  spec.n_entities = 1000;
  spec.n_relations = 50;
  spec.n_triplets = 10000;
  spec.zipf_exponent = 1.1;
  spec.seed = kFixtureSynthSeed;
  return KnowledgeBase::build(gen_synthetic(spec), kFixtureDedupSeed);
}

// The 11 relation names used by the inverse rules, mapped onto the
// fixture's most frequent synthetic relations.
AliasMap fixture_aliases() {
  AliasMap m;
  const std::vector<std::string> canon = {"sibling", "shares border with", "father", "mother",
                                          "child",   "capital",            "capital of",
                                          "part of", "has part",           "country",
                                          "contains"};
  for (std::size_t i = 0; i < canon.size(); ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "r%02zu", i);
    m.add(canon[i], buf);
  }
  return m;
}

struct Prepared {
  ModelConfig mc;
  Vocab vocab;
  std::vector<EncodedSample> data;
  std::vector<EvalItem> eval_items;
};

Prepared prepare(const std::vector<Triplet>& triplets, std::size_t eval_size,
                 std::uint64_t eval_seed, const TemplateTable* templates = nullptr) {
  Prepared p;
  p.vocab = Vocab::build(vocab_corpus(triplets, templates));
  p.mc.vocab_size = p.vocab.size();
  p.mc.validate();
  p.data = encode_triplets(triplets, p.vocab, p.mc.max_seq_len);
  p.eval_items =
      make_eval_items(sample_triplets(triplets, eval_size, eval_seed), PromptMode::TripletFormat);
  return p;
}

// ---------------------------------------------------------------- criteria

bool criterion_speedup(std::ostream& log) {
  const auto kb = fixture_kb();
  const Prepared p = prepare(kb.triplets(), 500, 1001);
  log << "  fixture KB: " << kb.size() << " triplets, vocab " << p.vocab.size() << "\n";

  std::vector<double> imp_steps, uni_steps;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig tc;  // defaults: alpha 0.3, batch 32, lr 1e-3, eval_every 100,
                     // patience 10, em_stop 0.96, max_epochs 100
    tc.seed = derive_seed(seed, "train");
    const Parameters init = Parameters::init(p.mc, derive_seed(seed, "init"));
    const auto cmp = compare_convergence(init, p.mc, p.vocab, p.data, p.eval_items, tc, {0.90});
    const auto si = cmp.importance_steps[0];
    const auto su = cmp.uniform_steps[0];
    log << "  seed " << seed << ": importance "
        << (si ? std::to_string(*si) : std::string("never")) << " steps, uniform "
        << (su ? std::to_string(*su) : std::string("never")) << " steps\n";
    if (!si || !su) return false;
    imp_steps.push_back(static_cast<double>(*si));
    uni_steps.push_back(static_cast<double>(*su));
  }
  const double mi = median(imp_steps);
  const double mu = median(uni_steps);
  log << "  median steps to 0.90 EM: importance " << mi << ", uniform " << mu << "\n";
  return mi < mu;
}

bool criterion_capacity(std::ostream& log) {
  // dedup shrinks the raw draw, so oversample and cut to exactly 1,000 facts
  SynthSpec spec;
  spec.n_entities = 800;
  spec.n_relations = 25;
  spec.n_triplets = 2600;
  spec.zipf_exponent = 1.1;
  spec.seed = 52;
  const auto kb = KnowledgeBase::build(gen_synthetic(spec), 53);
  if (kb.size() < 1000) {
    log << "  fixture under-sized: " << kb.size() << "\n";
    return false;
  }
  const Dataset facts = sample_triplets(kb.triplets(), 1000, 54, "capacity");
  const Prepared p = prepare(facts.triplets, 200, 2001);
  log << "  KB " << facts.triplets.size() << " triplets, eval 200\n";

  TrainConfig tc;
  tc.max_epochs = 200;
  tc.em_stop_threshold = 0.96;
  tc.patience_epochs = 200;  // the EM stop must be what fires
  tc.seed = derive_seed(7, "train");
  const RunResult run = run_training(Parameters::init(p.mc, derive_seed(7, "init")), p.mc, p.vocab,
                                     p.data, p.eval_items, tc, SampleMode::Importance);
  log << "  stop " << stop_reason_name(run.reason) << " after " << run.state.epoch
      << " epochs; best em " << run.state.best_em << "\n";
  return run.reason == StopReason::EmThreshold && run.state.best_em >= 0.96 &&
         run.state.epoch <= 200;
}

struct TailGapOutcome {
  bool pass = false;
  std::vector<Parameters> first3_params;  // final checkpoints for criterion 5
};

TailGapOutcome criterion_popular_vs_tail(std::ostream& log) {
  TailGapOutcome out;
  const auto kb = fixture_kb();
  const auto occ = occurrence_counts(kb);
  const Prepared p = prepare(kb.triplets(), 500, 1001);

  std::vector<Dataset> strata;
  for (const StratumSpec& spec :
       {StratumSpec::popular(StratumAxis::Entity, 250), StratumSpec::popular(StratumAxis::Relation, 250),
        StratumSpec::long_tail(StratumAxis::Entity, 250),
        StratumSpec::long_tail(StratumAxis::Relation, 250)}) {
    auto res = stratify(kb, occ, spec, derive_seed(300, "strata:" + spec.name()));
    log << "  stratum " << spec.name() << ": available " << res.available << ", sampled "
        << res.dataset.triplets.size() << "\n";
    strata.push_back(std::move(res.dataset));
  }

  std::map<std::string, std::vector<double>> em;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig tc;
    tc.em_stop_threshold = 0.70;  // budget cap
    tc.seed = derive_seed(seed, "train");
    RunResult run = run_training(Parameters::init(p.mc, derive_seed(seed, "init")), p.mc, p.vocab,
                                 p.data, p.eval_items, tc, SampleMode::Importance);
    log << "  seed " << seed << ": stop " << stop_reason_name(run.reason) << " at em "
        << run.curve.back().em << "\n";
    for (const Dataset& stratum : strata) {
      const EvalReport r = evaluate_items(
          run.final_params, p.mc, p.vocab,
          make_eval_items(stratum, PromptMode::TripletFormat), stratum.name, 8);
      em[stratum.name].push_back(r.em);
    }
    if (seed <= 3) out.first3_params.push_back(std::move(run.final_params));
  }
  const double pop_ent = median(em["pop_ent"]), tail_ent = median(em["tail_ent"]);
  const double pop_rel = median(em["pop_rel"]), tail_rel = median(em["tail_rel"]);
  log << "  median EM: pop_ent " << pop_ent << " vs tail_ent " << tail_ent << "; pop_rel "
      << pop_rel << " vs tail_rel " << tail_rel << "\n";
  out.pass = pop_ent >= tail_ent && pop_rel >= tail_rel;
  return out;
}

bool criterion_qa_transfer(std::ostream& log) {
  const auto kb = fixture_kb();
  const AliasMap aliases = fixture_aliases();
  const TemplateTable templates = TemplateTable::builtin().remapped(aliases);

  std::vector<Triplet> templated;
  for (const auto& t : kb.triplets()) {
    if (templates.has(t.relation)) templated.push_back(t);
  }
  const Dataset held_in = sample_triplets(templated, 2000, 4001, "qa_source");
  log << "  templated pool " << templated.size() << ", held-in " << held_in.triplets.size() << "\n";

  std::vector<double> gaps;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Prepared p;
    p.vocab = Vocab::build(vocab_corpus(held_in.triplets, &templates));
    p.mc.vocab_size = p.vocab.size();
    p.mc.validate();
    p.data = encode_triplets(held_in.triplets, p.vocab, p.mc.max_seq_len);
    p.eval_items = make_eval_items(sample_triplets(held_in.triplets, 200, 4002),
                                   PromptMode::TripletFormat);

    TrainConfig mem_tc;
    mem_tc.max_epochs = 150;
    mem_tc.seed = derive_seed(seed, "mem");
    const RunResult mem = run_training(Parameters::init(p.mc, derive_seed(seed, "init")), p.mc,
                                       p.vocab, p.data, p.eval_items, mem_tc,
                                       SampleMode::Importance);
    log << "  seed " << seed << ": memorization " << stop_reason_name(mem.reason) << " em "
        << mem.state.best_em;

    std::vector<QaPair> pairs = make_qa_pairs(held_in.triplets, templates);
    Rng split_rng(derive_seed(seed, "qa-split"));
    split_rng.shuffle(pairs);
    const std::size_t val_count = pairs.size() / 5;
    const std::vector<QaPair> val(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(val_count));
    const std::vector<QaPair> train(pairs.begin() + static_cast<std::ptrdiff_t>(val_count), pairs.end());
    const auto qa_train = encode_qa_pairs(p.vocab, train, p.mc.max_seq_len);
    const auto qa_val = qa_eval_items(val);

    TrainConfig qa_tc = TrainConfig::qa_defaults();
    qa_tc.em_stop_threshold = 1.01;  // patience-driven budget only
    qa_tc.eval_every = 0;
    qa_tc.seed = derive_seed(seed, "qa");

    const RunResult from_ckpt =
        qa_finetune(mem.best_params, p.mc, p.vocab, qa_train, qa_val, qa_tc);
    const RunResult from_fresh =
        qa_finetune(Parameters::init(p.mc, derive_seed(seed, "fresh")), p.mc, p.vocab, qa_train,
                    qa_val, qa_tc);
    const double gap = from_ckpt.state.best_f1 - from_fresh.state.best_f1;
    log << "; qa val F1 from checkpoint " << from_ckpt.state.best_f1 << " vs fresh "
        << from_fresh.state.best_f1 << " (gap " << gap << ")\n";
    gaps.push_back(gap);
  }
  const double med = median(gaps);
  log << "  median gap " << med << " (needs >= 0.10)\n";
  return med >= 0.10;
}

bool criterion_inverse_asymmetry(std::ostream& log, const std::vector<Parameters>& params3) {
  if (params3.size() < 3) {
    log << "  missing checkpoints from criterion 3\n";
    return false;
  }
  const auto kb = fixture_kb();
  const Prepared p = prepare(kb.triplets(), 500, 1001);
  const AliasMap aliases = fixture_aliases();
  std::vector<InverseRule> rules;
  for (const auto& r : builtin_inverse_rules()) rules.push_back(r.remapped(aliases));
  const InverseProbes probes = gen_inverse(kb, rules, 150, derive_seed(500, "probes"));
  log << "  probes: " << probes.forward.items.size() << " pairs\n";
  if (probes.forward.items.empty()) return false;

  std::vector<double> gaps;
  for (std::size_t i = 0; i < 3; ++i) {
    const EvalReport fwd =
        eval_probeset(params3[i], p.mc, p.vocab, probes.forward, PromptMode::TripletFormat, 8);
    const EvalReport inv =
        eval_probeset(params3[i], p.mc, p.vocab, probes.inverse, PromptMode::TripletFormat, 8);
    const double gap = fwd.f1 - inv.f1;
    log << "  seed " << (i + 1) << ": forward F1 " << fwd.f1 << ", inverse F1 " << inv.f1
        << " (gap " << gap << ")\n";
    gaps.push_back(gap);
  }
  const double med = median(gaps);
  log << "  median gap " << med << " (needs > 0.2)\n";
  return med > 0.2;
}

bool criterion_gradients(std::ostream& log) {
  const Vocab v = Vocab::from_tokens({"a", "b", "c", "d", "e"});
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 12;
  cfg.vocab_size = v.size();
  Parameters p = Parameters::init(cfg, 1);
  {
    Rng rng(2);
    for (auto& ref : tensor_refs(p)) {
      const bool is_scale = ref.name.find("scale") != std::string::npos;
      for (Eigen::Index i = 0; i < ref.tensor->size(); ++i) {
        ref.tensor->data()[i] = (is_scale ? 1.0 : 0.0) + 0.25 * rng.normal();
      }
    }
  }
  const Batch batch = {make_sample(v, "a b c", "d", 0, cfg.max_seq_len),
                       make_sample(v, "e a", "b c", 1, cfg.max_seq_len)};
  const GradResult analytic = loss_and_gradients(p, cfg, batch);
  auto p_refs = tensor_refs(p);
  auto g_refs = tensor_refs(analytic.grads);
  const double step = 1e-5;
  double worst = 0.0;
  std::string worst_tensor;
  for (std::size_t ti = 0; ti < p_refs.size(); ++ti) {
    MatrixXd& tensor = *p_refs[ti].tensor;
    for (Eigen::Index i = 0; i < tensor.size(); ++i) {
      const double saved = tensor.data()[i];
      tensor.data()[i] = saved + step;
      const double up = loss(p, cfg, batch).mean;
      tensor.data()[i] = saved - step;
      const double down = loss(p, cfg, batch).mean;
      tensor.data()[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double a = g_refs[ti].tensor->data()[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      if (rel > worst) {
        worst = rel;
        worst_tensor = p_refs[ti].name;
      }
    }
  }
  log << "  worst relative error " << worst << " in " << worst_tensor << " (limit 1e-4)\n";
  return worst <= 1e-4;
}

bool criterion_oracles(std::ostream& log) {
  bool ok = true;

  // metric fixtures
  ok &= exact_match("Town Hall", "town hall") == 1.0;
  ok &= exact_match("Romeis", "Leonhard Romeis") == 0.0;
  ok &= std::abs(token_f1("romeis", "leonhard romeis") - 2.0 / 3.0) < 1e-12;
  ok &= token_f1("apple", "banana") == 0.0;
  ok &= best_f1("sweden", {"Västeras", "Sweden"}) == 1.0;
  log << "  metric fixtures " << (ok ? "ok" : "FAILED") << "\n";
  if (!ok) return false;

  // stratify against the sort oracle on the engineered 20-triplet KB
  {
    std::vector<Triplet> raw;
    for (int i = 0; i < 12; ++i) raw.push_back({"s" + std::to_string(i), "big", "o" + std::to_string(i)});
    for (int i = 0; i < 8; ++i) {
      raw.push_back({"t" + std::to_string(i), "small" + std::to_string(i), "u" + std::to_string(i)});
    }
    const auto kb = KnowledgeBase::build(raw, 0);
    const auto idx = occurrence_counts(kb);
    const auto res = stratify(kb, idx, StratumSpec{StratumAxis::Relation, false, 0.05, 100}, 1);
    ok = res.qualifying == std::vector<std::string>{"big"} && res.available == 12;
    for (const auto& t : res.dataset.triplets) ok &= t.relation == "big";
    log << "  stratify sort-oracle " << (ok ? "ok" : "FAILED") << "\n";
    if (!ok) return false;
  }

  // probe pools vs brute force on 100 random KBs; zero membership violations
  const std::vector<std::string> rels = {"father", "child", "sibling", "country",
                                         "place of birth", "country of birth"};
  const std::vector<InverseRule> inv_rules = {{"father", "child"}, {"sibling", "sibling"}};
  const std::vector<CompositionRule> comp_rules = {
      {"place of birth", "country", "country of birth"}, {"father", "father", "grandfather"}};
  std::size_t violations = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<Triplet> raw;
    const std::size_t n = 50 + rng.below(451);  // up to 500
    const std::size_t ents = 8 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      raw.push_back(Triplet{"e" + std::to_string(rng.below(ents)), rels[rng.below(rels.size())],
                            "e" + std::to_string(rng.below(ents))});
    }
    const auto kb = KnowledgeBase::build(raw, seed);

    for (const auto& rule : inv_rules) {
      std::vector<std::size_t> brute;
      for (std::size_t i = 0; i < kb.size(); ++i) {
        const Triplet& t = kb.triplet(i);
        if (t.relation != rule.r) continue;
        if (!kb.contains_triplet(Triplet{t.object, rule.r_inv, t.subject})) brute.push_back(i);
      }
      if (inverse_pool(kb, rule) != brute) {
        log << "  inverse pool mismatch at seed " << seed << "\n";
        return false;
      }
    }
    for (const auto& rule : comp_rules) {
      std::vector<BridgeJoin> brute;
      for (const Triplet& t1 : kb.triplets()) {
        if (t1.relation != rule.r1) continue;
        for (const Triplet& t2 : kb.triplets()) {
          if (t2.relation != rule.r2 || t2.subject != t1.object) continue;
          if (t1.subject == t2.object) continue;
          if (kb.contains_triplet(Triplet{t1.subject, rule.r3, t2.object})) continue;
          brute.push_back(BridgeJoin{t1.subject, t1.object, t2.object});
        }
      }
      if (composition_pool(kb, rule) != brute) {
        log << "  composition pool mismatch at seed " << seed << "\n";
        return false;
      }
    }

    const auto inv = gen_inverse(kb, inv_rules, 20, seed);
    const auto comp = gen_composition(kb, comp_rules, 20, seed);
    for (const auto& item : inv.forward.items) violations += !kb.contains_triplet(item.query_triplet());
    for (const auto& item : inv.inverse.items) violations += kb.contains_triplet(item.query_triplet());
    for (const auto& item : comp.conditions.items) violations += !kb.contains_triplet(item.query_triplet());
    for (const auto& item : comp.conclusions.items) violations += kb.contains_triplet(item.query_triplet());
  }
  log << "  probe pools match brute force on 100 KBs; membership violations " << violations << "\n";
  return violations == 0;
}

bool criterion_sampler_stats(std::ostream& log) {
  // pair-inclusion frequencies vs the sequential-selection oracle
  const std::vector<double> w = {5, 4, 3, 2, 1};
  const double W = 15.0;
  std::map<std::pair<std::size_t, std::size_t>, double> oracle;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = i + 1; j < w.size(); ++j) {
      oracle[{i, j}] = w[i] / W * w[j] / (W - w[i]) + w[j] / W * w[i] / (W - w[j]);
    }
  }
  Rng rng(7);
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  const int draws = 200000;
  for (int d = 0; d < draws; ++d) {
    auto s = sample_subset(w, 2, rng);
    if (s[0] > s[1]) std::swap(s[0], s[1]);
    ++counts[{s[0], s[1]}];
  }
  double worst = 0;
  for (const auto& [pair, prob] : oracle) {
    worst = std::max(worst, std::abs(static_cast<double>(counts[pair]) / draws - prob));
  }
  log << "  worst pair-frequency deviation " << worst << " (limit 0.01)\n";
  if (worst >= 0.01) return false;

  // coverage at n = 10^4 within ceil(2/alpha) epochs, five seeds
  const std::size_t n = 10000;
  TrainConfig tc;
  const std::size_t epochs = static_cast<std::size_t>(std::ceil(2.0 / tc.alpha));
  const std::size_t k = percentile_cut(tc.alpha, n);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng cov_rng(seed);
    std::vector<double> importance(n, tc.init_importance);
    std::vector<bool> seen(n, false);
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t idx : sample_subset(importance, k, cov_rng)) {
        seen[idx] = true;
        importance[idx] = std::max(0.1 + 5.0 * cov_rng.uniform01(), tc.importance_floor);
      }
    }
    const std::size_t covered = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
    log << "  seed " << seed << ": coverage " << covered << "/" << n << " after " << epochs
        << " epochs\n";
    if (static_cast<double>(covered) < 0.99 * static_cast<double>(n)) return false;
  }
  return true;
}

// --- criterion 9 helpers: run the CLI twice and compare bytes

int run_cmd(const std::string& args) {
  const std::string cmd = std::string(KBLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

std::string slurp_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return "<missing:" + path + ">";
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// curve CSVs are compared without the wall-clock seconds column
std::string strip_seconds_column(const std::string& csv) {
  std::istringstream is(csv);
  std::ostringstream os;
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t comma = line.rfind(',');
    os << (comma == std::string::npos ? line : line.substr(0, comma)) << '\n';
  }
  return os.str();
}

// Re-running the identical commands into the same location must reproduce
// every output byte (curve CSVs modulo the wall-clock seconds column).
bool criterion_determinism(std::ostream& log) {
  const fs::path root = fs::temp_directory_path() / "kblab_acceptance_det";
  const fs::path work = root / "work";
  const fs::path rules_path = root / "inv_rules.tsv";

  auto pipeline = [&]() -> bool {
    fs::remove_all(work);
    if (run_cmd("synth --entities 80 --relations 8 --triplets 400 --seed 21 --out " +
                (work / "kb").string()) != 0) return false;
    const std::string kb = (work / "kb" / "kb.tsv").string();
    if (run_cmd("strata --kb " + kb + " --sample 30 --seed 21 --out " + (work / "strata").string()) != 0)
      return false;
    if (run_cmd("train --kb " + kb +
                " --d-model 32 --layers 1 --heads 2 --batch 16 --max-epochs 3 --eval-every 0"
                " --eval-size 40 --em-stop 1.01 --patience 1000 --seed 21 --out " +
                (work / "train").string()) != 0) return false;
    if (run_cmd("eval --ckpt " + (work / "train" / "checkpoint_best.kbck").string() + " --dataset " +
                kb + " --seed 21 --out " + (work / "eval").string()) != 0) return false;
    if (run_cmd("probes gen --kb " + kb + " --per-rule 10 --inverse-rules " + rules_path.string() +
                " --seed 21 --out " + (work / "probes").string()) != 0) return false;
    return true;
  };

  auto snapshot = [&]() {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(work)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), work).string();
      std::string bytes = slurp_file(entry.path().string());
      if (entry.path().filename() == "curve.csv") bytes = strip_seconds_column(bytes);
      files[rel] = std::move(bytes);
    }
    return files;
  };

  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream rules(rules_path.string());
    rules << "r00\tr01\n";
  }

  if (!pipeline()) {
    log << "  first pipeline run failed\n";
    return false;
  }
  const auto first = snapshot();
  if (!pipeline()) {
    log << "  second pipeline run failed\n";
    return false;
  }
  const auto second = snapshot();

  if (first.size() != second.size()) {
    log << "  file sets differ: " << first.size() << " vs " << second.size() << "\n";
    return false;
  }
  for (const auto& [rel, bytes] : first) {
    auto it = second.find(rel);
    if (it == second.end()) {
      log << "  missing on re-run: " << rel << "\n";
      return false;
    }
    if (it->second != bytes) {
      log << "  mismatch: " << rel << "\n";
      return false;
    }
  }
  log << "  " << first.size() << " files reproduced byte-exactly (curves modulo seconds)\n";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  std::cout << std::unitbuf;  // stream progress lines immediately
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    if (arg == "--list") {
      std::cout << "1 importance-sampling speedup\n2 memorization capacity\n"
                   "3 popular-vs-tail gap\n4 free-form recall transfer\n"
                   "5 inverse-reasoning asymmetry\n6 gradient correctness\n"
                   "7 metric/stratification/probe oracles\n8 sampler statistics\n"
                   "9 command determinism\n";
      return 0;
    }
  }

  struct Entry {
    int id;
    std::string name;
    std::function<bool(std::ostream&)> run;
  };

  // criterion 5 consumes criterion 3's final checkpoints
  std::vector<Parameters> c3_params;
  std::vector<Entry> entries = {
      {1, "importance sampling reaches 0.90 EM in fewer steps than uniform (median of 5 seeds)",
       criterion_speedup},
      {2, "1,000-triplet KB memorized to the 0.96 EM stop within 200 epochs", criterion_capacity},
      {3, "popular strata recalled at least as well as long-tail strata (median of 5 seeds)",
       [&](std::ostream& log) {
         auto out = criterion_popular_vs_tail(log);
         c3_params = std::move(out.first3_params);
         return out.pass;
       }},
      {4, "QA finetuning from a memorization checkpoint beats fresh init by >= 0.10 F1 (median of 3 seeds)",
       criterion_qa_transfer},
      {5, "forward minus inverse probe F1 gap exceeds 0.2 (median of 3 seeds)",
       [&](std::ostream& log) { return criterion_inverse_asymmetry(log, c3_params); }},
      {6, "analytic gradients match central finite differences within 1e-4 relative",
       criterion_gradients},
      {7, "metric, stratification and probe-pool oracles agree exactly", criterion_oracles},
      {8, "sampler pair frequencies and coverage match the oracles", criterion_sampler_stats},
      {9, "re-running commands reproduces outputs bit-exactly", criterion_determinism},
  };

  int failures = 0;
  for (auto& e : entries) {
    if (only != 0 && e.id != only && !(only == 5 && e.id == 3)) continue;
    std::cout << "== criterion " << e.id << ": " << e.name << "\n" << std::flush;
    bool pass = false;
    try {
      pass = e.run(std::cout);
    } catch (const std::exception& ex) {
      std::cout << "  exception: " << ex.what() << "\n";
    }
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << e.id << ": " << e.name << "\n"
              << std::flush;
    if (!pass) ++failures;
  }
  if (failures == 0) {
    std::cout << "all criteria passed\n";
  } else {
    std::cout << failures << " criteria failed\n";
  }
  return failures;
}
