// Batch experiment front end: ingest -> kb -> train -> eval -> probes.
// Every command writes its outputs plus a manifest (config snapshot, seed,
// input digests, tool version) into --out; re-running with the same config
// and seed reproduces the outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kblab/kblab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Files created by the running command; removed again if it fails so a
// non-zero exit never leaves partial outputs behind.
class OutputTracker {
 public:
  std::string track(const std::string& path) {
    files_.push_back(path);
    return path;
  }
  void discard_all() {
    for (const auto& f : files_) {
      std::error_code ec;
      fs::remove(f, ec);
    }
  }
  const std::vector<std::string>& files() const { return files_; }

 private:
  std::vector<std::string> files_;
};

std::string resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("KBLAB_OUT_ROOT"); env && *env) return env;
  throw std::runtime_error("no output directory: pass --out or set KBLAB_OUT_ROOT");
}

// A config file is either an experiment config or a manifest from a previous
// run (in which case its embedded config snapshot is used).
json load_config_file(const std::string& path) {
  json j = kblab::read_json(path);
  if (j.contains("tool") && j.contains("config")) return j.at("config");
  return j;
}

template <class T>
T cfg_get(const json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

json cfg_section(const json& j, const std::string& key) {
  return j.contains(key) ? j.at(key) : json::object();
}

kblab::ModelConfig model_from_json(const json& j) {
  kblab::ModelConfig mc;
  mc.d_model = cfg_get(j, "d_model", mc.d_model);
  mc.n_layers = cfg_get(j, "n_layers", mc.n_layers);
  mc.n_heads = cfg_get(j, "n_heads", mc.n_heads);
  mc.max_seq_len = cfg_get(j, "max_seq_len", mc.max_seq_len);
  return mc;
}

json model_to_json(const kblab::ModelConfig& mc) {
  return json{{"d_model", mc.d_model},
              {"n_layers", mc.n_layers},
              {"n_heads", mc.n_heads},
              {"max_seq_len", mc.max_seq_len},
              {"vocab_size", mc.vocab_size}};
}

kblab::TrainConfig train_from_json(const json& j, kblab::TrainConfig base = {}) {
  kblab::TrainConfig tc = base;
  tc.alpha = cfg_get(j, "alpha", tc.alpha);
  tc.init_importance = cfg_get(j, "init_importance", tc.init_importance);
  tc.importance_floor = cfg_get(j, "importance_floor", tc.importance_floor);
  tc.batch_size = cfg_get(j, "batch_size", tc.batch_size);
  tc.learning_rate = cfg_get(j, "learning_rate", tc.learning_rate);
  tc.max_epochs = cfg_get(j, "max_epochs", tc.max_epochs);
  tc.eval_every = cfg_get(j, "eval_every", tc.eval_every);
  tc.patience_epochs = cfg_get(j, "patience_epochs", tc.patience_epochs);
  tc.em_stop_threshold = cfg_get(j, "em_stop_threshold", tc.em_stop_threshold);
  tc.resample_per_batch = cfg_get(j, "resample_per_batch", tc.resample_per_batch);
  tc.eval_max_new = cfg_get(j, "eval_max_new", tc.eval_max_new);
  return tc;
}

json train_to_json(const kblab::TrainConfig& tc) {
  return json{{"alpha", tc.alpha},
              {"init_importance", tc.init_importance},
              {"importance_floor", tc.importance_floor},
              {"batch_size", tc.batch_size},
              {"learning_rate", tc.learning_rate},
              {"max_epochs", tc.max_epochs},
              {"eval_every", tc.eval_every},
              {"patience_epochs", tc.patience_epochs},
              {"em_stop_threshold", tc.em_stop_threshold},
              {"resample_per_batch", tc.resample_per_batch},
              {"eval_max_new", tc.eval_max_new}};
}

kblab::SynthSpec synth_from_json(const json& j) {
  kblab::SynthSpec spec;
  spec.n_entities = cfg_get<std::size_t>(j, "entities", spec.n_entities);
  spec.n_relations = cfg_get<std::size_t>(j, "relations", spec.n_relations);
  spec.n_triplets = cfg_get<std::size_t>(j, "triplets", spec.n_triplets);
  spec.zipf_exponent = cfg_get(j, "zipf", spec.zipf_exponent);
  return spec;
}

json synth_to_json(const kblab::SynthSpec& s) {
  return json{{"entities", s.n_entities},
              {"relations", s.n_relations},
              {"triplets", s.n_triplets},
              {"zipf", s.zipf_exponent}};
}

kblab::KnowledgeBase load_kb(const std::string& path) {
  auto parsed = kblab::read_triplets_tsv(path);
  if (!parsed.issues.empty()) {
    std::cerr << "warning: " << parsed.issues.size() << " malformed lines in " << path << "\n";
  }
  return kblab::KnowledgeBase::build(parsed.triplets, 0);
}

// Commands that consume a KB accept exactly one of a kb path or a synth
// spec; a spec is generated (and the canonical TSV kept next to the other
// outputs) so desk experiments are one command.
kblab::KnowledgeBase obtain_kb(const json& cfg, const std::string& kb_flag, std::uint64_t seed,
                               const std::string& out_dir, OutputTracker& outputs,
                               std::vector<std::string>& inputs) {
  const std::string kb_path = kb_flag.empty() ? cfg_get<std::string>(cfg, "kb", "") : kb_flag;
  const bool have_synth = cfg.contains("synth");
  if (!kb_path.empty() && have_synth) {
    throw std::runtime_error("config supplies both a kb path and a synth spec; pick one");
  }
  if (kb_path.empty() && !have_synth) {
    throw std::runtime_error("no KB: pass --kb or put a 'kb' path or 'synth' spec in the config");
  }
  if (!kb_path.empty()) {
    inputs.push_back(kb_path);
    return load_kb(kb_path);
  }
  kblab::SynthSpec spec = synth_from_json(cfg.at("synth"));
  spec.seed = kblab::derive_seed(seed, "synth");
  auto kb = kblab::KnowledgeBase::build(kblab::gen_synthetic(spec), kblab::derive_seed(seed, "dedup"));
  kblab::write_triplets_tsv(outputs.track(out_dir + "/kb.tsv"), kb.triplets());
  return kb;
}

struct TemplateSetup {
  std::optional<kblab::TemplateTable> table;  // already remapped when aliases apply
  kblab::AliasMap aliases;
};

TemplateSetup load_templates(const std::string& templates_path, const std::string& aliases_path,
                             bool use_builtin, std::vector<std::string>& inputs) {
  TemplateSetup setup;
  if (!templates_path.empty()) {
    inputs.push_back(templates_path);
    setup.table = kblab::TemplateTable::load_tsv(templates_path);
  } else if (use_builtin) {
    setup.table = kblab::TemplateTable::builtin();
  }
  if (!aliases_path.empty()) {
    inputs.push_back(aliases_path);
    setup.aliases = kblab::AliasMap::load_tsv(aliases_path);
    if (setup.table) setup.table = setup.table->remapped(setup.aliases);
  }
  return setup;
}

json curve_summary(const kblab::RunResult& r) {
  return json{{"stop_reason", kblab::stop_reason_name(r.reason)},
              {"epochs", r.state.epoch},
              {"steps", r.state.step},
              {"best_f1", r.state.best_f1},
              {"best_em", r.state.best_em},
              {"best_step", r.state.best_step}};
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : kblab::split_on(s, ',')) {
    if (!kblab::trim(part).empty()) seeds.push_back(std::stoull(kblab::trim(part)));
  }
  if (seeds.empty()) throw std::runtime_error("empty seed list");
  return seeds;
}

std::vector<double> parse_threshold_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : kblab::split_on(s, ',')) {
    if (!kblab::trim(part).empty()) out.push_back(std::stod(kblab::trim(part)));
  }
  if (out.empty()) throw std::runtime_error("empty threshold list");
  return out;
}

// ---------------------------------------------------------------- commands

struct CommonArgs {
  std::string config_path;
  std::string out_flag;
  std::uint64_t seed = 0;
  bool seed_set = false;

  json config;
  std::string out_dir;

  void prepare() {
    if (!config_path.empty()) config = load_config_file(config_path);
    else config = json::object();
    if (!seed_set && config.contains("seed")) seed = config.at("seed").get<std::uint64_t>();
    std::string out = out_flag.empty() ? cfg_get<std::string>(config, "out", "") : out_flag;
    out_dir = resolve_out_dir(out);
    fs::create_directories(out_dir);
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON (or a previous manifest)");
    cmd->add_option("--out", out_flag, "output directory (default $KBLAB_OUT_ROOT)");
    cmd->add_option("--seed", seed, "global seed; per-stage seeds derive from it")
        ->each([this](const std::string&) { seed_set = true; });
  }
};

int cmd_synth(CommonArgs& common, const json& synth_overrides) {
  OutputTracker outputs;
  try {
    json synth_cfg = cfg_section(common.config, "synth");
    for (auto& [k, v] : synth_overrides.items()) synth_cfg[k] = v;
    kblab::SynthSpec spec = synth_from_json(synth_cfg);
    spec.seed = kblab::derive_seed(common.seed, "synth");

    const auto raw = kblab::gen_synthetic(spec);
    const auto kb = kblab::KnowledgeBase::build(raw, kblab::derive_seed(common.seed, "dedup"));
    const auto occ = kblab::occurrence_counts(kb);

    kblab::write_triplets_tsv(outputs.track(common.out_dir + "/kb.tsv"), kb.triplets());
    kblab::write_occurrence_tsv(outputs.track(common.out_dir + "/entity_counts.tsv"),
                                occ.entity_counts);
    kblab::write_occurrence_tsv(outputs.track(common.out_dir + "/relation_counts.tsv"),
                                occ.relation_counts);

    json cfg_snapshot = common.config;
    cfg_snapshot["synth"] = synth_to_json(spec);
    json manifest = kblab::make_manifest("synth", common.seed, cfg_snapshot, {});
    manifest["counts"] = {{"raw_triplets", raw.size()},
                          {"kb_triplets", kb.size()},
                          {"entities", occ.entity_counts.size()},
                          {"relations", occ.relation_counts.size()}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    std::cout << "kb.tsv: " << kb.size() << " triplets\n";
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_ingest(CommonArgs& common, const std::string& in_path, const std::string& allowlist_path,
               bool keep_urls, bool keep_coordinates, bool keep_images) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs{in_path};
    kblab::FilterRules rules;
    rules.drop_url_objects = !keep_urls;
    rules.drop_coordinate_objects = !keep_coordinates;
    rules.drop_image_objects = !keep_images;
    if (!allowlist_path.empty()) {
      inputs.push_back(allowlist_path);
      std::ifstream al(allowlist_path);
      if (!al) throw std::runtime_error("cannot open " + allowlist_path);
      std::set<std::string> allow;
      std::string line;
      while (std::getline(al, line)) {
        const std::string name = kblab::trim(line);
        if (!name.empty()) allow.insert(name);
      }
      rules.subject_allowlist = std::move(allow);
      rules.validate();
    }

    std::ifstream in(in_path);
    if (!in) throw std::runtime_error("cannot open " + in_path);
    std::vector<kblab::Triplet> kept;
    std::vector<kblab::ParseIssue> issues;
    std::vector<kblab::FilterLogEntry> filter_log;
    std::map<std::string, std::size_t> filtered_counts;
    kblab::ParseStats stats = kblab::parse_stream_lines(
        in,
        [&](kblab::Triplet t, std::size_t line_no) {
          const kblab::FilterReason reason = kblab::apply_filters(t, rules);
          if (reason == kblab::FilterReason::Kept) {
            kept.push_back(std::move(t));
          } else {
            filter_log.push_back({line_no, reason});
            ++filtered_counts[kblab::filter_reason_name(reason)];
          }
        },
        &issues);

    const auto kb = kblab::KnowledgeBase::build(kept, kblab::derive_seed(common.seed, "dedup"));
    const auto occ = kblab::occurrence_counts(kb);

    kblab::write_triplets_tsv(outputs.track(common.out_dir + "/kb.tsv"), kb.triplets());
    kblab::write_occurrence_tsv(outputs.track(common.out_dir + "/entity_counts.tsv"),
                                occ.entity_counts);
    kblab::write_occurrence_tsv(outputs.track(common.out_dir + "/relation_counts.tsv"),
                                occ.relation_counts);
    {
      std::ofstream flog(outputs.track(common.out_dir + "/filter_log.tsv"));
      kblab::write_filter_log(flog, filter_log);
      std::ofstream plog(outputs.track(common.out_dir + "/parse_log.tsv"));
      for (const auto& issue : issues) plog << issue.line << '\t' << issue.reason << '\n';
    }

    json manifest = kblab::make_manifest("ingest", common.seed, common.config, inputs);
    manifest["counts"] = {{"kept", stats.kept},
                          {"skipped", stats.skipped},
                          {"filtered", filtered_counts},
                          {"after_filters", kept.size()},
                          {"kb_triplets", kb.size()}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    std::cout << "kept " << stats.kept << ", skipped " << stats.skipped << ", kb " << kb.size()
              << " triplets\n";
    if (kb.empty()) std::cerr << "warning: resulting KB is empty\n";
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_strata(CommonArgs& common, const std::string& kb_flag, std::size_t sample_size,
               double tail_pct, double pop_pct) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs;
    const auto kb = obtain_kb(common.config, kb_flag, common.seed, common.out_dir, outputs, inputs);
    const auto occ = kblab::occurrence_counts(kb);

    std::vector<kblab::StratumSpec> specs = {
        {kblab::StratumAxis::Entity, false, pop_pct, sample_size},
        {kblab::StratumAxis::Relation, false, pop_pct, sample_size},
        {kblab::StratumAxis::Entity, true, tail_pct, sample_size},
        {kblab::StratumAxis::Relation, true, tail_pct, sample_size},
    };
    json availability = json::object();
    for (const auto& spec : specs) {
      const auto result =
          kblab::stratify(kb, occ, spec, kblab::derive_seed(common.seed, "strata:" + spec.name()));
      kblab::write_triplets_tsv(outputs.track(common.out_dir + "/" + spec.name() + ".tsv"),
                                result.dataset.triplets);
      availability[spec.name()] = {{"available", result.available},
                                   {"sampled", result.dataset.triplets.size()},
                                   {"qualifying", result.qualifying.size()}};
      if (result.available < sample_size) {
        std::cerr << "note: stratum " << spec.name() << " under-supplied (" << result.available
                  << " < " << sample_size << ")\n";
      }
    }

    json cfg_snapshot = common.config;
    cfg_snapshot["strata_sample_size"] = sample_size;
    cfg_snapshot["tail_percentile"] = tail_pct;
    cfg_snapshot["popular_percentile"] = pop_pct;
    json manifest = kblab::make_manifest("strata", common.seed, cfg_snapshot, inputs);
    manifest["strata"] = availability;
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

struct TrainArgs {
  std::string kb_path;
  std::string mode = "importance";
  std::string resume_path;
  std::string templates_path;
  std::string aliases_path;
  bool builtin_templates = false;
  std::size_t eval_size = 10000;
};

int cmd_train(CommonArgs& common, const TrainArgs& args, const json& model_overrides,
              const json& train_overrides) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs;
    json model_cfg_json = cfg_section(common.config, "model");
    for (auto& [k, v] : model_overrides.items()) model_cfg_json[k] = v;
    json train_cfg_json = cfg_section(common.config, "train");
    for (auto& [k, v] : train_overrides.items()) train_cfg_json[k] = v;

    kblab::TrainConfig tc = train_from_json(train_cfg_json);
    tc.seed = kblab::derive_seed(common.seed, "train");
    const kblab::SampleMode mode = kblab::parse_sample_mode(args.mode);
    const std::size_t eval_size = cfg_get(common.config, "eval_size", args.eval_size);

    const auto kb = obtain_kb(common.config, args.kb_path, common.seed, common.out_dir, outputs, inputs);
    if (kb.empty()) throw std::runtime_error("KB is empty; nothing to train on");

    TemplateSetup tpl = load_templates(args.templates_path, args.aliases_path,
                                       args.builtin_templates, inputs);

    kblab::ModelConfig mc;
    kblab::Vocab vocab;
    kblab::Parameters params;
    std::optional<kblab::TrainState> resumed;
    if (!args.resume_path.empty()) {
      inputs.push_back(args.resume_path);
      kblab::Checkpoint ckpt = kblab::load_checkpoint(args.resume_path);
      mc = ckpt.config;
      vocab = ckpt.vocab();
      params = std::move(ckpt.params);
      resumed = ckpt.train_state(tc);
      if (resumed->importance.size() != kb.size()) {
        throw std::runtime_error("checkpoint importance length " +
                                 std::to_string(resumed->importance.size()) +
                                 " does not match KB size " + std::to_string(kb.size()));
      }
    } else {
      mc = model_from_json(model_cfg_json);
      vocab = kblab::Vocab::build(kblab::vocab_corpus(kb.triplets(), tpl.table ? &*tpl.table : nullptr));
      mc.vocab_size = vocab.size();
      mc.validate();
      params = kblab::Parameters::init(mc, kblab::derive_seed(common.seed, "init"));
    }

    const auto data = kblab::encode_triplets(kb.triplets(), vocab, mc.max_seq_len);
    const auto eval_set = kblab::sample_triplets(kb.triplets(), eval_size, kblab::derive_seed(common.seed, "eval-set"));
    const auto eval_items = kblab::make_eval_items(eval_set, kblab::PromptMode::TripletFormat);

    kblab::RunResult run = kblab::run_training(std::move(params), mc, vocab, data, eval_items, tc,
                                               mode, resumed ? &*resumed : nullptr);

    kblab::write_curve_csv(outputs.track(common.out_dir + "/curve.csv"), run.curve);
    kblab::save_checkpoint(outputs.track(common.out_dir + "/checkpoint_best.kbck"),
                           kblab::make_checkpoint(mc, vocab, run.best_params, run.state));
    kblab::save_checkpoint(outputs.track(common.out_dir + "/checkpoint_final.kbck"),
                           kblab::make_checkpoint(mc, vocab, run.final_params, run.state));

    json cfg_snapshot = common.config;
    cfg_snapshot["model"] = model_to_json(mc);
    cfg_snapshot["train"] = train_to_json(tc);
    cfg_snapshot["mode"] = args.mode;
    cfg_snapshot["eval_size"] = eval_size;
    json manifest = kblab::make_manifest("train", common.seed, cfg_snapshot, inputs);
    manifest["result"] = curve_summary(run);
    manifest["counts"] = {{"kb_triplets", kb.size()}, {"eval_samples", eval_items.size()}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);

    std::cout << "stopped: " << kblab::stop_reason_name(run.reason) << " after "
              << run.state.epoch << " epochs, " << run.state.step << " steps; best em "
              << run.state.best_em << ", best f1 " << run.state.best_f1 << "\n";
    if (run.reason == kblab::StopReason::NonFiniteLoss) {
      std::cerr << "error: training aborted on non-finite loss; diagnostic checkpoint kept\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_compare(CommonArgs& common, const TrainArgs& args, const json& model_overrides,
                const json& train_overrides, const std::string& seeds_str,
                const std::string& thresholds_str) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs;
    json model_cfg_json = cfg_section(common.config, "model");
    for (auto& [k, v] : model_overrides.items()) model_cfg_json[k] = v;
    json train_cfg_json = cfg_section(common.config, "train");
    for (auto& [k, v] : train_overrides.items()) train_cfg_json[k] = v;

    const auto seeds = parse_seed_list(seeds_str);
    const auto thresholds = parse_threshold_list(thresholds_str);
    const std::size_t eval_size = cfg_get(common.config, "eval_size", args.eval_size);

    const auto kb = obtain_kb(common.config, args.kb_path, common.seed, common.out_dir, outputs, inputs);
    if (kb.empty()) throw std::runtime_error("KB is empty");
    TemplateSetup tpl = load_templates(args.templates_path, args.aliases_path,
                                       args.builtin_templates, inputs);

    kblab::ModelConfig mc = model_from_json(model_cfg_json);
    kblab::Vocab vocab = kblab::Vocab::build(kblab::vocab_corpus(kb.triplets(), tpl.table ? &*tpl.table : nullptr));
    mc.vocab_size = vocab.size();
    mc.validate();

    const auto data = kblab::encode_triplets(kb.triplets(), vocab, mc.max_seq_len);
    const auto eval_set = kblab::sample_triplets(kb.triplets(), eval_size, kblab::derive_seed(common.seed, "eval-set"));
    const auto eval_items = kblab::make_eval_items(eval_set, kblab::PromptMode::TripletFormat);

    json summary = json::object();
    summary["thresholds"] = thresholds;
    summary["seeds"] = json::object();
    for (std::uint64_t seed : seeds) {
      kblab::TrainConfig tc = train_from_json(train_cfg_json);
      tc.seed = kblab::derive_seed(seed, "train");
      kblab::Parameters init = kblab::Parameters::init(mc, kblab::derive_seed(seed, "init"));
      kblab::ConvergenceComparison cmp =
          kblab::compare_convergence(init, mc, vocab, data, eval_items, tc, thresholds);

      const std::string tag = "_s" + std::to_string(seed);
      kblab::write_curve_csv(outputs.track(common.out_dir + "/curve_importance" + tag + ".csv"),
                             cmp.importance_run.curve);
      kblab::write_curve_csv(outputs.track(common.out_dir + "/curve_uniform" + tag + ".csv"),
                             cmp.uniform_run.curve);

      json per_seed;
      for (std::size_t i = 0; i < thresholds.size(); ++i) {
        const std::string key = kblab::format_double(thresholds[i]);
        per_seed["importance"][key] =
            cmp.importance_steps[i] ? json(*cmp.importance_steps[i]) : json(nullptr);
        per_seed["uniform"][key] =
            cmp.uniform_steps[i] ? json(*cmp.uniform_steps[i]) : json(nullptr);
      }
      per_seed["importance_summary"] = curve_summary(cmp.importance_run);
      per_seed["uniform_summary"] = curve_summary(cmp.uniform_run);
      summary["seeds"][std::to_string(seed)] = per_seed;
      std::cout << "seed " << seed << " done\n";
    }
    kblab::write_json(outputs.track(common.out_dir + "/summary.json"), summary);

    json cfg_snapshot = common.config;
    cfg_snapshot["model"] = model_to_json(mc);
    cfg_snapshot["train"] = train_to_json(train_from_json(train_cfg_json));
    cfg_snapshot["eval_size"] = eval_size;
    json manifest = kblab::make_manifest("compare", common.seed, cfg_snapshot, inputs);
    manifest["counts"] = {{"kb_triplets", kb.size()}, {"eval_samples", eval_items.size()}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_qa(CommonArgs& common, const std::string& ckpt_path, bool fresh_init,
           const std::string& dataset_path, const std::string& qa_tsv_path,
           const std::string& templates_path, const std::string& aliases_path,
           bool builtin_templates, double val_frac, const json& train_overrides) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs{ckpt_path};
    kblab::Checkpoint ckpt = kblab::load_checkpoint(ckpt_path);
    const kblab::ModelConfig mc = ckpt.config;
    const kblab::Vocab vocab = ckpt.vocab();

    TemplateSetup tpl = load_templates(templates_path, aliases_path, builtin_templates, inputs);

    std::vector<kblab::QaPair> pairs;
    if (!qa_tsv_path.empty()) {
      inputs.push_back(qa_tsv_path);
      std::ifstream in(qa_tsv_path);
      if (!in) throw std::runtime_error("cannot open " + qa_tsv_path);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (kblab::trim(line).empty()) continue;
        const auto fields = kblab::split_tabs(line);
        if (fields.size() != 2) {
          throw std::runtime_error(qa_tsv_path + ":" + std::to_string(line_no) +
                                   ": expected question<TAB>answer");
        }
        pairs.push_back({kblab::trim(fields[0]), kblab::trim(fields[1])});
      }
    } else if (!dataset_path.empty()) {
      if (!tpl.table) throw std::runtime_error("--dataset needs --templates or --builtin-templates");
      inputs.push_back(dataset_path);
      auto parsed = kblab::read_triplets_tsv(dataset_path);
      std::size_t skipped = 0;
      pairs = kblab::make_qa_pairs(parsed.triplets, *tpl.table, &skipped);
      if (skipped > 0) {
        std::cerr << "note: " << skipped << " triplets had no question template\n";
      }
    } else {
      throw std::runtime_error("pass --dataset (triplet TSV) or --qa-tsv (question/answer TSV)");
    }
    if (pairs.empty()) throw std::runtime_error("no QA pairs to finetune on");

    kblab::Rng split_rng(kblab::derive_seed(common.seed, "qa-split"));
    split_rng.shuffle(pairs);
    const std::size_t val_count =
        std::min(pairs.size() - 1, static_cast<std::size_t>(val_frac * static_cast<double>(pairs.size())));
    std::vector<kblab::QaPair> val(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(val_count));
    std::vector<kblab::QaPair> train(pairs.begin() + static_cast<std::ptrdiff_t>(val_count), pairs.end());

    json train_cfg_json = cfg_section(common.config, "train");
    for (auto& [k, v] : train_overrides.items()) train_cfg_json[k] = v;
    kblab::TrainConfig tc = train_from_json(train_cfg_json, kblab::TrainConfig::qa_defaults());
    tc.seed = kblab::derive_seed(common.seed, "qa-train");

    kblab::Parameters start = fresh_init
                                  ? kblab::Parameters::init(mc, kblab::derive_seed(common.seed, "init"))
                                  : std::move(ckpt.params);

    const auto qa_train = kblab::encode_qa_pairs(vocab, train, mc.max_seq_len);
    const auto qa_val = kblab::qa_eval_items(val);
    kblab::RunResult run = kblab::qa_finetune(std::move(start), mc, vocab, qa_train, qa_val, tc);

    kblab::write_curve_csv(outputs.track(common.out_dir + "/qa_curve.csv"), run.curve);
    kblab::save_checkpoint(outputs.track(common.out_dir + "/qa_checkpoint.kbck"),
                           kblab::make_checkpoint(mc, vocab, run.best_params, run.state));

    json cfg_snapshot = common.config;
    cfg_snapshot["train"] = train_to_json(tc);
    cfg_snapshot["fresh_init"] = fresh_init;
    cfg_snapshot["val_frac"] = val_frac;
    json manifest = kblab::make_manifest("qa", common.seed, cfg_snapshot, inputs);
    manifest["result"] = curve_summary(run);
    manifest["counts"] = {{"qa_pairs", pairs.size()},
                          {"train_pairs", train.size()},
                          {"val_pairs", val.size()}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    std::cout << "best val f1 " << run.state.best_f1 << " (" << kblab::stop_reason_name(run.reason)
              << ")\n";
    return run.reason == kblab::StopReason::NonFiniteLoss ? 1 : 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(CommonArgs& common, const std::string& ckpt_path, const std::string& dataset_path,
             const std::string& mode_str, const std::vector<std::string>& strata_args,
             const std::string& templates_path, const std::string& aliases_path,
             bool builtin_templates, int max_new) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs{ckpt_path, dataset_path};
    kblab::Checkpoint ckpt = kblab::load_checkpoint(ckpt_path);
    const kblab::Vocab vocab = ckpt.vocab();

    TemplateSetup tpl = load_templates(templates_path, aliases_path, builtin_templates, inputs);
    const kblab::PromptMode mode =
        mode_str == "question" ? kblab::PromptMode::Question : kblab::PromptMode::TripletFormat;
    if (mode_str != "question" && mode_str != "triplet") {
      throw std::runtime_error("unknown eval mode '" + mode_str + "' (triplet|question)");
    }

    kblab::Dataset ds;
    ds.name = fs::path(dataset_path).stem().string();
    ds.triplets = kblab::read_triplets_tsv(dataset_path).triplets;

    std::vector<kblab::Dataset> strata;
    for (const auto& arg : strata_args) {
      const auto eq = arg.find('=');
      if (eq == std::string::npos) throw std::runtime_error("--strata needs name=path, got " + arg);
      kblab::Dataset stratum;
      stratum.name = arg.substr(0, eq);
      const std::string path = arg.substr(eq + 1);
      inputs.push_back(path);
      stratum.triplets = kblab::read_triplets_tsv(path).triplets;
      strata.push_back(std::move(stratum));
    }

    const kblab::EvalReport report =
        kblab::evaluate_dataset(ckpt.params, ckpt.config, vocab, ds, mode, max_new,
                                tpl.table ? &*tpl.table : nullptr, strata.empty() ? nullptr : &strata);

    kblab::write_report_json(outputs.track(common.out_dir + "/report.json"), report);
    kblab::write_samples_tsv(outputs.track(common.out_dir + "/samples.tsv"), report);

    json manifest = kblab::make_manifest("eval", common.seed, common.config, inputs);
    manifest["result"] = {{"n", report.n}, {"em", report.em}, {"f1", report.f1}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    std::cout << "n " << report.n << " em " << report.em << " f1 " << report.f1 << "\n";
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_probes_gen(CommonArgs& common, const std::string& kb_flag, std::size_t per_rule,
                   const std::string& inverse_rules_path, const std::string& composition_rules_path,
                   const std::string& aliases_path) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs;
    const auto kb = obtain_kb(common.config, kb_flag, common.seed, common.out_dir, outputs, inputs);

    std::vector<kblab::InverseRule> inv_rules = inverse_rules_path.empty()
                                                    ? kblab::builtin_inverse_rules()
                                                    : kblab::load_inverse_rules(inverse_rules_path);
    if (!inverse_rules_path.empty()) inputs.push_back(inverse_rules_path);
    std::vector<kblab::CompositionRule> comp_rules =
        composition_rules_path.empty() ? kblab::builtin_composition_rules()
                                       : kblab::load_composition_rules(composition_rules_path);
    if (!composition_rules_path.empty()) inputs.push_back(composition_rules_path);

    if (!aliases_path.empty()) {
      inputs.push_back(aliases_path);
      const kblab::AliasMap aliases = kblab::AliasMap::load_tsv(aliases_path);
      for (auto& r : inv_rules) r = r.remapped(aliases);
      for (auto& r : comp_rules) r = r.remapped(aliases);
    }

    const auto inverse =
        kblab::gen_inverse(kb, inv_rules, per_rule, kblab::derive_seed(common.seed, "probes:inverse"));
    const auto comp = kblab::gen_composition(kb, comp_rules, per_rule,
                                             kblab::derive_seed(common.seed, "probes:composition"));

    kblab::write_probeset_tsv(outputs.track(common.out_dir + "/inverse_forward.tsv"), inverse.forward);
    kblab::write_probeset_tsv(outputs.track(common.out_dir + "/inverse_query.tsv"), inverse.inverse);
    kblab::write_probeset_tsv(outputs.track(common.out_dir + "/comp_conditions.tsv"), comp.conditions);
    kblab::write_probeset_tsv(outputs.track(common.out_dir + "/comp_conclusions.tsv"), comp.conclusions);
    kblab::save_inverse_rules(outputs.track(common.out_dir + "/rules_inverse.tsv"), inv_rules);
    kblab::save_composition_rules(outputs.track(common.out_dir + "/rules_composition.tsv"), comp_rules);

    json availability = json::object();
    for (const auto& [rule, n] : inverse.available) availability["inverse"][rule] = n;
    for (const auto& [rule, n] : comp.available) availability["composition"][rule] = n;

    json cfg_snapshot = common.config;
    cfg_snapshot["per_rule"] = per_rule;
    json manifest = kblab::make_manifest("probes gen", common.seed, cfg_snapshot, inputs);
    manifest["availability"] = availability;
    manifest["counts"] = {{"inverse_forward", inverse.forward.items.size()},
                          {"inverse_query", inverse.inverse.items.size()},
                          {"comp_conditions", comp.conditions.items.size()},
                          {"comp_conclusions", comp.conclusions.items.size()}};
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    std::cout << "inverse " << inverse.forward.items.size() << " pairs, composition "
              << comp.conclusions.items.size() << " conclusions\n";
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_probes_eval(CommonArgs& common, const std::string& ckpt_path,
                    const std::vector<std::string>& probeset_paths, const std::string& mode_str,
                    const std::string& templates_path, const std::string& aliases_path,
                    bool builtin_templates, int max_new) {
  OutputTracker outputs;
  try {
    std::vector<std::string> inputs{ckpt_path};
    kblab::Checkpoint ckpt = kblab::load_checkpoint(ckpt_path);
    const kblab::Vocab vocab = ckpt.vocab();
    TemplateSetup tpl = load_templates(templates_path, aliases_path, builtin_templates, inputs);
    const kblab::PromptMode mode =
        mode_str == "question" ? kblab::PromptMode::Question : kblab::PromptMode::TripletFormat;
    if (mode_str != "question" && mode_str != "triplet") {
      throw std::runtime_error("unknown eval mode '" + mode_str + "' (triplet|question)");
    }

    json result = json::object();
    for (const auto& path : probeset_paths) {
      inputs.push_back(path);
      const kblab::ProbeSet set = kblab::read_probeset_tsv(path);
      const kblab::EvalReport report = kblab::eval_probeset(
          ckpt.params, ckpt.config, vocab, set, mode, max_new, tpl.table ? &*tpl.table : nullptr);
      const std::string stem = fs::path(path).stem().string();
      kblab::write_report_json(outputs.track(common.out_dir + "/" + stem + "_report.json"), report);
      kblab::write_samples_tsv(outputs.track(common.out_dir + "/" + stem + "_samples.tsv"), report);
      result[stem] = {{"n", report.n}, {"em", report.em}, {"f1", report.f1}};
      std::cout << stem << ": n " << report.n << " em " << report.em << " f1 " << report.f1 << "\n";
    }

    json manifest = kblab::make_manifest("probes eval", common.seed, common.config, inputs);
    manifest["result"] = result;
    kblab::write_json(outputs.track(common.out_dir + "/manifest.json"), manifest);
    return 0;
  } catch (const std::exception& e) {
    outputs.discard_all();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale knowledge-base memorization lab"};
  app.set_version_flag("--version", kblab::tool_version());
  app.require_subcommand(1);

  // ---- synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic Zipf KB");
  CommonArgs synth_common;
  synth_common.attach(synth);
  json synth_overrides = json::object();
  std::size_t synth_entities = 0, synth_relations = 0, synth_triplets = 0;
  double synth_zipf = 0;
  synth->add_option("--entities", synth_entities)->each([&](const std::string& v) {
    synth_overrides["entities"] = std::stoull(v);
  });
  synth->add_option("--relations", synth_relations)->each([&](const std::string& v) {
    synth_overrides["relations"] = std::stoull(v);
  });
  synth->add_option("--triplets", synth_triplets)->each([&](const std::string& v) {
    synth_overrides["triplets"] = std::stoull(v);
  });
  synth->add_option("--zipf", synth_zipf)->each([&](const std::string& v) {
    synth_overrides["zipf"] = std::stod(v);
  });

  // ---- ingest
  auto* ingest = app.add_subcommand("ingest", "parse, filter and dedup a triplet TSV dump");
  CommonArgs ingest_common;
  ingest_common.attach(ingest);
  std::string ingest_in, ingest_allowlist;
  bool keep_urls = false, keep_coordinates = false, keep_images = false;
  ingest->add_option("--in", ingest_in, "input triplet TSV")->required();
  ingest->add_option("--allowlist", ingest_allowlist, "subject allow-list, one entity per line");
  ingest->add_flag("--keep-urls", keep_urls, "do not drop URL objects");
  ingest->add_flag("--keep-coordinates", keep_coordinates, "do not drop coordinate objects");
  ingest->add_flag("--keep-images", keep_images, "do not drop image-file objects");

  // ---- strata
  auto* strata = app.add_subcommand("strata", "emit popular/long-tail stratified datasets");
  CommonArgs strata_common;
  strata_common.attach(strata);
  std::string strata_kb;
  std::size_t strata_sample = 1000;
  double tail_pct = 0.15, pop_pct = 0.05;
  strata->add_option("--kb", strata_kb, "canonical KB TSV");
  strata->add_option("--sample", strata_sample, "samples per stratum");
  strata->add_option("--tail-pct", tail_pct, "long-tail percentile");
  strata->add_option("--pop-pct", pop_pct, "popular percentile");

  // shared train-ish flag plumbing
  auto attach_model_flags = [](CLI::App* cmd, json& overrides) {
    cmd->add_option_function<int>("--d-model", [&overrides](const int& v) { overrides["d_model"] = v; });
    cmd->add_option_function<int>("--layers", [&overrides](const int& v) { overrides["n_layers"] = v; });
    cmd->add_option_function<int>("--heads", [&overrides](const int& v) { overrides["n_heads"] = v; });
    cmd->add_option_function<int>("--max-seq", [&overrides](const int& v) { overrides["max_seq_len"] = v; });
  };
  auto attach_train_flags = [](CLI::App* cmd, json& overrides) {
    cmd->add_option_function<double>("--alpha", [&overrides](const double& v) { overrides["alpha"] = v; });
    cmd->add_option_function<std::size_t>("--batch", [&overrides](const std::size_t& v) { overrides["batch_size"] = v; });
    cmd->add_option_function<double>("--lr", [&overrides](const double& v) { overrides["learning_rate"] = v; });
    cmd->add_option_function<std::size_t>("--max-epochs", [&overrides](const std::size_t& v) { overrides["max_epochs"] = v; });
    cmd->add_option_function<std::size_t>("--eval-every", [&overrides](const std::size_t& v) { overrides["eval_every"] = v; });
    cmd->add_option_function<std::size_t>("--patience", [&overrides](const std::size_t& v) { overrides["patience_epochs"] = v; });
    cmd->add_option_function<double>("--em-stop", [&overrides](const double& v) { overrides["em_stop_threshold"] = v; });
    cmd->add_option_function<double>("--init-importance", [&overrides](const double& v) { overrides["init_importance"] = v; });
    cmd->add_option_function<double>("--floor", [&overrides](const double& v) { overrides["importance_floor"] = v; });
    cmd->add_option_function<int>("--eval-max-new", [&overrides](const int& v) { overrides["eval_max_new"] = v; });
    cmd->add_flag_function("--resample-per-batch", [&overrides](std::int64_t) { overrides["resample_per_batch"] = true; });
  };

  // ---- train
  auto* train = app.add_subcommand("train", "train the memorizer on a KB");
  CommonArgs train_common;
  train_common.attach(train);
  TrainArgs train_args;
  json train_model_overrides = json::object(), train_train_overrides = json::object();
  train->add_option("--kb", train_args.kb_path, "canonical KB TSV");
  train->add_option("--mode", train_args.mode, "importance|uniform");
  train->add_option("--resume", train_args.resume_path, "checkpoint to continue from");
  train->add_option("--templates", train_args.templates_path, "question template TSV (extends vocab)");
  train->add_option("--aliases", train_args.aliases_path, "relation alias TSV");
  train->add_flag("--builtin-templates", train_args.builtin_templates, "use the built-in templates");
  train->add_option("--eval-size", train_args.eval_size, "held-in eval sample size");
  attach_model_flags(train, train_model_overrides);
  attach_train_flags(train, train_train_overrides);

  // ---- compare
  auto* compare = app.add_subcommand("compare", "importance vs uniform from shared init");
  CommonArgs compare_common;
  compare_common.attach(compare);
  TrainArgs compare_args;
  json compare_model_overrides = json::object(), compare_train_overrides = json::object();
  std::string compare_seeds = "1", compare_thresholds = "0.5,0.8,0.9";
  compare->add_option("--kb", compare_args.kb_path, "canonical KB TSV");
  compare->add_option("--seeds", compare_seeds, "comma-separated run seeds");
  compare->add_option("--thresholds", compare_thresholds, "EM thresholds for steps-to-threshold");
  compare->add_option("--eval-size", compare_args.eval_size, "held-in eval sample size");
  attach_model_flags(compare, compare_model_overrides);
  attach_train_flags(compare, compare_train_overrides);

  // ---- qa
  auto* qa = app.add_subcommand("qa", "finetune a checkpoint on question-format data");
  CommonArgs qa_common;
  qa_common.attach(qa);
  std::string qa_ckpt, qa_dataset, qa_tsv, qa_templates, qa_aliases;
  bool qa_fresh = false, qa_builtin = false;
  double qa_val_frac = 0.2;
  json qa_train_overrides = json::object();
  qa->add_option("--ckpt", qa_ckpt, "memorization checkpoint (also provides vocab/config)")->required();
  qa->add_flag("--fresh-init", qa_fresh, "ignore checkpoint weights; start from random init");
  qa->add_option("--dataset", qa_dataset, "triplet TSV to convert via templates");
  qa->add_option("--qa-tsv", qa_tsv, "question<TAB>answer TSV");
  qa->add_option("--templates", qa_templates, "question template TSV");
  qa->add_option("--aliases", qa_aliases, "relation alias TSV");
  qa->add_flag("--builtin-templates", qa_builtin, "use the built-in templates");
  qa->add_option("--val-frac", qa_val_frac, "validation fraction of the QA pairs");
  attach_train_flags(qa, qa_train_overrides);

  // ---- eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  CommonArgs eval_common;
  eval_common.attach(eval);
  std::string eval_ckpt, eval_dataset, eval_mode = "triplet", eval_templates, eval_aliases;
  bool eval_builtin = false;
  int eval_max_new = 8;
  std::vector<std::string> eval_strata;
  eval->add_option("--ckpt", eval_ckpt)->required();
  eval->add_option("--dataset", eval_dataset, "triplet TSV to score")->required();
  eval->add_option("--mode", eval_mode, "triplet|question");
  eval->add_option("--strata", eval_strata, "name=path stratum TSV (repeatable)");
  eval->add_option("--templates", eval_templates, "question template TSV");
  eval->add_option("--aliases", eval_aliases, "relation alias TSV");
  eval->add_flag("--builtin-templates", eval_builtin, "use the built-in templates");
  eval->add_option("--max-new", eval_max_new, "decode budget");

  // ---- probes
  auto* probes = app.add_subcommand("probes", "generate or evaluate reasoning probe sets");
  probes->require_subcommand(1);
  auto* probes_gen = probes->add_subcommand("gen", "generate probe sets from a KB");
  CommonArgs probes_gen_common;
  probes_gen_common.attach(probes_gen);
  std::string pg_kb, pg_inverse_rules, pg_composition_rules, pg_aliases;
  std::size_t pg_per_rule = 150;
  probes_gen->add_option("--kb", pg_kb, "canonical KB TSV");
  probes_gen->add_option("--per-rule", pg_per_rule, "samples per rule");
  probes_gen->add_option("--inverse-rules", pg_inverse_rules, "r<TAB>r_inv TSV (default: built-ins)");
  probes_gen->add_option("--composition-rules", pg_composition_rules,
                         "r1<TAB>r2<TAB>r3 TSV (default: built-ins)");
  probes_gen->add_option("--aliases", pg_aliases, "relation alias TSV");

  auto* probes_eval = probes->add_subcommand("eval", "score a checkpoint on probe TSVs");
  CommonArgs probes_eval_common;
  probes_eval_common.attach(probes_eval);
  std::string pe_ckpt, pe_mode = "triplet", pe_templates, pe_aliases;
  bool pe_builtin = false;
  int pe_max_new = 8;
  std::vector<std::string> pe_sets;
  probes_eval->add_option("--ckpt", pe_ckpt)->required();
  probes_eval->add_option("--probeset", pe_sets, "probe TSV (repeatable)")->required();
  probes_eval->add_option("--mode", pe_mode, "triplet|question");
  probes_eval->add_option("--templates", pe_templates, "question template TSV");
  probes_eval->add_option("--aliases", pe_aliases, "relation alias TSV");
  probes_eval->add_flag("--builtin-templates", pe_builtin, "use the built-in templates");
  probes_eval->add_option("--max-new", pe_max_new, "decode budget");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_common.prepare();
      return cmd_synth(synth_common, synth_overrides);
    }
    if (ingest->parsed()) {
      ingest_common.prepare();
      return cmd_ingest(ingest_common, ingest_in, ingest_allowlist, keep_urls, keep_coordinates,
                        keep_images);
    }
    if (strata->parsed()) {
      strata_common.prepare();
      return cmd_strata(strata_common, strata_kb, strata_sample, tail_pct, pop_pct);
    }
    if (train->parsed()) {
      train_common.prepare();
      return cmd_train(train_common, train_args, train_model_overrides, train_train_overrides);
    }
    if (compare->parsed()) {
      compare_common.prepare();
      return cmd_compare(compare_common, compare_args, compare_model_overrides,
                         compare_train_overrides, compare_seeds, compare_thresholds);
    }
    if (qa->parsed()) {
      qa_common.prepare();
      return cmd_qa(qa_common, qa_ckpt, qa_fresh, qa_dataset, qa_tsv, qa_templates, qa_aliases,
                    qa_builtin, qa_val_frac, qa_train_overrides);
    }
    if (eval->parsed()) {
      eval_common.prepare();
      return cmd_eval(eval_common, eval_ckpt, eval_dataset, eval_mode, eval_strata, eval_templates,
                      eval_aliases, eval_builtin, eval_max_new);
    }
    if (probes->parsed()) {
      if (probes_gen->parsed()) {
        probes_gen_common.prepare();
        return cmd_probes_gen(probes_gen_common, pg_kb, pg_per_rule, pg_inverse_rules,
                              pg_composition_rules, pg_aliases);
      }
      if (probes_eval->parsed()) {
        probes_eval_common.prepare();
        return cmd_probes_eval(probes_eval_common, pe_ckpt, pe_sets, pe_mode, pe_templates,
                               pe_aliases, pe_builtin, pe_max_new);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
