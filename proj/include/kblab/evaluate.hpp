#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kblab/formatting.hpp"
#include "kblab/knowledge_base.hpp"
#include "kblab/metrics.hpp"
#include "kblab/model.hpp"

namespace kblab {

struct SampleRecord {
  std::string prompt;
  std::string prediction;
  std::string gold;  // candidates joined with '|'
  double em = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::string dataset;
  std::size_t n = 0;
  double em = 0.0;
  double f1 = 0.0;
  std::map<std::string, EvalReport> strata;
  std::vector<SampleRecord> samples;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["n"] = n;
    j["em"] = em;
    j["f1"] = f1;
    if (!strata.empty()) {
      j["strata"] = nlohmann::json::object();
      for (const auto& [name, sub] : strata) j["strata"][name] = sub.to_json();
    }
    return j;
  }
};

struct EvalItem {
  std::string prompt;
  std::vector<std::string> golds;
  std::string group;  // stratum or rule id; empty for the plain case
};

enum class PromptMode { TripletFormat, Question };

inline std::vector<EvalItem> make_eval_items(const Dataset& dataset, PromptMode mode,
                                             const TemplateTable* templates = nullptr) {
  std::vector<EvalItem> items;
  items.reserve(dataset.triplets.size());
  for (const Triplet& t : dataset.triplets) {
    EvalItem item;
    if (mode == PromptMode::Question) {
      if (!templates) throw std::invalid_argument("question mode needs a template table");
      item.prompt = templates->format_question(t);
    } else {
      item.prompt = format_input(t);
    }
    item.golds = {t.object};
    items.push_back(std::move(item));
  }
  return items;
}

using PredictFn =
    std::function<std::vector<std::string>(const std::vector<std::string>& prompts)>;

inline PredictFn greedy_predictor(const Parameters& params, const ModelConfig& cfg,
                                  const Vocab& vocab, int max_new) {
  return [&params, &cfg, &vocab, max_new](const std::vector<std::string>& prompts) {
    return generate_greedy_batch(params, cfg, vocab, prompts, max_new);
  };
}

// Scores every item with best-of-candidates EM/F1 and aggregates plain means
// in item order. Kept separate from the model so tests can drive it with a
// stub predictor.
inline EvalReport evaluate_items_with(const PredictFn& predict, const std::vector<EvalItem>& items,
                                      const std::string& name) {
  if (items.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<std::string> prompts;
  prompts.reserve(items.size());
  for (const auto& item : items) prompts.push_back(item.prompt);
  const std::vector<std::string> predictions = predict(prompts);
  if (predictions.size() != items.size()) {
    throw std::logic_error("evaluate: predictor returned wrong count");
  }

  EvalReport report;
  report.dataset = name;
  report.n = items.size();
  report.samples.reserve(items.size());
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) {
    SampleRecord rec;
    rec.prompt = items[i].prompt;
    rec.prediction = predictions[i];
    for (std::size_t g = 0; g < items[i].golds.size(); ++g) {
      if (g) rec.gold += '|';
      rec.gold += items[i].golds[g];
    }
    rec.em = best_em(predictions[i], items[i].golds);
    rec.f1 = best_f1(predictions[i], items[i].golds);
    report.em += rec.em;
    report.f1 += rec.f1;
    report.samples.push_back(std::move(rec));
    if (!items[i].group.empty()) groups[items[i].group].push_back(i);
  }
  report.em /= static_cast<double>(items.size());
  report.f1 /= static_cast<double>(items.size());

  for (const auto& [group, indices] : groups) {
    EvalReport sub;
    sub.dataset = group;
    sub.n = indices.size();
    for (std::size_t i : indices) {
      sub.em += report.samples[i].em;
      sub.f1 += report.samples[i].f1;
    }
    sub.em /= static_cast<double>(indices.size());
    sub.f1 /= static_cast<double>(indices.size());
    report.strata[group] = std::move(sub);
  }
  return report;
}

inline EvalReport evaluate_items(const Parameters& params, const ModelConfig& cfg,
                                 const Vocab& vocab, const std::vector<EvalItem>& items,
                                 const std::string& name, int max_new) {
  return evaluate_items_with(greedy_predictor(params, cfg, vocab, max_new), items, name);
}

// Fixed-form (triplet template) or free-form (question template) scoring of
// a dataset, with optional per-stratum sub-reports.
inline EvalReport evaluate_dataset(const Parameters& params, const ModelConfig& cfg,
                                   const Vocab& vocab, const Dataset& dataset, PromptMode mode,
                                   int max_new, const TemplateTable* templates = nullptr,
                                   const std::vector<Dataset>* strata = nullptr) {
  EvalReport report = evaluate_items(params, cfg, vocab, make_eval_items(dataset, mode, templates),
                                     dataset.name, max_new);
  if (strata) {
    for (const Dataset& stratum : *strata) {
      report.strata[stratum.name] =
          evaluate_items(params, cfg, vocab, make_eval_items(stratum, mode, templates),
                         stratum.name, max_new);
    }
  }
  return report;
}

inline void write_report_json(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << report.to_json().dump(2) << '\n';
}

// Per-sample TSV: prompt, prediction, gold candidates, em, f1.
inline void write_samples_tsv(std::ostream& os, const EvalReport& report) {
  for (const auto& rec : report.samples) {
    os << rec.prompt << '\t' << rec.prediction << '\t' << rec.gold << '\t' << rec.em << '\t'
       << rec.f1 << '\n';
  }
}

inline void write_samples_tsv(const std::string& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_samples_tsv(os, report);
}

}  // namespace kblab
