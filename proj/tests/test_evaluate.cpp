#include <catch_amalgamated.hpp>

#include <map>

#include "kblab/evaluate.hpp"

using namespace kblab;

namespace {

PredictFn stub_predictor(std::map<std::string, std::string> answers) {
  return [answers = std::move(answers)](const std::vector<std::string>& prompts) {
    std::vector<std::string> out;
    for (const auto& p : prompts) {
      auto it = answers.find(p);
      out.push_back(it == answers.end() ? "" : it->second);
    }
    return out;
  };
}

}  // namespace

TEST_CASE("two-sample fixture aggregates the hand-scored means") {
  // sample 1: exact match (em 1, f1 1); sample 2: partial overlap
  // "romeis" vs "leonhard romeis" (em 0, f1 2/3)
  std::vector<EvalItem> items = {{"q1", {"Town Hall"}, ""}, {"q2", {"leonhard romeis"}, ""}};
  const auto report = evaluate_items_with(
      stub_predictor({{"q1", "town hall"}, {"q2", "romeis"}}), items, "fixture");
  CHECK(report.n == 2);
  CHECK(report.em == Catch::Approx(0.5));
  CHECK(report.f1 == Catch::Approx((1.0 + 2.0 / 3.0) / 2.0));
  REQUIRE(report.samples.size() == 2);
  CHECK(report.samples[0].em == 1.0);
  CHECK(report.samples[1].f1 == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("evaluation of an empty dataset is an error") {
  CHECK_THROWS(evaluate_items_with(stub_predictor({}), {}, "empty"));
  ModelConfig cfg;
  cfg.vocab_size = 6;
  const Parameters p = Parameters::zeros(cfg);
  const Vocab v = Vocab::from_tokens({"a"});
  Dataset empty{"none", {}};
  CHECK_THROWS(evaluate_dataset(p, cfg, v, empty, PromptMode::TripletFormat, 4));
}

TEST_CASE("aggregates equal the mean of the per-sample records") {
  std::vector<EvalItem> items;
  std::map<std::string, std::string> answers;
  for (int i = 0; i < 17; ++i) {
    const std::string q = "prompt " + std::to_string(i);
    items.push_back({q, {"alpha beta"}, ""});
    answers[q] = i % 3 == 0 ? "alpha beta" : (i % 3 == 1 ? "alpha" : "nothing");
  }
  const auto report = evaluate_items_with(stub_predictor(answers), items, "self");
  double em = 0, f1 = 0;
  for (const auto& rec : report.samples) {
    em += rec.em;
    f1 += rec.f1;
  }
  CHECK(report.em == Catch::Approx(em / 17.0));
  CHECK(report.f1 == Catch::Approx(f1 / 17.0));
}

TEST_CASE("per-sample em 1 implies f1 1 in reports") {
  std::vector<EvalItem> items = {{"q", {"Some Entity"}, ""}};
  const auto report = evaluate_items_with(stub_predictor({{"q", "some entity"}}), items, "x");
  CHECK(report.samples[0].em == 1.0);
  CHECK(report.samples[0].f1 == 1.0);
}

TEST_CASE("echoing the gold scores a perfect report") {
  std::vector<EvalItem> items;
  for (int i = 0; i < 5; ++i) {
    items.push_back({"p" + std::to_string(i), {"gold " + std::to_string(i)}, ""});
  }
  PredictFn echo = [&items](const std::vector<std::string>& prompts) {
    std::vector<std::string> out;
    for (const auto& p : prompts) {
      for (const auto& item : items) {
        if (item.prompt == p) out.push_back(item.golds[0]);
      }
    }
    return out;
  };
  const auto report = evaluate_items_with(echo, items, "memorized");
  CHECK(report.em == 1.0);
  CHECK(report.f1 == 1.0);
}

TEST_CASE("grouped items produce per-group sub-reports consistent with the mean") {
  std::vector<EvalItem> items = {{"a1", {"x"}, "g1"}, {"a2", {"x"}, "g1"}, {"b1", {"x"}, "g2"}};
  const auto report = evaluate_items_with(
      stub_predictor({{"a1", "x"}, {"a2", "no"}, {"b1", "x"}}), items, "grouped");
  REQUIRE(report.strata.count("g1") == 1);
  REQUIRE(report.strata.count("g2") == 1);
  CHECK(report.strata.at("g1").em == Catch::Approx(0.5));
  CHECK(report.strata.at("g2").em == Catch::Approx(1.0));
  double weighted = 0;
  std::size_t total = 0;
  for (const auto& [_, sub] : report.strata) {
    weighted += sub.em * static_cast<double>(sub.n);
    total += sub.n;
  }
  CHECK(total == report.n);
  CHECK(weighted / static_cast<double>(total) == Catch::Approx(report.em));
}

TEST_CASE("multi-gold items score best-of-candidates") {
  std::vector<EvalItem> items = {{"q", {"Västeras", "Sweden"}, ""}};
  const auto report = evaluate_items_with(stub_predictor({{"q", "sweden"}}), items, "multi");
  CHECK(report.em == 1.0);
  CHECK(report.samples[0].gold == "Västeras|Sweden");
}

TEST_CASE("report JSON and samples TSV carry the aggregates and records") {
  std::vector<EvalItem> items = {{"prompt", {"gold"}, "rule"}};
  const auto report = evaluate_items_with(stub_predictor({{"prompt", "gold"}}), items, "ds");
  const auto j = report.to_json();
  CHECK(j.at("dataset") == "ds");
  CHECK(j.at("n") == 1);
  CHECK(j.at("em") == 1.0);
  CHECK(j.at("strata").contains("rule"));

  std::ostringstream os;
  write_samples_tsv(os, report);
  CHECK(os.str() == "prompt\tgold\tgold\t1\t1\n");
}
