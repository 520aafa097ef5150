#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "arag/evaluation.hpp"
#include "arag/util.hpp"
#include "case_study.hpp"
#include "test_util.hpp"

using namespace arag;

namespace {

PromptRegistry& prompts() {
  static PromptRegistry reg = PromptRegistry::load_dir(test_util::prompts_dir());
  return reg;
}

std::string random_phrase(DetRng& rng) {
  static const std::vector<std::string> words = {"The",  "a",     "An",  "Paris", "museum",
                                                 "Louvre", "1802", "Dr.", "O'Neil", "deep-sea",
                                                 "stone",  "THE",  "an"};
  int n = rng.range(0, 6);
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += " ";
    out += words[rng.below(words.size())];
  }
  return out;
}

}  // namespace

TEST_CASE("normalize_answer applies the documented recipe") {
  CHECK(normalize_answer("The Louvre Museum.") == "louvre museum");
  CHECK(normalize_answer("a  BIG   Dog") == "big dog");
  CHECK(normalize_answer("") == "");
  CHECK(normalize_answer("An answer, THE answer!") == "answer answer");
}

TEST_CASE("normalize_answer is idempotent on fuzzed strings") {
  DetRng rng(23);
  for (int i = 0; i < 2000; ++i) {
    std::string s = random_phrase(rng);
    std::string once = normalize_answer(s);
    CHECK(normalize_answer(once) == once);
  }
}

TEST_CASE("exact_match spot values") {
  CHECK(exact_match("Paris", {"Paris"}) == 1);
  CHECK(exact_match("The Paris", {"Paris"}) == 1);
  CHECK(exact_match("Paris, France", {"Paris"}) == 0);
  CHECK_THROWS_AS(exact_match("x", {}), ValidationError);
}

TEST_CASE("f1_score spot values") {
  CHECK(f1_score("same text here", {"same text here"}) == doctest::Approx(1.0));
  CHECK(f1_score("Barack Obama", {"Obama"}) == doctest::Approx(0.6666666666666666).epsilon(1e-4));
  CHECK(f1_score("alpha beta", {"gamma delta"}) == doctest::Approx(0.0));

  SUBCASE("gold permutation symmetry") {
    std::vector<std::string> golds = {"Barack Obama", "Obama", "President Obama"};
    double a = f1_score("Obama was president", golds);
    std::vector<std::string> shuffled = {"Obama", "President Obama", "Barack Obama"};
    CHECK(f1_score("Obama was president", shuffled) == doctest::Approx(a));
  }

  SUBCASE("adding a gold alias never lowers F1") {
    DetRng rng(31);
    for (int i = 0; i < 500; ++i) {
      std::string pred = random_phrase(rng);
      std::vector<std::string> golds = {random_phrase(rng)};
      double before = f1_score(pred, golds);
      golds.push_back(random_phrase(rng));
      CHECK(f1_score(pred, golds) >= before - 1e-12);
    }
  }
}

TEST_CASE("substring_acc spot values") {
  CHECK(substring_acc("He is buried in Dublin, Ireland", {"Dublin"}) == 1);
  CHECK(substring_acc("Unknown", {"Dublin"}) == 0);
}

TEST_CASE("EM=1 implies F1=1 and ACC=1 on fuzzed pairs") {
  DetRng rng(37);
  int em_hits = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string pred = random_phrase(rng);
    std::vector<std::string> golds = {random_phrase(rng)};
    if (rng.below(3) == 0) golds.push_back(random_phrase(rng));
    int em = exact_match(pred, golds);
    if (em == 1) {
      ++em_hits;
      CHECK(f1_score(pred, golds) == doctest::Approx(1.0));
      CHECK(substring_acc(pred, golds) == 1);
    }
  }
  CHECK(em_hits > 0);  // the fuzz actually produced matching pairs
}

TEST_CASE("binary judge verdict grammar") {
  JudgeVerdict yes = parse_judge_verdict(R"({"judgment": "Yes"})");
  CHECK(yes.judgment == true);
  CHECK(parse_judge_verdict(R"({"judgment": "No"})").judgment == false);
  CHECK(parse_judge_verdict("```json\n{\"judgment\": \"Yes\"}\n```").judgment == true);
  CHECK_THROWS_AS(parse_judge_verdict("Yes it is correct"), JudgeFormatError);
  CHECK_THROWS_AS(parse_judge_verdict(R"({"judgment": "Maybe"})"), JudgeFormatError);
  CHECK_THROWS_AS(parse_judge_verdict(R"({"judgment": "Yes", "extra": 1})"), JudgeFormatError);
  CHECK_THROWS_AS(parse_judge_verdict(R"(["judgment"])"), JudgeFormatError);
}

TEST_CASE("judge_acc_llm retries once then reports unjudgeable") {
  CostLedger ledger;
  SUBCASE("clean verdict") {
    ScriptedProvider judge({{Role::Judge, "", R"({"judgment": "Yes"})", -1}});
    JudgeVerdict v = judge_acc_llm(judge, prompts(), "q", {"gold"}, "prediction", ledger);
    CHECK(v.judgment);
    CHECK(ledger.calls(Role::Judge) == 1);
  }
  SUBCASE("recovery on retry") {
    ScriptedProvider judge(
        {{Role::Judge, "", "hmm", 1}, {Role::Judge, "", R"({"judgment": "No"})", -1}});
    JudgeVerdict v = judge_acc_llm(judge, prompts(), "q", {"gold"}, "prediction", ledger);
    CHECK(v.judgment == false);
    CHECK(ledger.calls(Role::Judge) == 2);
  }
  SUBCASE("persistent garbage raises") {
    ScriptedProvider judge({{Role::Judge, "", "not json", -1}});
    CHECK_THROWS_AS(judge_acc_llm(judge, prompts(), "q", {"gold"}, "p", ledger),
                    JudgeFormatError);
    CHECK(ledger.calls(Role::Judge) == 2);
  }
}

TEST_CASE("iteration ranking grammar enforces permutations") {
  std::set<std::string> ids = {"iter_1", "iter_2", "iter_3", "iter_4"};
  IterationRanking r = parse_iteration_ranking(
      R"({"ranking": ["iter_3","iter_4","iter_2","iter_1"], "reasoning": "ok"})", ids);
  CHECK(r.ranking == std::vector<std::string>{"iter_3", "iter_4", "iter_2", "iter_1"});
  CHECK_THROWS_AS(parse_iteration_ranking(
                      R"({"ranking": ["iter_1","iter_1","iter_2","iter_3"]})", ids),
                  JudgeFormatError);
  CHECK_THROWS_AS(parse_iteration_ranking(R"({"ranking": ["iter_1","iter_2"]})", ids),
                  JudgeFormatError);
  CHECK_THROWS_AS(parse_iteration_ranking(R"({"ranking": ["iter_9"]})", {"iter_1"}),
                  JudgeFormatError);
}

TEST_CASE("rank_iteration_variants renders all four slots and averages by hand") {
  CostLedger ledger;
  ScriptedProvider judge({{Role::Judge, "",
                           R"({"ranking": ["iter_3","iter_4","iter_2","iter_1"], "reasoning": "r"})",
                           -1}});
  std::map<int, std::string> answers = {
      {1, "one"}, {2, "two"}, {3, "three"}, {4, "four"}};
  IterationRanking r = rank_iteration_variants(judge, prompts(), "q", answers, ledger);
  REQUIRE(r.ranking.size() == 4);
  CHECK(r.ranking[0] == "iter_3");

  // average-rank aggregation over four identical comparisons: iter_3 always
  // first (rank 1), iter_1 always last (rank 4)
  std::map<std::string, double> rank_sum;
  for (int q = 0; q < 4; ++q) {
    IterationRanking rr = rank_iteration_variants(judge, prompts(), "q" + std::to_string(q),
                                                  answers, ledger);
    for (size_t pos = 0; pos < rr.ranking.size(); ++pos) {
      rank_sum[rr.ranking[pos]] += static_cast<double>(pos + 1);
    }
  }
  CHECK(rank_sum["iter_3"] / 4.0 == doctest::Approx(1.0));
  CHECK(rank_sum["iter_4"] / 4.0 == doctest::Approx(2.0));
  CHECK(rank_sum["iter_2"] / 4.0 == doctest::Approx(3.0));
  CHECK(rank_sum["iter_1"] / 4.0 == doctest::Approx(4.0));

  SUBCASE("two variants need a two-id permutation") {
    ScriptedProvider judge2(
        {{Role::Judge, "", R"({"ranking": ["iter_2","iter_1"], "reasoning": ""})", -1}});
    std::map<int, std::string> two = {{1, "one"}, {2, "two"}};
    IterationRanking r2 = rank_iteration_variants(judge2, prompts(), "q", two, ledger);
    CHECK(r2.ranking == std::vector<std::string>{"iter_2", "iter_1"});
  }
  SUBCASE("fewer than two variants rejected") {
    std::map<int, std::string> one = {{1, "only"}};
    CHECK_THROWS_AS(rank_iteration_variants(judge, prompts(), "q", one, ledger),
                    ValidationError);
  }
}

TEST_CASE("failure diagnosis grammar validates the closed category enum") {
  std::string good = R"({
    "failure_category": "Retrieval Failure",
    "reasoning": "the document never surfaced",
    "root_cause_analysis": "knowledge base gap",
    "suggested_improvement": "broaden sparse queries"
  })";
  FailureDiagnosis d = parse_failure_diagnosis(good);
  CHECK(d.failure_category == FailureCategory::RetrievalFailure);
  CHECK(d.reasoning == "the document never surfaced");

  std::string bad = R"({
    "failure_category": "Bad Vibes",
    "reasoning": "r", "root_cause_analysis": "r", "suggested_improvement": "s"
  })";
  CHECK_THROWS_AS(parse_failure_diagnosis(bad), JudgeFormatError);
  CHECK_THROWS_AS(parse_failure_diagnosis(R"({"failure_category": "SEA Error"})"),
                  JudgeFormatError);

  SUBCASE("all six documented categories parse") {
    for (const auto& [cat, name] : failure_category_names()) {
      nlohmann::json j{{"failure_category", name},
                       {"reasoning", "r"},
                       {"root_cause_analysis", "rc"},
                       {"suggested_improvement", "s"}};
      CHECK(parse_failure_diagnosis(j.dump()).failure_category == cat);
    }
  }
}

TEST_CASE("diagnose_failure renders the full trace and the histogram partitions") {
  fixtures::ScriptedHarness harness(fixtures::case_corpus(), fixtures::case_script_json(),
                                    test_util::prompts_dir());
  PipelineTrace trace =
      run_pipeline(fixtures::case_question(), fixtures::case_config(), harness.resources());
  QASample gold{"s1", fixtures::case_question(), {"Greek Revival vs French Renaissance"}};

  nlohmann::json verdict{{"failure_category", "Generation Failure"},
                         {"reasoning", "fine"},
                         {"root_cause_analysis", "fine"},
                         {"suggested_improvement", "fine"}};
  ScriptedProvider judge({{Role::Judge, "", verdict.dump(), -1}});
  CostLedger ledger;
  FailureDiagnosis d =
      diagnose_failure(judge, prompts(), trace, gold, harness.corpus, ledger);
  CHECK(d.failure_category == FailureCategory::GenerationFailure);

  auto calls = judge.calls();
  REQUIRE(calls.size() == 1);
  CHECK(calls[0].prompt.find(fixtures::case_question()) != std::string::npos);
  CHECK(calls[0].prompt.find("building that houses the Mona Lisa") != std::string::npos);
  CHECK(calls[0].prompt.find("--- Iteration 1 ---") != std::string::npos);
  CHECK(calls[0].prompt.find("--- Iteration 2 ---") != std::string::npos);
  CHECK(calls[0].prompt.find("Greek Revival") != std::string::npos);

  std::vector<FailureDiagnosis> ds = {d, d};
  FailureDiagnosis other = d;
  other.failure_category = FailureCategory::SeaError;
  ds.push_back(other);
  nlohmann::json hist = failure_histogram(ds);
  CHECK(hist["Generation Failure"] == 2);
  CHECK(hist["SEA Error"] == 1);
  int total = 0;
  for (const auto& [k, v] : hist.items()) total += v.get<int>();
  CHECK(total == 3);
}

TEST_CASE("component score schemas") {
  SUBCASE("the sufficiency judge's embedded example JSON parses") {
    std::string example =
        "{\n\n\"reasoning\": \"The evidence confirms the outcome of the battle (a decisive "
        "victory) but a critical piece of requested information, the year of the battle, is "
        "completely missing.\",\n\n\"is_sufficient\": false\n\n}";
    ComponentScore s = parse_component_score(ComponentKind::SufficiencyCheck, example);
    CHECK(s.data["is_sufficient"] == false);
  }
  SUBCASE("scored components validate the 1-5 range") {
    ComponentScore s = parse_component_score(ComponentKind::QueryDecomposition,
                                             R"({"score": 4.5, "reasoning": "good"})");
    CHECK(*s.score == doctest::Approx(4.5));
    CHECK_THROWS_AS(parse_component_score(ComponentKind::QueryRefinement,
                                          R"({"score": 0.5, "reasoning": "r"})"),
                    JudgeFormatError);
    CHECK_THROWS_AS(parse_component_score(ComponentKind::QueryDecomposition,
                                          R"({"score": "high", "reasoning": "r"})"),
                    JudgeFormatError);
  }
  SUBCASE("filter audit lists") {
    ComponentScore s = parse_component_score(
        ComponentKind::FilterEfficacy,
        R"({"incorrectly_kept_ids": ["d1"], "incorrectly_discarded_ids": []})");
    CHECK(s.data["incorrectly_kept_ids"].size() == 1);
  }
  SUBCASE("relevance scores") {
    ComponentScore s = parse_component_score(
        ComponentKind::FinalContextRelevance,
        R"({"relevance_scores": [{"doc_id": "d1", "score": 5.0}]})");
    CHECK(s.data["relevance_scores"][0]["doc_id"] == "d1");
    CHECK_THROWS_AS(parse_component_score(ComponentKind::FinalContextRelevance,
                                          R"({"relevance_scores": [{"doc_id": "d1"}]})"),
                    JudgeFormatError);
  }
  SUBCASE("faithfulness verdicts are a closed set") {
    ComponentScore s = parse_component_score(
        ComponentKind::Faithfulness,
        R"({"faithfulness_verdict": "Fully Faithful", "reasoning": "ok"})");
    CHECK(s.data["faithfulness_verdict"] == "Fully Faithful");
    CHECK_THROWS_AS(
        parse_component_score(ComponentKind::Faithfulness,
                              R"({"faithfulness_verdict": "Sorta", "reasoning": "ok"})"),
        JudgeFormatError);
  }
  SUBCASE("score_component end to end") {
    CostLedger ledger;
    ScriptedProvider judge({{Role::Judge, "", R"({"score": 3.0, "reasoning": "fine"})", -1}});
    ComponentScore s = score_component(judge, prompts(), ComponentKind::QueryRefinement,
                                       {{"question", "q"},
                                        {"evidence", "e"},
                                        {"new_queries", "- nq"}},
                                       ledger);
    CHECK(*s.score == doctest::Approx(3.0));
    CHECK(ledger.calls(Role::Judge) == 1);
  }
}

TEST_CASE("evaluate_run reduces per-sample metrics into report means") {
  std::vector<QASample> dataset = {{"s1", "q1", {"Paris"}}, {"s2", "q2", {"Berlin"}}};
  PipelineTrace t1;
  t1.sample_id = "s1";
  t1.question = "q1";
  t1.final_answer = "The Paris";
  t1.total_cost.account(Role::Small, 80, 20);
  t1.total_cost.account(Role::Small, 80, 20);
  t1.total_cost.account(Role::Small, 80, 20);
  t1.total_cost.account(Role::Small, 80, 20);
  t1.total_cost.account(Role::Small, 80, 20);
  PipelineTrace t2;
  t2.sample_id = "s2";
  t2.question = "q2";
  t2.final_answer = "no idea";
  for (int i = 0; i < 6; ++i) t2.total_cost.account(Role::Small, 50, 10);

  MetricReport report = evaluate_run({t1, t2}, dataset);
  CHECK(report.n_samples == 2);
  CHECK(report.em == doctest::Approx(0.5));
  CHECK(report.avg_api_calls == doctest::Approx(5.5));
  CHECK(!report.acc_llm.has_value());

  SUBCASE("means equal brute-force recomputation from per-sample records") {
    double em = 0, f1 = 0, acc = 0, calls = 0, tokens = 0;
    for (const auto& r : report.per_sample) {
      em += r.em;
      f1 += r.f1;
      acc += r.acc;
      calls += r.api_calls;
      tokens += static_cast<double>(r.tokens);
    }
    double n = static_cast<double>(report.per_sample.size());
    CHECK(report.em == doctest::Approx(em / n));
    CHECK(report.f1 == doctest::Approx(f1 / n));
    CHECK(report.acc == doctest::Approx(acc / n));
    CHECK(report.avg_api_calls == doctest::Approx(calls / n));
    CHECK(report.avg_tokens == doctest::Approx(tokens / n));
  }

  SUBCASE("missing traces are reported by id") {
    std::vector<QASample> bigger = dataset;
    bigger.push_back({"s3", "q3", {"x"}});
    CHECK_THROWS_WITH_AS(evaluate_run({t1, t2}, bigger), doctest::Contains("s3"),
                         ValidationError);
  }

  SUBCASE("judged and excluded counts are conserved") {
    // judge answers Yes for s1's prompt, garbage for s2's
    ScriptedProvider judge({{Role::Judge, "q1", R"({"judgment": "Yes"})", -1},
                            {Role::Judge, "", "garbage", -1}});
    JudgeContext ctx{&judge, &prompts()};
    MetricReport judged = evaluate_run({t1, t2}, dataset, &ctx);
    CHECK(judged.judged == 1);
    CHECK(judged.excluded == 1);
    CHECK(judged.judged + judged.excluded == judged.n_samples);
    REQUIRE(judged.acc_llm.has_value());
    CHECK(*judged.acc_llm == doctest::Approx(1.0));
  }
}

TEST_CASE("full scripted suite on three handcrafted samples equals hand-computed metrics") {
  std::vector<QASample> dataset = {
      {"a", "q one", {"Louvre Museum"}},
      {"b", "q two", {"nowhere to be found"}},
      {"c", "q three", {"The Bletchley"}},
  };
  auto make_trace = [](const std::string& id, const std::string& q, const std::string& answer,
                       int calls) {
    PipelineTrace t;
    t.sample_id = id;
    t.question = q;
    t.final_answer = answer;
    for (int i = 0; i < calls; ++i) t.total_cost.account(Role::Small, 100, 10);
    return t;
  };
  // hand-computed: a) EM 0, ACC 1, F1 = 2*(2/4 * 2/2)/(2/4+2/2) = 2/3
  //                b) EM 0, ACC 0, F1 0
  //                c) EM 1 ("the" is an article), ACC 1, F1 1
  std::vector<PipelineTrace> traces = {
      make_trace("a", "q one", "The Louvre Museum in Paris", 5),
      make_trace("b", "q two", "totally unrelated words", 8),
      make_trace("c", "q three", "Bletchley", 5),
  };
  MetricReport report = evaluate_run(traces, dataset);
  CHECK(report.em == doctest::Approx(1.0 / 3.0));
  CHECK(report.acc == doctest::Approx(2.0 / 3.0));
  CHECK(report.f1 == doctest::Approx((2.0 / 3.0 + 0.0 + 1.0) / 3.0));
  CHECK(report.avg_api_calls == doctest::Approx(6.0));
  CHECK(report.avg_tokens == doctest::Approx(110.0 * 6.0));

  SUBCASE("csv carries one row per sample") {
    std::string csv = report.to_csv();
    CHECK(csv.find("sample_id,em,f1,acc,acc_llm,api_calls,tokens") == 0);
    CHECK(csv.find("\na,") != std::string::npos);
    CHECK(csv.find("\nc,") != std::string::npos);
  }
}
