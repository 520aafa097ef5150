#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arag/agents.hpp"
#include "arag/corpus.hpp"
#include "arag/errors.hpp"
#include "arag/ledger.hpp"
#include "arag/orchestrator.hpp"
#include "arag/prompts.hpp"

namespace arag {

// ---------------------------------------------------------------------------
// Lexical metrics
// ---------------------------------------------------------------------------

/// Standard open-domain QA answer normalization: lowercase, drop punctuation,
/// remove the articles a/an/the, collapse whitespace. Idempotent.
inline std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (c < 0x80 && std::ispunct(c)) continue;
    lowered.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  std::vector<std::string> words = split_whitespace(lowered);
  std::string out;
  for (const auto& w : words) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

/// 1 iff the normalized prediction equals any normalized gold answer.
inline int exact_match(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ValidationError("exact_match: golds must be non-empty");
  std::string p = normalize_answer(prediction);
  for (const auto& g : golds) {
    if (p == normalize_answer(g)) return 1;
  }
  return 0;
}

/// Token-level F1 on normalized texts (multiset overlap), maximized over the
/// gold answers. Two empty normalized strings count as a perfect match.
inline double f1_score(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ValidationError("f1_score: golds must be non-empty");
  std::vector<std::string> pred_tokens = split_whitespace(normalize_answer(prediction));
  double best = 0.0;
  for (const auto& g : golds) {
    std::vector<std::string> gold_tokens = split_whitespace(normalize_answer(g));
    if (pred_tokens.empty() || gold_tokens.empty()) {
      best = std::max(best, pred_tokens.empty() && gold_tokens.empty() ? 1.0 : 0.0);
      continue;
    }
    std::map<std::string, int> counts;
    for (const auto& t : gold_tokens) counts[t] += 1;
    int overlap = 0;
    for (const auto& t : pred_tokens) {
      auto it = counts.find(t);
      if (it != counts.end() && it->second > 0) {
        --it->second;
        ++overlap;
      }
    }
    if (overlap == 0) continue;
    double precision = static_cast<double>(overlap) / static_cast<double>(pred_tokens.size());
    double recall = static_cast<double>(overlap) / static_cast<double>(gold_tokens.size());
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

/// 1 iff any normalized gold is a contiguous substring of the normalized
/// prediction.
inline int substring_acc(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ValidationError("substring_acc: golds must be non-empty");
  std::string p = normalize_answer(prediction);
  for (const auto& g : golds) {
    if (p.find(normalize_answer(g)) != std::string::npos) return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// LLM-as-judge protocols
// ---------------------------------------------------------------------------

namespace detail {

/// Strict JSON object parse for judge outputs. Markdown code fences around
/// the object are tolerated; anything else non-JSON is rejected.
inline nlohmann::json parse_judge_object(std::string_view raw) {
  std::string text = trim(raw);
  if (text.rfind("```", 0) == 0) {
    size_t nl = text.find('\n');
    size_t closing = text.rfind("```");
    if (nl != std::string::npos && closing != std::string::npos && closing > nl) {
      text = trim(text.substr(nl + 1, closing - nl - 1));
    }
  }
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw JudgeFormatError("judge output is not a JSON object", std::string(raw));
  return j;
}

}  // namespace detail

struct JudgeVerdict {
  bool judgment = false;
  std::string raw_json;
};

/// Parses the binary correctness schema: a JSON object with the single key
/// "judgment" valued "Yes" or "No".
inline JudgeVerdict parse_judge_verdict(std::string_view raw) {
  nlohmann::json j = detail::parse_judge_object(raw);
  if (j.size() != 1 || !j.contains("judgment") || !j["judgment"].is_string())
    throw JudgeFormatError("expected a single-key {\"judgment\": ...} object", std::string(raw));
  std::string v = j["judgment"].get<std::string>();
  JudgeVerdict out;
  out.raw_json = std::string(raw);
  if (iequals(v, "Yes")) {
    out.judgment = true;
  } else if (iequals(v, "No")) {
    out.judgment = false;
  } else {
    throw JudgeFormatError("judgment value must be \"Yes\" or \"No\"", std::string(raw));
  }
  return out;
}

/// Binary semantic-correctness judgment for one prediction. Retries a
/// malformed verdict once, then throws JudgeFormatError; callers mark such
/// samples unjudged and exclude them from the ACC_LLM denominator.
inline JudgeVerdict judge_acc_llm(ChatProvider& chat, const PromptRegistry& prompts,
                                  const std::string& question,
                                  const std::vector<std::string>& golds,
                                  const std::string& prediction, CostLedger& ledger,
                                  const AgentOptions& opts = {}) {
  if (golds.empty()) throw ValidationError("judge_acc_llm: golds must be non-empty");
  std::string prompt = prompts.get("judge_acc").render(
      {{"question", question}, {"answer", join(golds, "\n")}, {"model_output", prediction}});
  ChatResult first = detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
  try {
    return parse_judge_verdict(first.text);
  } catch (const JudgeFormatError&) {
    ChatResult second =
        detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
    return parse_judge_verdict(second.text);
  }
}

struct IterationRanking {
  std::vector<std::string> ranking;  // best to worst, a permutation of the input ids
  std::string raw_json;
};

inline IterationRanking parse_iteration_ranking(std::string_view raw,
                                                const std::set<std::string>& expected_ids) {
  nlohmann::json j = detail::parse_judge_object(raw);
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (key != "ranking" && key != "reasoning")
      throw JudgeFormatError("unexpected key \"" + key + "\" in ranking object", std::string(raw));
  }
  if (!j.contains("ranking") || !j["ranking"].is_array())
    throw JudgeFormatError("ranking object lacks a \"ranking\" array", std::string(raw));
  IterationRanking out;
  out.raw_json = std::string(raw);
  std::set<std::string> seen;
  for (const auto& v : j["ranking"]) {
    if (!v.is_string())
      throw JudgeFormatError("ranking entries must be strings", std::string(raw));
    std::string id = v.get<std::string>();
    if (!expected_ids.count(id))
      throw JudgeFormatError("ranking names unknown id \"" + id + "\"", std::string(raw));
    if (!seen.insert(id).second)
      throw JudgeFormatError("ranking repeats id \"" + id + "\"", std::string(raw));
    out.ranking.push_back(std::move(id));
  }
  if (seen != expected_ids)
    throw JudgeFormatError("ranking is not a permutation of the answer ids", std::string(raw));
  return out;
}

/// Asks the judge to rank per-iteration answer variants (ids "iter_<k>").
/// Slots for absent variants render as "(not provided)". One retry, then the
/// question counts as unranked.
inline IterationRanking rank_iteration_variants(ChatProvider& chat, const PromptRegistry& prompts,
                                                const std::string& question,
                                                const std::map<int, std::string>& answers,
                                                CostLedger& ledger, const AgentOptions& opts = {}) {
  if (answers.size() < 2)
    throw ValidationError("rank_iteration_variants: need at least two variants");
  std::map<std::string, std::string> bindings{{"question", question}};
  std::set<std::string> ids;
  for (int k = 1; k <= 4; ++k) {
    auto it = answers.find(k);
    bindings["answer_" + std::to_string(k)] =
        it == answers.end() ? std::string("(not provided)") : it->second;
    if (it != answers.end()) ids.insert("iter_" + std::to_string(k));
  }
  if (ids.size() != answers.size())
    throw ValidationError("rank_iteration_variants: iteration keys must be in 1..4");
  std::string prompt = prompts.get("judge_component_iterative_improvement").render(bindings);
  ChatResult first = detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
  try {
    return parse_iteration_ranking(first.text, ids);
  } catch (const JudgeFormatError&) {
    ChatResult second =
        detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
    return parse_iteration_ranking(second.text, ids);
  }
}

// ---------------------------------------------------------------------------
// Failure-mode diagnosis
// ---------------------------------------------------------------------------

enum class FailureCategory {
  QueryDecompositionError,
  RetrievalFailure,
  EvidenceFilteringError,
  SeaError,
  QueryRefinementError,
  GenerationFailure,
};

inline const std::vector<std::pair<FailureCategory, const char*>>& failure_category_names() {
  static const std::vector<std::pair<FailureCategory, const char*>> names = {
      {FailureCategory::QueryDecompositionError, "Query Decomposition Error"},
      {FailureCategory::RetrievalFailure, "Retrieval Failure"},
      {FailureCategory::EvidenceFilteringError, "Evidence Filtering Error"},
      {FailureCategory::SeaError, "SEA Error"},
      {FailureCategory::QueryRefinementError, "Query Refinement Error"},
      {FailureCategory::GenerationFailure, "Generation Failure"},
  };
  return names;
}

inline const char* failure_category_name(FailureCategory c) {
  for (const auto& [cat, name] : failure_category_names()) {
    if (cat == c) return name;
  }
  return "Generation Failure";
}

inline std::optional<FailureCategory> failure_category_from_name(std::string_view s) {
  for (const auto& [cat, name] : failure_category_names()) {
    if (s == name) return cat;
  }
  return std::nullopt;
}

struct FailureDiagnosis {
  FailureCategory failure_category = FailureCategory::GenerationFailure;
  std::string reasoning;
  std::string root_cause_analysis;
  std::string suggested_improvement;
  std::string raw_json;

  nlohmann::json to_json() const {
    return {{"failure_category", failure_category_name(failure_category)},
            {"reasoning", reasoning},
            {"root_cause_analysis", root_cause_analysis},
            {"suggested_improvement", suggested_improvement}};
  }
};

inline FailureDiagnosis parse_failure_diagnosis(std::string_view raw) {
  nlohmann::json j = detail::parse_judge_object(raw);
  static const char* kKeys[] = {"failure_category", "reasoning", "root_cause_analysis",
                                "suggested_improvement"};
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (std::find_if(std::begin(kKeys), std::end(kKeys),
                     [&](const char* k) { return key == k; }) == std::end(kKeys))
      throw JudgeFormatError("unexpected key \"" + key + "\" in diagnosis", std::string(raw));
  }
  for (const char* k : kKeys) {
    if (!j.contains(k) || !j[k].is_string())
      throw JudgeFormatError(std::string("diagnosis lacks string key \"") + k + "\"",
                             std::string(raw));
  }
  auto category = failure_category_from_name(j["failure_category"].get<std::string>());
  if (!category)
    throw JudgeFormatError("unknown failure category: " + j["failure_category"].dump(),
                           std::string(raw));
  FailureDiagnosis d;
  d.failure_category = *category;
  d.reasoning = j["reasoning"].get<std::string>();
  d.root_cause_analysis = j["root_cause_analysis"].get<std::string>();
  d.suggested_improvement = j["suggested_improvement"].get<std::string>();
  d.raw_json = std::string(raw);
  return d;
}

namespace detail {

inline std::string render_doc_lines(const std::vector<EvidenceItem>& items) {
  if (items.empty()) return "(none)";
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += "\n";
    out += "- [" + items[i].doc_id + "] ";
    if (!items[i].title.empty()) out += items[i].title + ": ";
    out += items[i].text;
  }
  return out;
}

}  // namespace detail

/// Root-cause analysis of one incorrect sample from its full trace. Retries
/// once on a malformed diagnosis, then throws JudgeFormatError.
inline FailureDiagnosis diagnose_failure(ChatProvider& chat, const PromptRegistry& prompts,
                                         const PipelineTrace& trace, const QASample& gold,
                                         const Corpus& corpus, CostLedger& ledger,
                                         const AgentOptions& opts = {}) {
  std::vector<std::string> initial = trace.iterations.empty()
                                         ? std::vector<std::string>{}
                                         : trace.iterations.front().sub_queries;
  std::string sub_queries;
  for (const auto& q : initial) {
    if (!sub_queries.empty()) sub_queries += "\n";
    sub_queries += "- " + q;
  }
  if (sub_queries.empty()) sub_queries = "(none)";

  std::vector<EvidenceItem> all_docs;
  std::set<std::string> all_ids;
  std::set<std::string> removed_ids;
  for (const auto& iter : trace.iterations) {
    for (const auto& r : iter.candidates) {
      for (const auto& e : r.list.entries) {
        if (!all_ids.insert(e.doc_id).second) continue;
        const Document* d = corpus.find(e.doc_id);
        EvidenceItem item;
        item.doc_id = e.doc_id;
        if (d != nullptr) {
          item.title = d->title;
          item.text = d->contents;
        } else {
          item.text = "(document text unavailable)";
        }
        all_docs.push_back(std::move(item));
      }
    }
    for (const auto& v : iter.filter_verdicts) {
      removed_ids.insert(v.removed_ids.begin(), v.removed_ids.end());
    }
  }
  std::vector<EvidenceItem> discarded;
  for (const auto& d : all_docs) {
    if (removed_ids.count(d.doc_id)) discarded.push_back(d);
  }

  std::string iteration_reports;
  for (const auto& iter : trace.iterations) {
    iteration_reports += "--- Iteration " + std::to_string(iter.index) + " ---\n";
    iteration_reports += "Sub-queries:\n";
    for (const auto& q : iter.sub_queries) iteration_reports += "- " + q + "\n";
    iteration_reports += "Assessment:\n" + iter.sea_report.raw_text + "\n\n";
  }
  if (iteration_reports.empty()) iteration_reports = "(no iterations ran)";

  std::string final_evidence = trace.final_evidence.empty()
                                   ? std::string("(none)")
                                   : render_numbered_evidence(trace.final_evidence.items());

  std::string prompt = prompts.get("failure_analysis")
                           .render({{"question", trace.question},
                                    {"ground_truth_answer", join(gold.golden_answers, "; ")},
                                    {"final_answer", trace.final_answer},
                                    {"sub_queries", sub_queries},
                                    {"all_retrieved_docs", detail::render_doc_lines(all_docs)},
                                    {"discarded_docs", detail::render_doc_lines(discarded)},
                                    {"final_evidence", final_evidence},
                                    {"iteration_reports_formatted", iteration_reports}});
  ChatResult first = detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
  try {
    return parse_failure_diagnosis(first.text);
  } catch (const JudgeFormatError&) {
    ChatResult second =
        detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
    return parse_failure_diagnosis(second.text);
  }
}

/// Category histogram over diagnoses; counts sum to the number diagnosed.
inline nlohmann::json failure_histogram(const std::vector<FailureDiagnosis>& diagnoses) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [cat, name] : failure_category_names()) {
    (void)cat;
    hist[name] = 0;
  }
  for (const auto& d : diagnoses) {
    hist[failure_category_name(d.failure_category)] =
        hist[failure_category_name(d.failure_category)].get<int>() + 1;
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Component-level quality scoring
// ---------------------------------------------------------------------------

enum class ComponentKind {
  QueryDecomposition,
  FilterEfficacy,
  SufficiencyCheck,
  QueryRefinement,
  FinalContextRelevance,
  Faithfulness,
};

inline const char* component_template_name(ComponentKind k) {
  switch (k) {
    case ComponentKind::QueryDecomposition: return "judge_component_query_decomposition";
    case ComponentKind::FilterEfficacy: return "judge_component_filter_efficacy";
    case ComponentKind::SufficiencyCheck: return "judge_component_sufficiency_check";
    case ComponentKind::QueryRefinement: return "judge_component_query_refinement";
    case ComponentKind::FinalContextRelevance: return "judge_component_final_context_relevance";
    case ComponentKind::Faithfulness: return "judge_component_faithfulness";
  }
  return "judge_component_query_decomposition";
}

struct ComponentScore {
  ComponentKind kind = ComponentKind::QueryDecomposition;
  nlohmann::json data;           // schema-validated judge output
  std::optional<double> score;   // present for 1-5 scored components
  std::string raw_json;
};

inline ComponentScore parse_component_score(ComponentKind kind, std::string_view raw) {
  nlohmann::json j = detail::parse_judge_object(raw);
  ComponentScore out;
  out.kind = kind;
  out.raw_json = std::string(raw);

  auto require_keys = [&](std::initializer_list<const char*> required,
                          std::initializer_list<const char*> optional) {
    for (const auto& [key, val] : j.items()) {
      (void)val;
      bool known = false;
      for (const char* k : required) known = known || key == k;
      for (const char* k : optional) known = known || key == k;
      if (!known)
        throw JudgeFormatError("unexpected key \"" + key + "\" in component verdict",
                               std::string(raw));
    }
    for (const char* k : required) {
      if (!j.contains(k))
        throw JudgeFormatError(std::string("component verdict lacks key \"") + k + "\"",
                               std::string(raw));
    }
  };

  switch (kind) {
    case ComponentKind::QueryDecomposition:
    case ComponentKind::QueryRefinement: {
      require_keys({"score", "reasoning"}, {});
      if (!j["score"].is_number())
        throw JudgeFormatError("score must be numeric", std::string(raw));
      double s = j["score"].get<double>();
      if (s < 1.0 || s > 5.0)
        throw JudgeFormatError("score must be within [1.0, 5.0]", std::string(raw));
      out.score = s;
      break;
    }
    case ComponentKind::FilterEfficacy: {
      require_keys({"incorrectly_kept_ids", "incorrectly_discarded_ids"}, {});
      for (const char* k : {"incorrectly_kept_ids", "incorrectly_discarded_ids"}) {
        if (!j[k].is_array())
          throw JudgeFormatError(std::string(k) + " must be an array", std::string(raw));
      }
      break;
    }
    case ComponentKind::SufficiencyCheck: {
      require_keys({"reasoning", "is_sufficient"}, {});
      if (!j["is_sufficient"].is_boolean())
        throw JudgeFormatError("is_sufficient must be a boolean", std::string(raw));
      break;
    }
    case ComponentKind::FinalContextRelevance: {
      require_keys({"relevance_scores"}, {});
      if (!j["relevance_scores"].is_array())
        throw JudgeFormatError("relevance_scores must be an array", std::string(raw));
      for (const auto& e : j["relevance_scores"]) {
        if (!e.is_object() || !e.contains("doc_id") || !e.contains("score") ||
            !e["score"].is_number())
          throw JudgeFormatError("relevance_scores entries must be {doc_id, score} objects",
                                 std::string(raw));
      }
      break;
    }
    case ComponentKind::Faithfulness: {
      require_keys({"faithfulness_verdict", "reasoning"}, {});
      std::string v = j["faithfulness_verdict"].get<std::string>();
      if (v != "Fully Faithful" && v != "Partially Faithful" && v != "Not Faithful")
        throw JudgeFormatError("unknown faithfulness verdict: " + v, std::string(raw));
      break;
    }
  }
  out.data = std::move(j);
  return out;
}

/// Renders one component-quality prompt, asks the judge, and validates the
/// documented schema. Same retry/exclusion policy as judge_acc_llm.
inline ComponentScore score_component(ChatProvider& chat, const PromptRegistry& prompts,
                                      ComponentKind kind,
                                      const std::map<std::string, std::string>& bindings,
                                      CostLedger& ledger, const AgentOptions& opts = {}) {
  std::string prompt = prompts.get(component_template_name(kind)).render(bindings);
  ChatResult first = detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
  try {
    return parse_component_score(kind, first.text);
  } catch (const JudgeFormatError&) {
    ChatResult second =
        detail::complete_accounted(chat, Role::Judge, prompt, opts.max_new_tokens, ledger);
    return parse_component_score(kind, second.text);
  }
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

struct PerSampleRecord {
  std::string sample_id;
  double em = 0.0;
  double f1 = 0.0;
  double acc = 0.0;
  std::optional<double> acc_llm;  // absent when unjudged or judging disabled
  int api_calls = 0;
  long long tokens = 0;
};

struct MetricReport {
  double em = 0.0;
  double f1 = 0.0;
  double acc = 0.0;
  std::optional<double> acc_llm;
  int n_samples = 0;
  double avg_api_calls = 0.0;
  double avg_tokens = 0.0;
  int judged = 0;
  int excluded = 0;  // judge failures, outside the ACC_LLM denominator
  std::vector<PerSampleRecord> per_sample;

  nlohmann::json to_json() const {
    nlohmann::json metrics{{"em", em},
                           {"f1", f1},
                           {"acc", acc},
                           {"n_samples", n_samples},
                           {"avg_api_calls", avg_api_calls},
                           {"avg_tokens", avg_tokens}};
    if (acc_llm) {
      metrics["acc_llm"] = *acc_llm;
      metrics["judged"] = judged;
      metrics["excluded"] = excluded;
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : per_sample) {
      nlohmann::json row{{"sample_id", r.sample_id}, {"em", r.em},        {"f1", r.f1},
                         {"acc", r.acc},             {"api_calls", r.api_calls},
                         {"tokens", r.tokens}};
      if (r.acc_llm) row["acc_llm"] = *r.acc_llm;
      rows.push_back(std::move(row));
    }
    return {{"metrics", metrics},
            {"per_sample", rows},
            {"cost", {{"avg_api_calls", avg_api_calls}, {"avg_tokens", avg_tokens}}}};
  }

  std::string to_csv() const {
    auto num = [](double v) { return nlohmann::json(v).dump(); };
    std::string csv = "sample_id,em,f1,acc,acc_llm,api_calls,tokens\n";
    for (const auto& r : per_sample) {
      csv += r.sample_id + "," + num(r.em) + "," + num(r.f1) + "," + num(r.acc) + ",";
      if (r.acc_llm) csv += num(*r.acc_llm);
      csv += "," + std::to_string(r.api_calls) + "," + std::to_string(r.tokens) + "\n";
    }
    return csv;
  }
};

struct JudgeContext {
  ChatProvider* chat = nullptr;
  const PromptRegistry* prompts = nullptr;
};

/// Scores a batch of traces against their dataset samples (aligned by
/// sample_id) and reduces per-sample records into a report. With a judge
/// context, ACC_LLM runs per sample; unjudgeable samples are excluded from
/// its denominator and counted.
inline MetricReport evaluate_run(const std::vector<PipelineTrace>& traces,
                                 const std::vector<QASample>& dataset,
                                 const JudgeContext* judge = nullptr,
                                 CostLedger* judge_ledger = nullptr,
                                 const AgentOptions& opts = {}) {
  std::map<std::string, const PipelineTrace*> by_id;
  for (const auto& t : traces) by_id[t.sample_id] = &t;
  std::vector<std::string> missing;
  for (const auto& s : dataset) {
    if (!by_id.count(s.sample_id)) missing.push_back(s.sample_id);
  }
  if (!missing.empty())
    throw ValidationError("evaluate_run: no trace for sample ids: " + join(missing, ", "));

  MetricReport report;
  report.n_samples = static_cast<int>(dataset.size());
  CostLedger local_judge_ledger;
  CostLedger& jledger = judge_ledger ? *judge_ledger : local_judge_ledger;

  double sum_em = 0, sum_f1 = 0, sum_acc = 0, sum_calls = 0, sum_tokens = 0, sum_llm = 0;
  for (const auto& sample : dataset) {
    const PipelineTrace& trace = *by_id.at(sample.sample_id);
    PerSampleRecord rec;
    rec.sample_id = sample.sample_id;
    rec.em = exact_match(trace.final_answer, sample.golden_answers);
    rec.f1 = f1_score(trace.final_answer, sample.golden_answers);
    rec.acc = substring_acc(trace.final_answer, sample.golden_answers);
    rec.api_calls = trace.total_cost.total_calls();
    rec.tokens = trace.total_cost.total_tokens();
    if (judge != nullptr) {
      try {
        JudgeVerdict v = judge_acc_llm(*judge->chat, *judge->prompts, sample.question,
                                       sample.golden_answers, trace.final_answer, jledger, opts);
        rec.acc_llm = v.judgment ? 1.0 : 0.0;
        report.judged += 1;
        sum_llm += *rec.acc_llm;
      } catch (const JudgeFormatError&) {
        report.excluded += 1;
      }
    }
    sum_em += rec.em;
    sum_f1 += rec.f1;
    sum_acc += rec.acc;
    sum_calls += rec.api_calls;
    sum_tokens += static_cast<double>(rec.tokens);
    report.per_sample.push_back(std::move(rec));
  }
  const double n = static_cast<double>(report.n_samples);
  if (report.n_samples > 0) {
    report.em = sum_em / n;
    report.f1 = sum_f1 / n;
    report.acc = sum_acc / n;
    report.avg_api_calls = sum_calls / n;
    report.avg_tokens = sum_tokens / n;
  }
  if (judge != nullptr && report.judged > 0) {
    report.acc_llm = sum_llm / static_cast<double>(report.judged);
  }
  return report;
}

}  // namespace arag
