#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "arag/agents.hpp"
#include "arag/corpus.hpp"
#include "arag/errors.hpp"
#include "arag/evidence.hpp"
#include "arag/ledger.hpp"
#include "arag/retrieval.hpp"

namespace arag {

struct PipelineConfig {
  int max_iterations = 3;
  int top_k = 5;
  /// dense_only is the standardized benchmark setting; hybrid adds the
  /// sparse leg and RRF fusion.
  RetrievalMode retrieval_mode = RetrievalMode::DenseOnly;
  /// When enabled, OBVIOUS-routed queries answer straight from parametric
  /// knowledge. Off by default so every query passes through the pipeline.
  bool obvious_shortcut = false;
  /// When false, every stage runs on the single SMALL model (uniform setup).
  /// When true, heavier stages run on LARGE and routed queries may use the
  /// REASONER generator.
  bool adaptive_models = false;
  int filter_batch_size = 20;
  int rrf_k = 60;
  Bm25Params bm25;
  int fetch_multiplier = 2;
  int query_max_tokens = 128;
  int max_new_tokens = 1024;
  long long max_input_tokens = 8000;
  double temperature = 0.0;

  void validate() const {
    if (max_iterations < 1 || max_iterations > 10)
      throw ConfigError("max_iterations must be in [1, 10]");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (filter_batch_size < 1) throw ConfigError("filter_batch_size must be >= 1");
    if (rrf_k < 0) throw ConfigError("rrf_k must be >= 0");
    if (fetch_multiplier < 1) throw ConfigError("fetch_multiplier must be >= 1");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (max_input_tokens < 1) throw ConfigError("max_input_tokens must be >= 1");
  }

  RetrievalParams retrieval_params() const {
    RetrievalParams p;
    p.top_k = top_k;
    p.rrf_k = rrf_k;
    p.fetch_multiplier = fetch_multiplier;
    p.query_max_tokens = query_max_tokens;
    p.bm25 = bm25;
    return p;
  }

  AgentOptions agent_options() const {
    AgentOptions o;
    o.max_new_tokens = max_new_tokens;
    o.max_input_tokens = max_input_tokens;
    return o;
  }
};

enum class AgentKind { Router, Decompose, Filter, Sea, Refine, Generate };

/// Stage -> model-role mapping. Uniform setups bill everything to SMALL;
/// adaptive setups put the lighter analytical stages on SMALL, the heavier
/// ones on LARGE, and final generation on the routed generator.
inline Role agent_role(AgentKind kind, const RouteDecision& route, const PipelineConfig& cfg) {
  if (!cfg.adaptive_models) return Role::Small;
  switch (kind) {
    case AgentKind::Router:
    case AgentKind::Decompose:
    case AgentKind::Sea:
      return Role::Small;
    case AgentKind::Filter:
    case AgentKind::Refine:
      return Role::Large;
    case AgentKind::Generate:
      return route.generator_role;
  }
  return Role::Small;
}

enum class StopReason { Sufficient, BudgetExhausted, ObviousBypass, Error };

inline const char* stop_reason_name(StopReason s) {
  switch (s) {
    case StopReason::Sufficient: return "sufficient";
    case StopReason::BudgetExhausted: return "budget_exhausted";
    case StopReason::ObviousBypass: return "obvious_bypass";
    case StopReason::Error: return "error";
  }
  return "error";
}

inline StopReason stop_reason_from_name(std::string_view s) {
  if (s == "sufficient") return StopReason::Sufficient;
  if (s == "budget_exhausted") return StopReason::BudgetExhausted;
  if (s == "obvious_bypass") return StopReason::ObviousBypass;
  if (s == "error") return StopReason::Error;
  throw IntegrityError("unknown stop reason: " + std::string(s));
}

struct IterationRecord {
  int index = 1;
  std::vector<std::string> sub_queries;
  std::vector<SubQueryResult> candidates;
  std::vector<FilterVerdict> filter_verdicts;
  SEAReport sea_report;
  CostLedger cost_delta;

  nlohmann::json to_json() const {
    nlohmann::json cand = nlohmann::json::array();
    for (const auto& c : candidates) {
      nlohmann::json j = c.list.to_json();
      j["sub_query"] = c.sub_query;
      cand.push_back(std::move(j));
    }
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : filter_verdicts) verdicts.push_back(v.to_json());
    return {{"index", index},
            {"sub_queries", sub_queries},
            {"candidates", cand},
            {"filter_verdicts", verdicts},
            {"sea_report", sea_report.to_json()},
            {"cost_delta", cost_delta.to_json()}};
  }

  static IterationRecord from_json(const nlohmann::json& j) {
    IterationRecord rec;
    rec.index = j.at("index").get<int>();
    rec.sub_queries = j.at("sub_queries").get<std::vector<std::string>>();
    for (const auto& c : j.at("candidates")) {
      SubQueryResult r;
      r.sub_query = c.at("sub_query").get<std::string>();
      r.list = RankedList::from_json(c);
      rec.candidates.push_back(std::move(r));
    }
    for (const auto& v : j.at("filter_verdicts"))
      rec.filter_verdicts.push_back(FilterVerdict::from_json(v));
    rec.sea_report = SEAReport::from_json(j.at("sea_report"));
    rec.cost_delta = CostLedger::from_json(j.at("cost_delta"));
    return rec;
  }
};

/// Full record of one query's run; one JSON document per sample on disk.
struct PipelineTrace {
  std::string sample_id;
  std::string question;
  RouteDecision route;
  std::vector<IterationRecord> iterations;
  EvidenceSet final_evidence;
  /// Leading final_evidence items that fit the generation input budget;
  /// citation tokens [N] resolve against this prefix.
  size_t generation_evidence_count = 0;
  std::string final_answer;
  CostLedger total_cost;
  StopReason stop_reason = StopReason::BudgetExhausted;
  std::string error;  // non-empty iff stop_reason == Error

  nlohmann::json to_json() const {
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& it : iterations) iters.push_back(it.to_json());
    nlohmann::json j{{"sample_id", sample_id},
                     {"question", question},
                     {"route", route.to_json()},
                     {"iterations", iters},
                     {"final_evidence", final_evidence.to_json()},
                     {"generation_evidence_count", generation_evidence_count},
                     {"final_answer", final_answer},
                     {"total_cost", total_cost.to_json()},
                     {"stop_reason", stop_reason_name(stop_reason)}};
    if (!error.empty()) j["error"] = error;
    return j;
  }

  static PipelineTrace from_json(const nlohmann::json& j) {
    PipelineTrace t;
    t.sample_id = j.value("sample_id", std::string());
    t.question = j.at("question").get<std::string>();
    t.route = RouteDecision::from_json(j.at("route"));
    for (const auto& it : j.at("iterations")) t.iterations.push_back(IterationRecord::from_json(it));
    t.final_evidence = EvidenceSet::from_json(j.at("final_evidence"));
    t.generation_evidence_count = j.at("generation_evidence_count").get<size_t>();
    t.final_answer = j.at("final_answer").get<std::string>();
    t.total_cost = CostLedger::from_json(j.at("total_cost"));
    t.stop_reason = stop_reason_from_name(j.at("stop_reason").get<std::string>());
    t.error = j.value("error", std::string());
    return t;
  }
};

/// Set-union by doc_id: existing items keep their order and provenance; new
/// items append in ascending fused_rank (stable across sub-queries).
inline EvidenceSet merge_evidence(const EvidenceSet& existing, std::vector<EvidenceItem> incoming) {
  std::stable_sort(incoming.begin(), incoming.end(),
                   [](const EvidenceItem& a, const EvidenceItem& b) {
                     return a.fused_rank < b.fused_rank;
                   });
  EvidenceSet out = existing;
  for (auto& item : incoming) out.add(std::move(item));
  return out;
}

struct PipelineResources {
  ChatProvider* chat = nullptr;
  const PromptRegistry* prompts = nullptr;
  const Corpus* corpus = nullptr;
  RetrieverResources retrieval;
};

/// Runs one query through the full loop: route, then iterate
/// decompose/retrieve/filter/assess (refining from the second pass on) until
/// the assessment is satisfied or the iteration budget runs out, then
/// generate from the aggregated evidence. Agent failures that survive their
/// retries produce a trace with an error annotation; retrieval and
/// configuration errors propagate.
inline PipelineTrace run_pipeline(const std::string& question, const PipelineConfig& cfg,
                                  const PipelineResources& res) {
  cfg.validate();
  if (res.chat == nullptr || res.prompts == nullptr || res.corpus == nullptr)
    throw ConfigError("run_pipeline: chat provider, prompts, and corpus are required");
  if (trim_view(question).empty()) throw ValidationError("run_pipeline: question is empty");

  PipelineTrace trace;
  trace.question = question;
  const AgentOptions opts = cfg.agent_options();

  try {
    RouteDecision route = route_query(*res.chat, *res.prompts, question, trace.total_cost,
                                      agent_role(AgentKind::Router, {}, cfg), opts);
    trace.route = route;

    if (route.label == RouteLabel::Obvious && cfg.obvious_shortcut) {
      // Parametric-knowledge bypass: the question itself is the prompt.
      Role gen_role = agent_role(AgentKind::Generate, route, cfg);
      ChatResult r = res.chat->complete(gen_role, question, opts.max_new_tokens);
      trace.total_cost.account(gen_role, r.tokens_in, r.tokens_out);
      trace.final_answer = r.text;
      trace.stop_reason = StopReason::ObviousBypass;
      return trace;
    }

    std::vector<std::string> q_previous{question};
    std::set<std::string> q_seen{question};
    EvidenceSet agg;
    trace.stop_reason = StopReason::BudgetExhausted;

    for (int i = 1; i <= cfg.max_iterations; ++i) {
      IterationRecord rec;
      rec.index = i;
      CostLedger delta;

      std::vector<std::string> subs;
      if (i == 1) {
        subs = decompose_query(*res.chat, *res.prompts, question, delta,
                               agent_role(AgentKind::Decompose, route, cfg), opts);
      } else {
        subs = refine_queries(*res.chat, *res.prompts, question,
                              trace.iterations.back().sea_report, q_previous, delta,
                              agent_role(AgentKind::Refine, route, cfg), opts);
      }
      rec.sub_queries = subs;
      for (const auto& q : subs) {
        if (q_seen.insert(q).second) q_previous.push_back(q);
      }

      rec.candidates =
          retrieve_and_rerank(res.retrieval, subs, cfg.retrieval_mode, cfg.retrieval_params());

      // Iteration candidate pool, doc_id-deduplicated in (sub-query, rank) order.
      std::vector<EvidenceItem> pool;
      std::set<std::string> pool_ids;
      for (const auto& r : rec.candidates) {
        for (const auto& e : r.list.entries) {
          if (!pool_ids.insert(e.doc_id).second) continue;
          const Document* d = res.corpus->find(e.doc_id);
          if (d == nullptr)
            throw IntegrityError("retrieval returned unknown doc id: " + e.doc_id);
          pool.push_back({e.doc_id, d->contents, d->title, i, r.sub_query, e.rank});
        }
      }

      std::set<std::string> removed;
      int batch_number = 1;
      for (size_t off = 0; off < pool.size();
           off += static_cast<size_t>(cfg.filter_batch_size), ++batch_number) {
        size_t end = std::min(pool.size(), off + static_cast<size_t>(cfg.filter_batch_size));
        std::vector<FilterCandidate> batch;
        for (size_t b = off; b < end; ++b)
          batch.push_back({pool[b].doc_id, pool[b].title, pool[b].text});
        FilterVerdict verdict =
            filter_evidence(*res.chat, *res.prompts, question, batch, batch_number, delta,
                            agent_role(AgentKind::Filter, route, cfg), opts);
        removed.insert(verdict.removed_ids.begin(), verdict.removed_ids.end());
        rec.filter_verdicts.push_back(std::move(verdict));
      }

      std::vector<EvidenceItem> kept;
      for (const auto& item : pool) {
        if (!removed.count(item.doc_id)) kept.push_back(item);
      }
      agg = merge_evidence(agg, std::move(kept));

      // Holistic audit over the full aggregate, not just this pass's haul.
      rec.sea_report = assess_sufficiency(*res.chat, *res.prompts, question, agg, delta,
                                          agent_role(AgentKind::Sea, route, cfg), opts);
      rec.cost_delta = delta;
      trace.total_cost += delta;
      bool sufficient = rec.sea_report.sufficient;
      trace.iterations.push_back(std::move(rec));
      if (sufficient) {
        trace.stop_reason = StopReason::Sufficient;
        break;
      }
    }

    trace.final_evidence = agg;
    // Generation happens exactly once, even when the budget ran out with
    // insufficient evidence; the prompt's own insufficiency rule handles it.
    GenerationResult gen =
        generate_answer(*res.chat, *res.prompts, agent_role(AgentKind::Generate, route, cfg),
                        question, agg, trace.total_cost, opts);
    trace.final_answer = gen.answer;
    trace.generation_evidence_count = gen.evidence_used;
    return trace;
  } catch (const AgentFormatError& e) {
    trace.error = e.what();
    trace.stop_reason = StopReason::Error;
    return trace;
  } catch (const TransportError& e) {
    trace.error = e.what();
    trace.stop_reason = StopReason::Error;
    return trace;
  }
}

}  // namespace arag
