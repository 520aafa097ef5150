#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "arag/config.hpp"
#include "arag/corpus.hpp"
#include "arag/errors.hpp"
#include "arag/evaluation.hpp"
#include "arag/index_io.hpp"
#include "arag/orchestrator.hpp"
#include "arag/prompts.hpp"
#include "arag/retrieval.hpp"
#include "arag/util.hpp"

namespace arag::cli {

namespace detail {

inline std::string sanitize_filename(std::string_view s) {
  std::string out;
  for (char c : s) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? std::string("_") : out;
}

struct PipelineSetup {
  AppConfig cfg;
  PromptRegistry prompts;
  IndexSnapshot index;
  std::unique_ptr<ChatProvider> chat;
  std::unique_ptr<EmbeddingProvider> embedder;
  std::optional<DenseIndex> synthesized_dense;
  PipelineResources resources;
};

/// Builds every pipeline dependency from the config. When the snapshot lacks
/// a dense index and the embedder is the deterministic hash embedder, doc
/// vectors are synthesized on the fly so fully offline runs work.
inline PipelineSetup make_setup(AppConfig cfg) {
  PipelineSetup setup;
  setup.cfg = std::move(cfg);
  setup.prompts = PromptRegistry::load_dir(setup.cfg.prompts_dir);
  if (setup.cfg.index_dir.empty())
    throw ConfigError("no index configured: set index_dir or pass --index");
  setup.index = load_index(setup.cfg.index_dir);
  setup.chat = make_chat_provider(setup.cfg.provider, setup.cfg.pipeline.temperature);
  setup.embedder = make_embedder(setup.cfg.embedder);
  if (setup.embedder == nullptr)
    throw ConfigError("retrieval needs an embedder: set embedder_type to hash or http");
  if (!setup.index.dense.has_value()) {
    if (setup.cfg.embedder.type == "hash") {
      std::vector<std::pair<std::string, std::vector<double>>> vecs;
      vecs.reserve(setup.index.corpus.size());
      for (const auto& d : setup.index.corpus.docs()) {
        vecs.push_back({d.doc_id, setup.embedder->embed(d.contents, -1)});
      }
      setup.synthesized_dense = DenseIndex::build(std::move(vecs));
    } else {
      throw ConfigError("index has no dense_index.json and the embedder cannot synthesize one; "
                        "rebuild the index with --embeddings");
    }
  }
  setup.resources.chat = setup.chat.get();
  setup.resources.prompts = &setup.prompts;
  setup.resources.corpus = &setup.index.corpus;
  setup.resources.retrieval.sparse = &setup.index.sparse;
  setup.resources.retrieval.dense =
      setup.index.dense.has_value() ? &*setup.index.dense : &*setup.synthesized_dense;
  setup.resources.retrieval.embedder = setup.embedder.get();
  return setup;
}

struct ConfigOverrides {
  std::string config_path;
  std::vector<std::string> sets;  // key=value pairs
  std::string index_dir;
  std::string prompts_dir;
  std::optional<int> max_iterations;
  std::optional<int> top_k;
  std::string retrieval_mode;

  AppConfig resolve() const {
    AppConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    for (const std::string& kv : sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got: " + kv);
      apply_config_entry(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (!index_dir.empty()) cfg.index_dir = index_dir;
    if (!prompts_dir.empty()) cfg.prompts_dir = prompts_dir;
    if (max_iterations) cfg.pipeline.max_iterations = *max_iterations;
    if (top_k) cfg.pipeline.top_k = *top_k;
    if (!retrieval_mode.empty())
      cfg.pipeline.retrieval_mode = retrieval_mode_from_name(retrieval_mode);
    return cfg;
  }

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value config file");
    sub->add_option("--set", sets, "override a config key (key=value), repeatable");
    sub->add_option("--index", index_dir, "index snapshot directory");
    sub->add_option("--prompts", prompts_dir, "prompt template directory");
    sub->add_option("--max-iterations", max_iterations, "iteration budget override");
    sub->add_option("--top-k", top_k, "documents retrieved per sub-query");
    sub->add_option("--retrieval-mode", retrieval_mode, "hybrid or dense_only");
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

struct IndexArgs {
  std::string corpus_path;
  std::string out_dir;
  std::string embeddings_path;
  int hash_dim = 0;  // >0: synthesize and persist hash-embedder vectors
};

inline int run_index(const IndexArgs& args, std::ostream& out, std::ostream& err) {
  try {
    Corpus corpus = ingest_corpus(args.corpus_path);
    if (corpus.empty()) {
      err << "error: corpus is empty\n";
      return 1;
    }
    SparseIndex sparse = SparseIndex::build(corpus);
    std::optional<DenseIndex> dense;
    if (!args.embeddings_path.empty() && args.hash_dim > 0)
      throw ConfigError("--embeddings and --hash-embeddings are mutually exclusive");
    if (!args.embeddings_path.empty()) {
      dense = DenseIndex::load_jsonl(args.embeddings_path);
      dense->validate_against(corpus);
    } else if (args.hash_dim > 0) {
      HashEmbedder embedder(args.hash_dim);
      std::vector<std::pair<std::string, std::vector<double>>> vecs;
      for (const auto& d : corpus.docs()) vecs.push_back({d.doc_id, embedder.embed(d.contents, -1)});
      dense = DenseIndex::build(std::move(vecs));
    }
    save_index(args.out_dir, corpus, sparse, dense ? &*dense : nullptr);
    out << "indexed " << corpus.size() << " documents, vocabulary size " << sparse.vocab_size()
        << "\n";
    if (dense) {
      out << "dense index: " << dense->size() << " vectors, dimension " << dense->dimension()
          << "\n";
    }
    out << "snapshot written to " << args.out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// ask
// ---------------------------------------------------------------------------

struct AskArgs {
  std::string question;
  detail::ConfigOverrides overrides;
  std::string trace_path;
  bool show_evidence = false;
};

inline int run_ask(const AskArgs& args, std::ostream& out, std::ostream& err) {
  PipelineTrace trace;
  trace.question = args.question;
  try {
    detail::PipelineSetup setup = detail::make_setup(args.overrides.resolve());
    trace = run_pipeline(args.question, setup.cfg.pipeline, setup.resources);
    if (!args.trace_path.empty()) write_file_atomic(args.trace_path, trace.to_json().dump(2));
    if (trace.stop_reason == StopReason::Error) {
      err << "error: " << trace.error << "\n";
      return 1;
    }
    out << trace.final_answer << "\n";
    if (args.show_evidence) {
      out << "\nEvidence:\n";
      out << render_numbered_evidence(trace.final_evidence.items(),
                                      trace.generation_evidence_count)
          << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    trace.error = e.what();
    trace.stop_reason = StopReason::Error;
    if (!args.trace_path.empty()) {
      try {
        write_file_atomic(args.trace_path, trace.to_json().dump(2));
      } catch (const std::exception&) {
        // the original failure is the one worth reporting
      }
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string dataset_path;
  std::string out_dir;
  detail::ConfigOverrides overrides;
  bool judge = false;
  int workers = 1;
  int sample = 0;  // 0 = all
  uint64_t seed = 0;
};

inline int run_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  try {
    AppConfig cfg = args.overrides.resolve();
    if (args.judge && !judge_configured(cfg.provider)) {
      err << "error: --judge requires a configured judge endpoint (provider_judge_url)\n";
      return 1;
    }
    std::vector<QASample> dataset = ingest_dataset(args.dataset_path);
    {
      std::set<std::string> ids;
      for (const auto& s : dataset) {
        if (!ids.insert(s.sample_id).second)
          throw IntegrityError("dataset has duplicate sample id: " + s.sample_id);
      }
    }
    if (args.sample > 0 && static_cast<size_t>(args.sample) < dataset.size()) {
      std::vector<size_t> keep =
          sample_indices(dataset.size(), static_cast<size_t>(args.sample), args.seed);
      std::vector<QASample> subset;
      subset.reserve(keep.size());
      for (size_t i : keep) subset.push_back(dataset[i]);
      dataset = std::move(subset);
    }
    if (dataset.empty()) {
      err << "error: dataset selection is empty\n";
      return 1;
    }

    detail::PipelineSetup setup = detail::make_setup(cfg);
    std::filesystem::path out_dir(args.out_dir);
    std::filesystem::create_directories(out_dir / "traces");

    std::vector<PipelineTrace> traces(dataset.size());
    std::atomic<size_t> next{0};
    std::atomic<int> failures{0};
    int workers = std::max(1, args.workers);
    auto worker = [&]() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= dataset.size()) return;
        const QASample& sample = dataset[i];
        PipelineTrace trace;
        try {
          trace = run_pipeline(sample.question, setup.cfg.pipeline, setup.resources);
        } catch (const std::exception& e) {
          trace.question = sample.question;
          trace.error = e.what();
          trace.stop_reason = StopReason::Error;
        }
        trace.sample_id = sample.sample_id;
        if (trace.stop_reason == StopReason::Error) failures.fetch_add(1);
        write_file_atomic(out_dir / "traces" / (detail::sanitize_filename(sample.sample_id) + ".json"),
                          trace.to_json().dump(2));
        traces[i] = std::move(trace);
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    JudgeContext judge_ctx{setup.chat.get(), &setup.prompts};
    MetricReport report = evaluate_run(traces, dataset, args.judge ? &judge_ctx : nullptr,
                                       nullptr, setup.cfg.pipeline.agent_options());
    write_file_atomic(out_dir / "report.json", report.to_json().dump(2));
    write_file_atomic(out_dir / "report.csv", report.to_csv());

    out << "samples: " << report.n_samples << "\n";
    out << "em: " << report.em << "  f1: " << report.f1 << "  acc: " << report.acc;
    if (report.acc_llm) out << "  acc_llm: " << *report.acc_llm;
    out << "\navg_api_calls: " << report.avg_api_calls << "  avg_tokens: " << report.avg_tokens
        << "\n";
    if (args.judge) out << "judged: " << report.judged << "  excluded: " << report.excluded << "\n";
    out << "report written to " << (out_dir / "report.json").string() << "\n";

    int failed = failures.load();
    if (failed * 10 > report.n_samples) {
      err << "error: " << failed << "/" << report.n_samples << " samples failed (>10%)\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// judge
// ---------------------------------------------------------------------------

struct JudgeArgs {
  std::string traces_dir;
  std::string dataset_path;
  std::string out_path;
  detail::ConfigOverrides overrides;
};

inline std::vector<PipelineTrace> load_traces_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("trace directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PipelineTrace> traces;
  traces.reserve(files.size());
  for (const auto& f : files) {
    traces.push_back(PipelineTrace::from_json(nlohmann::json::parse(read_file(f))));
  }
  return traces;
}

inline int run_judge(const JudgeArgs& args, std::ostream& out, std::ostream& err) {
  try {
    AppConfig cfg = args.overrides.resolve();
    if (!judge_configured(cfg.provider)) {
      err << "error: judging requires a configured judge endpoint (provider_judge_url)\n";
      return 1;
    }
    PromptRegistry prompts = PromptRegistry::load_dir(cfg.prompts_dir);
    std::unique_ptr<ChatProvider> chat = make_chat_provider(cfg.provider, cfg.pipeline.temperature);
    std::vector<QASample> dataset = ingest_dataset(args.dataset_path);
    std::vector<PipelineTrace> traces = load_traces_dir(args.traces_dir);
    JudgeContext judge_ctx{chat.get(), &prompts};
    MetricReport report =
        evaluate_run(traces, dataset, &judge_ctx, nullptr, cfg.pipeline.agent_options());
    write_file_atomic(args.out_path, report.to_json().dump(2));
    out << "acc_llm: " << (report.acc_llm ? *report.acc_llm : 0.0) << "  judged: " << report.judged
        << "  excluded: " << report.excluded << "\n";
    out << "report written to " << args.out_path << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string traces_dir;
  std::string dataset_path;
  std::string out_path;
  detail::ConfigOverrides overrides;
  std::string metric = "acc";  // which incorrectness predicate selects samples
  int sample = 0;              // 0 = all incorrect samples
  uint64_t seed = 0;
};

inline int run_diagnose(const DiagnoseArgs& args, std::ostream& out, std::ostream& err) {
  try {
    AppConfig cfg = args.overrides.resolve();
    if (!judge_configured(cfg.provider)) {
      err << "error: diagnosis requires a configured judge endpoint (provider_judge_url)\n";
      return 1;
    }
    if (args.metric != "acc" && args.metric != "em") {
      err << "error: --metric must be acc or em\n";
      return 1;
    }
    PromptRegistry prompts = PromptRegistry::load_dir(cfg.prompts_dir);
    std::unique_ptr<ChatProvider> chat = make_chat_provider(cfg.provider, cfg.pipeline.temperature);
    if (cfg.index_dir.empty())
      throw ConfigError("diagnosis needs the corpus: set index_dir or pass --index");
    IndexSnapshot snap = load_index(cfg.index_dir);
    std::vector<QASample> dataset = ingest_dataset(args.dataset_path);
    std::map<std::string, const QASample*> samples_by_id;
    for (const auto& s : dataset) samples_by_id[s.sample_id] = &s;

    std::vector<PipelineTrace> traces = load_traces_dir(args.traces_dir);
    std::vector<size_t> incorrect;
    for (size_t i = 0; i < traces.size(); ++i) {
      auto it = samples_by_id.find(traces[i].sample_id);
      if (it == samples_by_id.end()) continue;
      int ok = args.metric == "em"
                   ? exact_match(traces[i].final_answer, it->second->golden_answers)
                   : substring_acc(traces[i].final_answer, it->second->golden_answers);
      if (ok == 0) incorrect.push_back(i);
    }
    if (args.sample > 0 && static_cast<size_t>(args.sample) < incorrect.size()) {
      std::vector<size_t> keep =
          sample_indices(incorrect.size(), static_cast<size_t>(args.sample), args.seed);
      std::vector<size_t> subset;
      for (size_t k : keep) subset.push_back(incorrect[k]);
      incorrect = std::move(subset);
    }

    CostLedger ledger;
    std::vector<FailureDiagnosis> diagnoses;
    nlohmann::json rows = nlohmann::json::array();
    int undiagnosed = 0;
    for (size_t i : incorrect) {
      const PipelineTrace& trace = traces[i];
      const QASample& gold = *samples_by_id.at(trace.sample_id);
      try {
        FailureDiagnosis d = diagnose_failure(*chat, prompts, trace, gold, snap.corpus, ledger,
                                              cfg.pipeline.agent_options());
        nlohmann::json row = d.to_json();
        row["sample_id"] = trace.sample_id;
        rows.push_back(std::move(row));
        diagnoses.push_back(std::move(d));
      } catch (const JudgeFormatError&) {
        ++undiagnosed;
      }
    }
    nlohmann::json result{{"histogram", failure_histogram(diagnoses)},
                          {"diagnosed", diagnoses.size()},
                          {"undiagnosed", undiagnosed},
                          {"incorrect_samples", incorrect.size()},
                          {"diagnoses", rows}};
    write_file_atomic(args.out_path, result.dump(2));
    out << "diagnosed " << diagnoses.size() << " of " << incorrect.size()
        << " incorrect samples (undiagnosed: " << undiagnosed << ")\n";
    out << result["histogram"].dump(2) << "\n";
    out << "report written to " << args.out_path << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

struct TraceArgs {
  std::string trace_path;
  bool full = false;
};

inline int run_trace(const TraceArgs& args, std::ostream& out, std::ostream& err) {
  try {
    nlohmann::json j = nlohmann::json::parse(read_file(args.trace_path));
    PipelineTrace trace = PipelineTrace::from_json(j);
    if (args.full) {
      out << j.dump(2) << "\n";
      return 0;
    }
    out << "question: " << trace.question << "\n";
    if (!trace.sample_id.empty()) out << "sample_id: " << trace.sample_id << "\n";
    out << "route: " << route_label_name(trace.route.label) << " (generator "
        << role_name(trace.route.generator_role) << ")\n";
    out << "stop_reason: " << stop_reason_name(trace.stop_reason) << "\n";
    for (const auto& iter : trace.iterations) {
      out << "iteration " << iter.index << ":\n";
      for (const auto& q : iter.sub_queries) out << "  - " << q << "\n";
      size_t candidates = 0, removed = 0;
      for (const auto& c : iter.candidates) candidates += c.list.entries.size();
      for (const auto& v : iter.filter_verdicts) removed += v.removed_ids.size();
      out << "  candidates: " << candidates << ", filtered out: " << removed
          << ", sufficient: " << (iter.sea_report.sufficient ? "yes" : "no") << "\n";
    }
    out << "evidence: " << trace.final_evidence.size() << " documents\n";
    out << "answer: " << trace.final_answer << "\n";
    out << "cost: " << trace.total_cost.total_calls() << " calls, "
        << trace.total_cost.total_tokens() << " tokens\n";
    if (!trace.error.empty()) out << "error: " << trace.error << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"agentic retrieval-augmented QA pipeline"};
  app.require_subcommand(1);

  IndexArgs index_args;
  auto* index_cmd = app.add_subcommand("index", "build index snapshots from a corpus");
  index_cmd->add_option("--corpus", index_args.corpus_path, "corpus JSONL path")->required();
  index_cmd->add_option("--out", index_args.out_dir, "output snapshot directory")->required();
  index_cmd->add_option("--embeddings", index_args.embeddings_path,
                        "precomputed embeddings JSONL ({\"id\", \"vector\"})");
  index_cmd->add_option("--hash-embeddings", index_args.hash_dim,
                        "synthesize hash-embedder vectors with this dimension");

  AskArgs ask_args;
  auto* ask_cmd = app.add_subcommand("ask", "answer a single question");
  ask_cmd->add_option("question", ask_args.question, "the question")->required();
  ask_args.overrides.attach(ask_cmd);
  ask_cmd->add_option("--trace", ask_args.trace_path, "write the full trace JSON here");
  ask_cmd->add_flag("--show-evidence", ask_args.show_evidence,
                    "print the numbered evidence the answer cites");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "run a dataset and write a metric report");
  eval_cmd->add_option("--dataset", eval_args.dataset_path, "dataset JSONL path")->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "output directory")->required();
  eval_args.overrides.attach(eval_cmd);
  eval_cmd->add_flag("--judge", eval_args.judge, "also compute ACC_LLM with the judge model");
  eval_cmd->add_option("--workers", eval_args.workers, "parallel pipeline workers");
  eval_cmd->add_option("--sample", eval_args.sample, "evaluate a seeded random subset of N samples");
  eval_cmd->add_option("--seed", eval_args.seed, "seed for --sample subsetting");

  JudgeArgs judge_args;
  auto* judge_cmd = app.add_subcommand("judge", "judge existing traces for ACC_LLM");
  judge_cmd->add_option("--traces", judge_args.traces_dir, "trace directory")->required();
  judge_cmd->add_option("--dataset", judge_args.dataset_path, "dataset JSONL path")->required();
  judge_cmd->add_option("--out", judge_args.out_path, "output report path")->required();
  judge_args.overrides.attach(judge_cmd);

  DiagnoseArgs diag_args;
  auto* diag_cmd = app.add_subcommand("diagnose", "root-cause analysis of incorrect samples");
  diag_cmd->add_option("--traces", diag_args.traces_dir, "trace directory")->required();
  diag_cmd->add_option("--dataset", diag_args.dataset_path, "dataset JSONL path")->required();
  diag_cmd->add_option("--out", diag_args.out_path, "output report path")->required();
  diag_args.overrides.attach(diag_cmd);
  diag_cmd->add_option("--metric", diag_args.metric, "incorrectness predicate: acc or em");
  diag_cmd->add_option("--sample", diag_args.sample, "diagnose a seeded subset of N failures");
  diag_cmd->add_option("--seed", diag_args.seed, "seed for --sample subsetting");

  TraceArgs trace_args;
  auto* trace_cmd = app.add_subcommand("trace", "inspect a trace file");
  trace_cmd->add_option("file", trace_args.trace_path, "trace JSON path")->required();
  trace_cmd->add_flag("--full", trace_args.full, "print the raw JSON");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  if (index_cmd->parsed()) return run_index(index_args, out, err);
  if (ask_cmd->parsed()) return run_ask(ask_args, out, err);
  if (eval_cmd->parsed()) return run_eval(eval_args, out, err);
  if (judge_cmd->parsed()) return run_judge(judge_args, out, err);
  if (diag_cmd->parsed()) return run_diagnose(diag_args, out, err);
  if (trace_cmd->parsed()) return run_trace(trace_args, out, err);
  err << "error: no subcommand given\n";
  return 1;
}

}  // namespace arag::cli
