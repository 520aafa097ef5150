#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "arag/corpus.hpp"
#include "arag/errors.hpp"
#include "arag/util.hpp"

namespace arag {

enum class ListSource { Sparse, Dense, Fused };

inline const char* list_source_name(ListSource s) {
  switch (s) {
    case ListSource::Sparse: return "sparse";
    case ListSource::Dense: return "dense";
    case ListSource::Fused: return "fused";
  }
  return "fused";
}

struct RankedEntry {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;  // 1-based
};

/// Ordered search result. Ranks are contiguous 1..n, scores non-increasing,
/// doc_ids distinct. Ties everywhere break by ascending doc_id so runs are
/// reproducible bit for bit.
struct RankedList {
  std::vector<RankedEntry> entries;
  ListSource source = ListSource::Fused;

  void validate() const {
    std::unordered_map<std::string, int> seen;
    for (size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].rank != static_cast<int>(i) + 1)
        throw IntegrityError("ranked list: ranks must be contiguous from 1");
      if (i > 0 && entries[i].score > entries[i - 1].score)
        throw IntegrityError("ranked list: scores must be non-increasing");
      if (!seen.emplace(entries[i].doc_id, 1).second)
        throw IntegrityError("ranked list: duplicate doc_id " + entries[i].doc_id);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) {
      arr.push_back({{"doc_id", e.doc_id}, {"score", e.score}, {"rank", e.rank}});
    }
    return {{"source", list_source_name(source)}, {"entries", arr}};
  }

  static RankedList from_json(const nlohmann::json& j) {
    RankedList list;
    std::string src = j.at("source").get<std::string>();
    list.source = src == "sparse"  ? ListSource::Sparse
                  : src == "dense" ? ListSource::Dense
                                   : ListSource::Fused;
    for (const auto& e : j.at("entries")) {
      list.entries.push_back(
          {e.at("doc_id").get<std::string>(), e.at("score").get<double>(), e.at("rank").get<int>()});
    }
    return list;
  }
};

namespace detail {

/// Sorts (doc_id, score) pairs into a RankedList: descending score, ties by
/// ascending doc_id, truncated to k.
inline RankedList make_ranked(std::vector<std::pair<std::string, double>> scored, int k,
                              ListSource source) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (k >= 0 && scored.size() > static_cast<size_t>(k)) scored.resize(static_cast<size_t>(k));
  RankedList list;
  list.source = source;
  list.entries.reserve(scored.size());
  for (size_t i = 0; i < scored.size(); ++i) {
    list.entries.push_back({std::move(scored[i].first), scored[i].second, static_cast<int>(i) + 1});
  }
  return list;
}

}  // namespace detail

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Okapi BM25 inverted index over document contents.
///
/// score(D, Q) = sum over unique query terms t of
///   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl)),
/// idf(t) = ln((N - df + 0.5) / (df + 0.5)).
/// Only documents matching at least one query term are candidates.
class SparseIndex {
 public:
  static SparseIndex build(const Corpus& corpus) {
    if (corpus.empty()) throw ValidationError("cannot build sparse index over an empty corpus");
    SparseIndex idx;
    idx.doc_ids_.reserve(corpus.size());
    idx.doc_lengths_.reserve(corpus.size());
    long long total_len = 0;
    for (size_t ord = 0; ord < corpus.size(); ++ord) {
      const Document& d = corpus.at(ord);
      idx.doc_ids_.push_back(d.doc_id);
      std::vector<std::string> toks = tokenize(d.contents);
      idx.doc_lengths_.push_back(static_cast<int>(toks.size()));
      total_len += static_cast<long long>(toks.size());
      std::map<std::string, int> tf;
      for (auto& t : toks) tf[t] += 1;
      for (auto& [term, count] : tf) {
        idx.postings_[term].push_back({static_cast<int>(ord), count});
      }
    }
    idx.avg_doc_length_ = static_cast<double>(total_len) / static_cast<double>(corpus.size());
    return idx;
  }

  int doc_count() const { return static_cast<int>(doc_ids_.size()); }
  double avg_doc_length() const { return avg_doc_length_; }
  size_t vocab_size() const { return postings_.size(); }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  int doc_length(int ordinal) const { return doc_lengths_.at(static_cast<size_t>(ordinal)); }

  int document_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : static_cast<int>(it->second.size());
  }

  int term_frequency(const std::string& term, const std::string& doc_id) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return 0;
    for (const auto& [ord, tf] : it->second) {
      if (doc_ids_[static_cast<size_t>(ord)] == doc_id) return tf;
    }
    return 0;
  }

  RankedList search(std::string_view query, int k, const Bm25Params& params = {}) const {
    if (k < 1) throw ValidationError("sparse_search: k must be >= 1");
    std::vector<std::string> terms = tokenize(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    const double n_docs = static_cast<double>(doc_count());
    std::vector<double> acc(doc_ids_.size(), 0.0);
    std::vector<char> touched(doc_ids_.size(), 0);
    for (const auto& term : terms) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double df = static_cast<double>(it->second.size());
      const double idf = std::log((n_docs - df + 0.5) / (df + 0.5));
      for (const auto& [ord, tf] : it->second) {
        const double len = static_cast<double>(doc_lengths_[static_cast<size_t>(ord)]);
        const double denom =
            static_cast<double>(tf) + params.k1 * (1.0 - params.b + params.b * len / avg_doc_length_);
        acc[static_cast<size_t>(ord)] += idf * (static_cast<double>(tf) * (params.k1 + 1.0)) / denom;
        touched[static_cast<size_t>(ord)] = 1;
      }
    }
    std::vector<std::pair<std::string, double>> scored;
    for (size_t ord = 0; ord < doc_ids_.size(); ++ord) {
      if (touched[ord]) scored.push_back({doc_ids_[ord], acc[ord]});
    }
    return detail::make_ranked(std::move(scored), k, ListSource::Sparse);
  }

  nlohmann::json to_json() const {
    nlohmann::json post = nlohmann::json::object();
    for (const auto& [term, plist] : std::map<std::string, std::vector<std::pair<int, int>>>(
             postings_.begin(), postings_.end())) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& [ord, tf] : plist) arr.push_back({ord, tf});
      post[term] = std::move(arr);
    }
    return {{"format", "sparse_index.v1"},
            {"doc_ids", doc_ids_},
            {"doc_lengths", doc_lengths_},
            {"avg_doc_length", avg_doc_length_},
            {"postings", post}};
  }

  static SparseIndex from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "sparse_index.v1")
      throw IntegrityError("unrecognized sparse index snapshot format");
    SparseIndex idx;
    idx.doc_ids_ = j.at("doc_ids").get<std::vector<std::string>>();
    idx.doc_lengths_ = j.at("doc_lengths").get<std::vector<int>>();
    idx.avg_doc_length_ = j.at("avg_doc_length").get<double>();
    for (const auto& [term, arr] : j.at("postings").items()) {
      std::vector<std::pair<int, int>> plist;
      for (const auto& e : arr) {
        int ord = e.at(0).get<int>();
        if (ord < 0 || ord >= static_cast<int>(idx.doc_ids_.size()))
          throw IntegrityError("sparse index snapshot references unknown document ordinal");
        plist.push_back({ord, e.at(1).get<int>()});
      }
      idx.postings_[term] = std::move(plist);
    }
    return idx;
  }

 private:
  std::vector<std::string> doc_ids_;  // ordinal -> doc_id
  std::vector<int> doc_lengths_;
  double avg_doc_length_ = 0.0;
  std::unordered_map<std::string, std::vector<std::pair<int, int>>> postings_;
};

/// Exact flat inner-product index: search is an exhaustive scan, no
/// approximation. Scores accumulate in double precision.
class DenseIndex {
 public:
  static DenseIndex build(std::vector<std::pair<std::string, std::vector<double>>> entries) {
    if (entries.empty()) throw ValidationError("cannot build dense index with no vectors");
    DenseIndex idx;
    idx.dim_ = static_cast<int>(entries.front().second.size());
    if (idx.dim_ == 0) throw ValidationError("dense index vectors must be non-empty");
    for (auto& [id, vec] : entries) {
      if (static_cast<int>(vec.size()) != idx.dim_)
        throw IntegrityError("embedding dimension mismatch for id \"" + id + "\": expected " +
                             std::to_string(idx.dim_) + ", got " + std::to_string(vec.size()));
      if (!idx.by_id_.emplace(id, idx.ids_.size()).second)
        throw IntegrityError("duplicate embedding id: " + id);
      idx.ids_.push_back(std::move(id));
      idx.vectors_.push_back(std::move(vec));
    }
    return idx;
  }

  /// Reads a JSONL embeddings file: {"id": str, "vector": [float, ...]} per
  /// line. Dimension is inferred from the first record and enforced after.
  static DenseIndex load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open embeddings file: " + path.string());
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim_view(line).empty()) continue;
      nlohmann::json j = detail::parse_jsonl_line(line, path, line_no);
      std::string id = detail::require_string(j, "id", path, line_no);
      auto it = j.find("vector");
      if (it == j.end() || !it->is_array())
        throw IngestError(path.string() + ": line " + std::to_string(line_no) +
                          ": missing or non-array field \"vector\"");
      std::vector<double> vec;
      vec.reserve(it->size());
      for (const auto& v : *it) {
        if (!v.is_number())
          throw IngestError(path.string() + ": line " + std::to_string(line_no) +
                            ": vector entries must be numbers");
        vec.push_back(v.get<double>());
      }
      entries.push_back({std::move(id), std::move(vec)});
    }
    if (entries.empty()) throw IngestError("embeddings file is empty: " + path.string());
    return build(std::move(entries));
  }

  void validate_against(const Corpus& corpus) const {
    for (const auto& id : ids_) {
      if (!corpus.contains(id))
        throw IntegrityError("embedding id \"" + id + "\" does not exist in the corpus");
    }
  }

  int dimension() const { return dim_; }
  size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  const std::vector<double>* vector_of(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &vectors_[it->second];
  }

  RankedList search(const std::vector<double>& query, int k) const {
    if (k < 1) throw ValidationError("dense_search: k must be >= 1");
    if (static_cast<int>(query.size()) != dim_)
      throw ValidationError("dense_search: query dimension " + std::to_string(query.size()) +
                            " does not match index dimension " + std::to_string(dim_));
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(ids_.size());
    for (size_t i = 0; i < ids_.size(); ++i) {
      double dot = 0.0;
      const std::vector<double>& v = vectors_[i];
      for (int d = 0; d < dim_; ++d) dot += query[static_cast<size_t>(d)] * v[static_cast<size_t>(d)];
      scored.push_back({ids_[i], dot});
    }
    return detail::make_ranked(std::move(scored), k, ListSource::Dense);
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (size_t i = 0; i < ids_.size(); ++i) {
      arr.push_back({{"id", ids_[i]}, {"vector", vectors_[i]}});
    }
    return {{"format", "dense_index.v1"}, {"dimension", dim_}, {"entries", arr}};
  }

  static DenseIndex from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "dense_index.v1")
      throw IntegrityError("unrecognized dense index snapshot format");
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (const auto& e : j.at("entries")) {
      entries.push_back({e.at("id").get<std::string>(), e.at("vector").get<std::vector<double>>()});
    }
    DenseIndex idx = build(std::move(entries));
    if (idx.dimension() != j.at("dimension").get<int>())
      throw IntegrityError("dense index snapshot dimension disagrees with its entries");
    return idx;
  }

 private:
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> vectors_;
  std::unordered_map<std::string, size_t> by_id_;
};

/// Reciprocal Rank Fusion: score(d) = sum over input lists containing d of
/// 1 / (k_rrf + rank_list(d)). Documents absent from a list contribute
/// nothing for it. Per-document contributions are summed in ascending rank
/// order, which makes the result invariant under permutation of the input
/// lists bit for bit.
inline RankedList rrf_fuse(const std::vector<RankedList>& lists, int k_rrf, int top_k) {
  if (lists.empty()) throw ValidationError("rrf_fuse: need at least one input list");
  if (k_rrf < 0) throw ValidationError("rrf_fuse: k_rrf must be >= 0");
  if (top_k < 1) throw ValidationError("rrf_fuse: top_k must be >= 1");
  std::map<std::string, std::vector<int>> ranks_by_doc;
  for (const auto& list : lists) {
    for (const auto& e : list.entries) ranks_by_doc[e.doc_id].push_back(e.rank);
  }
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(ranks_by_doc.size());
  for (auto& [doc_id, ranks] : ranks_by_doc) {
    std::sort(ranks.begin(), ranks.end());
    double score = 0.0;
    for (int r : ranks) score += 1.0 / static_cast<double>(k_rrf + r);
    scored.push_back({doc_id, score});
  }
  return detail::make_ranked(std::move(scored), top_k, ListSource::Fused);
}

/// Text embedding source. Implementations must return a constant dimension.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// Embeds `text` after truncating it to at most `max_tokens` words.
  virtual std::vector<double> embed(std::string_view text, int max_tokens) = 0;
  virtual int dimension() const = 0;
};

/// Deterministic lexical-hash embedder: each token hashes to a signed slot,
/// and the result is L2-normalized. Inner products approximate token overlap.
/// Useful for offline runs, demos, and tests; not a semantic encoder.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(int dim = 256) : dim_(dim) {
    if (dim < 1) throw ValidationError("hash embedder dimension must be >= 1");
  }

  std::vector<double> embed(std::string_view text, int max_tokens) override {
    std::vector<std::string> toks = tokenize(text);
    if (max_tokens >= 0 && toks.size() > static_cast<size_t>(max_tokens))
      toks.resize(static_cast<size_t>(max_tokens));
    std::vector<double> v(static_cast<size_t>(dim_), 0.0);
    for (const auto& t : toks) {
      uint64_t h = fnv1a64(t);
      size_t slot = static_cast<size_t>(h % static_cast<uint64_t>(dim_));
      double sign = ((h >> 32) & 1ULL) ? 1.0 : -1.0;
      v[slot] += sign;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  int dimension() const override { return dim_; }

 private:
  int dim_;
};

enum class RetrievalMode { Hybrid, DenseOnly };

inline const char* retrieval_mode_name(RetrievalMode m) {
  return m == RetrievalMode::Hybrid ? "hybrid" : "dense_only";
}

inline RetrievalMode retrieval_mode_from_name(std::string_view s) {
  if (iequals(s, "hybrid")) return RetrievalMode::Hybrid;
  if (iequals(s, "dense_only")) return RetrievalMode::DenseOnly;
  throw ConfigError("unknown retrieval mode: " + std::string(s));
}

struct RetrievalParams {
  int top_k = 5;
  int rrf_k = 60;
  /// Each leg of a hybrid search fetches fetch_multiplier * top_k candidates
  /// before fusion, so fusion has more than the final cutoff to work with.
  int fetch_multiplier = 2;
  int query_max_tokens = 128;  // truncation bound applied before embedding
  Bm25Params bm25;
};

struct RetrieverResources {
  const SparseIndex* sparse = nullptr;
  const DenseIndex* dense = nullptr;
  EmbeddingProvider* embedder = nullptr;
};

struct SubQueryResult {
  std::string sub_query;
  RankedList list;
};

/// Per sub-query evidence search. Hybrid mode fuses the sparse and dense legs
/// with RRF; dense_only mode returns the dense ranking directly (the
/// standardized benchmark setting).
inline std::vector<SubQueryResult> retrieve_and_rerank(const RetrieverResources& res,
                                                       const std::vector<std::string>& sub_queries,
                                                       RetrievalMode mode,
                                                       const RetrievalParams& params) {
  if (sub_queries.empty()) throw ValidationError("retrieve_and_rerank: no sub-queries given");
  if (params.top_k < 1) throw ValidationError("retrieve_and_rerank: top_k must be >= 1");
  if (res.dense == nullptr || res.embedder == nullptr)
    throw ConfigError("retrieval requires a dense index and an embedding provider");
  if (mode == RetrievalMode::Hybrid && res.sparse == nullptr)
    throw ConfigError("hybrid retrieval requires a sparse index");

  std::vector<SubQueryResult> out;
  out.reserve(sub_queries.size());
  for (const std::string& q : sub_queries) {
    std::vector<double> qvec = res.embedder->embed(q, params.query_max_tokens);
    if (mode == RetrievalMode::DenseOnly) {
      out.push_back({q, res.dense->search(qvec, params.top_k)});
      continue;
    }
    int fetch_k = params.top_k * std::max(1, params.fetch_multiplier);
    RankedList sparse = res.sparse->search(q, fetch_k, params.bm25);
    RankedList dense = res.dense->search(qvec, fetch_k);
    out.push_back({q, rrf_fuse({sparse, dense}, params.rrf_k, params.top_k)});
  }
  return out;
}

}  // namespace arag
