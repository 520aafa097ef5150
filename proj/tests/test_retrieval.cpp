#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "arag/corpus.hpp"
#include "arag/retrieval.hpp"
#include "arag/util.hpp"
#include "oracles.hpp"

using namespace arag;
using oracles::random_ranked_list;
using oracles::reference_bm25;
using oracles::reference_rrf;

namespace {

Corpus make_corpus(const std::vector<std::pair<std::string, std::string>>& docs) {
  Corpus c;
  for (const auto& [id, text] : docs) c.add({id, "", text});
  return c;
}

}  // namespace

TEST_CASE("sparse index statistics match the toy examples") {
  Corpus one = make_corpus({{"d1", "alan turing"}});
  SparseIndex idx = SparseIndex::build(one);
  CHECK(idx.doc_count() == 1);
  CHECK(idx.avg_doc_length() == doctest::Approx(2.0));
  CHECK(idx.term_frequency("alan", "d1") == 1);
  CHECK(idx.term_frequency("turing", "d1") == 1);
  CHECK(idx.document_frequency("alan") == 1);

  Corpus rep = make_corpus({{"d1", "enigma enigma"}});
  CHECK(SparseIndex::build(rep).term_frequency("enigma", "d1") == 2);

  CHECK_THROWS_AS(SparseIndex::build(Corpus{}), ValidationError);
}

TEST_CASE("sparse index statistics equal brute-force recounting") {
  Corpus corpus = make_corpus({{"a", "red green blue red"},
                               {"b", "green green yellow"},
                               {"c", "blue"}});
  SparseIndex idx = SparseIndex::build(corpus);
  CHECK(idx.doc_count() == 3);
  CHECK(idx.avg_doc_length() == doctest::Approx((4.0 + 3.0 + 1.0) / 3.0));
  for (const auto& d : corpus.docs()) {
    std::map<std::string, int> counts;
    for (const auto& t : tokenize(d.contents)) counts[t] += 1;
    for (const auto& [term, n] : counts) {
      CHECK(idx.term_frequency(term, d.doc_id) == n);
    }
  }
  CHECK(idx.document_frequency("green") == 2);
  CHECK(idx.document_frequency("blue") == 2);
  CHECK(idx.document_frequency("yellow") == 1);
  CHECK(idx.vocab_size() == 4);
}

TEST_CASE("bm25 search matches hand-computed scores on the 5-doc corpus") {
  Corpus corpus = make_corpus({{"d1", "alan turing broke the enigma code"},
                               {"d2", "the enigma code was complex"},
                               {"d3", "turing studied mathematics"},
                               {"d4", "computers changed the world"},
                               {"d5", "history of the computer"}});
  SparseIndex idx = SparseIndex::build(corpus);
  RankedList hits = idx.search("enigma code", 5);
  hits.validate();
  REQUIRE(hits.entries.size() == 2);
  // shorter matching document wins under length normalization
  CHECK(hits.entries[0].doc_id == "d2");
  CHECK(hits.entries[1].doc_id == "d1");
  CHECK(hits.entries[0].score == doctest::Approx(0.6373877202531001).epsilon(1e-12));
  CHECK(hits.entries[1].score == doctest::Approx(0.5858005846211045).epsilon(1e-12));
  for (const auto& e : hits.entries) {
    CHECK(std::abs(e.score - reference_bm25(corpus, e.doc_id, "enigma code")) < 1e-9);
  }

  SUBCASE("unique match ranks first") {
    RankedList t = idx.search("turing", 5);
    REQUIRE(!t.entries.empty());
    CHECK((t.entries[0].doc_id == "d1" || t.entries[0].doc_id == "d3"));
  }

  SUBCASE("absent term yields an empty list") {
    CHECK(idx.search("zeppelin", 3).entries.empty());
  }

  SUBCASE("k must be positive") { CHECK_THROWS_AS(idx.search("enigma", 0), ValidationError); }
}

TEST_CASE("bm25 equals the independent reference on randomized toy corpora") {
  DetRng rng(7);
  const std::vector<std::string> vocab = {"alpha", "beta",  "gamma", "delta", "epsilon",
                                          "zeta",  "eta",   "theta", "iota",  "kappa",
                                          "lam",   "mu",    "nu",    "xi",    "omicron",
                                          "pi",    "rho",   "sigma", "tau",   "upsilon",
                                          "phi",   "chi",   "psi",   "omega", "one",
                                          "two",   "three", "four",  "five",  "six"};
  for (int trial = 0; trial < 20; ++trial) {
    int n_docs = rng.range(2, 10);
    std::vector<std::pair<std::string, std::string>> docs;
    for (int d = 0; d < n_docs; ++d) {
      int len = rng.range(1, 12);
      std::string text;
      for (int i = 0; i < len; ++i) {
        if (i) text += " ";
        text += vocab[rng.below(vocab.size())];
      }
      docs.push_back({"d" + std::to_string(d), text});
    }
    Corpus corpus = make_corpus(docs);
    SparseIndex idx = SparseIndex::build(corpus);
    std::string query = vocab[rng.below(vocab.size())] + " " + vocab[rng.below(vocab.size())];
    RankedList hits = idx.search(query, n_docs);
    hits.validate();
    auto expected = oracles::reference_bm25_ranking(corpus, query);
    REQUIRE(hits.entries.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) {
      CHECK(hits.entries[i].doc_id == expected[i].first);
      CHECK(std::abs(hits.entries[i].score - expected[i].second) < 1e-9);
    }
  }
}

TEST_CASE("dense search is exact inner-product top-k") {
  DenseIndex idx = DenseIndex::build({{"d1", {1.0, 0.0}}, {"d2", {0.0, 1.0}}});
  RankedList basis = idx.search({1.0, 0.0}, 1);
  REQUIRE(basis.entries.size() == 1);
  CHECK(basis.entries[0].doc_id == "d1");
  CHECK(basis.entries[0].score == doctest::Approx(1.0));

  RankedList mixed = idx.search({0.6, 0.8}, 2);
  REQUIRE(mixed.entries.size() == 2);
  CHECK(mixed.entries[0].doc_id == "d2");
  CHECK(mixed.entries[0].score == doctest::Approx(0.8));
  CHECK(mixed.entries[1].doc_id == "d1");
  CHECK(mixed.entries[1].score == doctest::Approx(0.6));

  CHECK_THROWS_AS(idx.search({1.0, 0.0, 0.0}, 1), ValidationError);
  CHECK_THROWS_AS(DenseIndex::build({{"a", {1.0}}, {"b", {1.0, 2.0}}}), IntegrityError);
  CHECK_THROWS_AS(DenseIndex::build({{"a", {1.0}}, {"a", {2.0}}}), IntegrityError);
}

TEST_CASE("dense search equals exhaustive argmax-k on random instances") {
  DetRng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    int dim = rng.range(1, 16);
    int n = rng.range(1, 24);
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (int i = 0; i < n; ++i) {
      std::vector<double> v(static_cast<size_t>(dim));
      for (auto& x : v) x = rng.unit() * 2.0 - 1.0;
      // occasional exact duplicates exercise the doc_id tie-break
      if (i > 0 && rng.below(5) == 0) v = entries[rng.below(entries.size())].second;
      entries.push_back({"d" + std::to_string(i), v});
    }
    DenseIndex idx = DenseIndex::build(entries);
    std::vector<double> q(static_cast<size_t>(dim));
    for (auto& x : q) x = rng.unit() * 2.0 - 1.0;
    int k = rng.range(1, n + 3);
    RankedList got = idx.search(q, k);
    got.validate();

    std::vector<std::pair<std::string, double>> brute;
    for (const auto& [id, v] : entries) {
      double dot = 0.0;
      for (int d = 0; d < dim; ++d) dot += q[static_cast<size_t>(d)] * v[static_cast<size_t>(d)];
      brute.push_back({id, dot});
    }
    std::sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    size_t expect_n = std::min(static_cast<size_t>(k), brute.size());
    REQUIRE(got.entries.size() == expect_n);
    for (size_t i = 0; i < expect_n; ++i) {
      CHECK(got.entries[i].doc_id == brute[i].first);
      CHECK(got.entries[i].score == brute[i].second);
    }
  }
}

TEST_CASE("rrf_fuse matches the hand-evaluated example") {
  RankedList dense{{{"A", 0.9, 1}, {"B", 0.8, 2}}, ListSource::Dense};
  RankedList sparse{{{"B", 5.0, 1}, {"C", 4.0, 2}}, ListSource::Sparse};
  RankedList fused = rrf_fuse({dense, sparse}, 60, 10);
  fused.validate();
  REQUIRE(fused.entries.size() == 3);
  CHECK(fused.entries[0].doc_id == "B");
  CHECK(fused.entries[1].doc_id == "A");
  CHECK(fused.entries[2].doc_id == "C");
  CHECK(std::abs(fused.entries[0].score - (1.0 / 62.0 + 1.0 / 61.0)) < 1e-12);
  CHECK(std::abs(fused.entries[1].score - 1.0 / 61.0) < 1e-12);
  CHECK(std::abs(fused.entries[2].score - 1.0 / 62.0) < 1e-12);
}

TEST_CASE("rrf_fuse on a single list preserves its order") {
  RankedList only{{{"x", 3.0, 1}, {"y", 2.0, 2}, {"z", 1.0, 3}}, ListSource::Dense};
  RankedList fused = rrf_fuse({only}, 60, 10);
  REQUIRE(fused.entries.size() == 3);
  CHECK(fused.entries[0].doc_id == "x");
  CHECK(fused.entries[1].doc_id == "y");
  CHECK(fused.entries[2].doc_id == "z");
}

TEST_CASE("rrf_fuse equals the brute-force oracle and is permutation invariant") {
  DetRng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    int n_lists = rng.range(1, 5);
    std::vector<RankedList> lists;
    for (int i = 0; i < n_lists; ++i) lists.push_back(random_ranked_list(rng, 20));
    int k_rrf = rng.range(0, 100);
    int top_k = rng.range(1, 25);
    RankedList got = rrf_fuse(lists, k_rrf, top_k);
    got.validate();
    RankedList expected = reference_rrf(lists, k_rrf, top_k);
    REQUIRE(got.entries.size() == expected.entries.size());
    for (size_t i = 0; i < expected.entries.size(); ++i) {
      CHECK(got.entries[i].doc_id == expected.entries[i].doc_id);
      CHECK(std::abs(got.entries[i].score - expected.entries[i].score) < 1e-12);
    }
    std::vector<RankedList> shuffled = lists;
    rng.shuffle(shuffled);
    RankedList permuted = rrf_fuse(shuffled, k_rrf, top_k);
    REQUIRE(permuted.entries.size() == got.entries.size());
    for (size_t i = 0; i < got.entries.size(); ++i) {
      CHECK(permuted.entries[i].doc_id == got.entries[i].doc_id);
      CHECK(permuted.entries[i].score == got.entries[i].score);
    }
  }
}

TEST_CASE("improving a document's rank never lowers its fused score") {
  DetRng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RankedList> lists;
    int n_lists = rng.range(2, 4);
    for (int i = 0; i < n_lists; ++i) {
      RankedList l = random_ranked_list(rng, 12);
      if (l.entries.empty()) l.entries.push_back({"doc0", 1.0, 1});
      lists.push_back(l);
    }
    // pick a doc present in list 0 and promote it to rank 1 there
    RankedList& first = lists[0];
    size_t pick = rng.below(first.entries.size());
    std::string target = first.entries[pick].doc_id;
    RankedList before_all = rrf_fuse(lists, 60, 1000);
    auto score_of = [&](const RankedList& l) {
      for (const auto& e : l.entries)
        if (e.doc_id == target) return e.score;
      return 0.0;
    };
    double before = score_of(before_all);
    std::swap(first.entries[0].doc_id, first.entries[pick].doc_id);
    double after = score_of(rrf_fuse(lists, 60, 1000));
    CHECK(after >= before - 1e-15);
  }
}

TEST_CASE("retrieve_and_rerank composes legs per mode") {
  Corpus corpus = make_corpus({{"d1", "the mona lisa hangs in the louvre museum in paris"},
                               {"d2", "the rosetta stone sits in the british museum in london"},
                               {"d3", "the louvre palace mixes renaissance and modern styles"},
                               {"d4", "the british museum is a greek revival building"}});
  SparseIndex sparse = SparseIndex::build(corpus);
  HashEmbedder embedder(64);
  std::vector<std::pair<std::string, std::vector<double>>> vecs;
  for (const auto& d : corpus.docs()) vecs.push_back({d.doc_id, embedder.embed(d.contents, -1)});
  DenseIndex dense = DenseIndex::build(vecs);
  RetrieverResources res{&sparse, &dense, &embedder};
  RetrievalParams params;
  params.top_k = 3;

  SUBCASE("dense_only equals dense_search exactly") {
    auto results = retrieve_and_rerank(res, {"mona lisa louvre"}, RetrievalMode::DenseOnly, params);
    REQUIRE(results.size() == 1);
    RankedList direct = dense.search(embedder.embed("mona lisa louvre", params.query_max_tokens), 3);
    REQUIRE(results[0].list.entries.size() == direct.entries.size());
    for (size_t i = 0; i < direct.entries.size(); ++i) {
      CHECK(results[0].list.entries[i].doc_id == direct.entries[i].doc_id);
      CHECK(results[0].list.entries[i].score == direct.entries[i].score);
    }
  }

  SUBCASE("hybrid equals rrf_fuse of the two legs") {
    auto results = retrieve_and_rerank(res, {"british museum"}, RetrievalMode::Hybrid, params);
    REQUIRE(results.size() == 1);
    int fetch_k = params.top_k * params.fetch_multiplier;
    RankedList s = sparse.search("british museum", fetch_k, params.bm25);
    RankedList d = dense.search(embedder.embed("british museum", params.query_max_tokens), fetch_k);
    RankedList expected = rrf_fuse({s, d}, params.rrf_k, params.top_k);
    REQUIRE(results[0].list.entries.size() == expected.entries.size());
    for (size_t i = 0; i < expected.entries.size(); ++i) {
      CHECK(results[0].list.entries[i].doc_id == expected.entries[i].doc_id);
      CHECK(results[0].list.entries[i].score == expected.entries[i].score);
    }
  }

  SUBCASE("one capped list per sub-query") {
    std::vector<std::string> subs = {"louvre", "british museum", "mona lisa", "rosetta stone"};
    auto results = retrieve_and_rerank(res, subs, RetrievalMode::Hybrid, params);
    REQUIRE(results.size() == 4);
    for (size_t i = 0; i < subs.size(); ++i) {
      CHECK(results[i].sub_query == subs[i]);
      CHECK(results[i].list.entries.size() <= 3);
      results[i].list.validate();
    }
  }

  SUBCASE("missing sub-queries rejected") {
    CHECK_THROWS_AS(retrieve_and_rerank(res, {}, RetrievalMode::Hybrid, params), ValidationError);
  }
}

TEST_CASE("index snapshots round-trip") {
  Corpus corpus = make_corpus({{"d1", "alpha beta"}, {"d2", "gamma"}});
  SparseIndex sparse = SparseIndex::build(corpus);
  SparseIndex back = SparseIndex::from_json(sparse.to_json());
  CHECK(back.doc_count() == sparse.doc_count());
  CHECK(back.avg_doc_length() == sparse.avg_doc_length());
  RankedList a = sparse.search("alpha", 2);
  RankedList b = back.search("alpha", 2);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].doc_id == b.entries[i].doc_id);
    CHECK(a.entries[i].score == b.entries[i].score);
  }

  DenseIndex dense = DenseIndex::build({{"d1", {0.5, 0.25}}, {"d2", {1.0, -1.0}}});
  DenseIndex dback = DenseIndex::from_json(dense.to_json());
  CHECK(dback.dimension() == 2);
  CHECK(dback.size() == 2);
  CHECK(*dback.vector_of("d2") == std::vector<double>{1.0, -1.0});
}
