#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "arag/corpus.hpp"
#include "arag/errors.hpp"
#include "arag/retrieval.hpp"
#include "arag/util.hpp"

namespace arag {

/// Index snapshot layout inside a directory:
///   corpus.jsonl        normalized copy of the ingested corpus
///   sparse_index.json   inverted index + statistics
///   dense_index.json    optional flat vector index
/// Writes are atomic (temp file + rename); builds never mutate an existing
/// snapshot in place.
struct IndexSnapshot {
  Corpus corpus;
  SparseIndex sparse;
  std::optional<DenseIndex> dense;
};

inline void save_index(const std::filesystem::path& dir, const Corpus& corpus,
                       const SparseIndex& sparse, const DenseIndex* dense) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "corpus.jsonl", corpus_to_jsonl(corpus));
  write_file_atomic(dir / "sparse_index.json", sparse.to_json().dump());
  if (dense != nullptr) {
    write_file_atomic(dir / "dense_index.json", dense->to_json().dump());
  }
}

inline IndexSnapshot load_index(const std::filesystem::path& dir) {
  IndexSnapshot snap;
  snap.corpus = ingest_corpus(dir / "corpus.jsonl");
  snap.sparse = SparseIndex::from_json(nlohmann::json::parse(read_file(dir / "sparse_index.json")));
  if (snap.sparse.doc_count() != static_cast<int>(snap.corpus.size()))
    throw IntegrityError("index snapshot: sparse doc count disagrees with corpus");
  std::filesystem::path dense_path = dir / "dense_index.json";
  if (std::filesystem::exists(dense_path)) {
    snap.dense = DenseIndex::from_json(nlohmann::json::parse(read_file(dense_path)));
    snap.dense->validate_against(snap.corpus);
  }
  return snap;
}

}  // namespace arag
