#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace arag {

/// One aggregated evidence passage with its retrieval provenance.
struct EvidenceItem {
  std::string doc_id;
  std::string text;
  std::string title;
  int found_in_iteration = 1;
  std::string source_query;
  int fused_rank = 1;

  nlohmann::json to_json() const {
    return {{"doc_id", doc_id},
            {"text", text},
            {"title", title},
            {"found_in_iteration", found_in_iteration},
            {"source_query", source_query},
            {"fused_rank", fused_rank}};
  }

  static EvidenceItem from_json(const nlohmann::json& j) {
    EvidenceItem it;
    it.doc_id = j.at("doc_id").get<std::string>();
    it.text = j.at("text").get<std::string>();
    it.title = j.at("title").get<std::string>();
    it.found_in_iteration = j.at("found_in_iteration").get<int>();
    it.source_query = j.at("source_query").get<std::string>();
    it.fused_rank = j.at("fused_rank").get<int>();
    return it;
  }
};

/// Insertion-ordered, doc_id-deduplicated evidence aggregate. The first
/// occurrence of a document wins; its provenance is never rewritten.
class EvidenceSet {
 public:
  /// Returns false (and keeps the existing item) when doc_id is already present.
  bool add(EvidenceItem item) {
    if (ids_.count(item.doc_id)) return false;
    ids_.insert(item.doc_id);
    items_.push_back(std::move(item));
    return true;
  }

  bool contains(const std::string& doc_id) const { return ids_.count(doc_id) != 0; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<EvidenceItem>& items() const { return items_; }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& it : items_) arr.push_back(it.to_json());
    return arr;
  }

  static EvidenceSet from_json(const nlohmann::json& arr) {
    EvidenceSet set;
    for (const auto& j : arr) set.add(EvidenceItem::from_json(j));
    return set;
  }

 private:
  std::vector<EvidenceItem> items_;
  std::unordered_set<std::string> ids_;
};

/// Canonical numbered evidence block fed to the assessment and generation
/// prompts. Citation tokens [N] in answers refer to these indices (1-based).
/// `limit` caps how many leading items are rendered.
inline std::string render_numbered_evidence(const std::vector<EvidenceItem>& items,
                                            size_t limit = SIZE_MAX) {
  std::string out;
  size_t n = items.size() < limit ? items.size() : limit;
  for (size_t i = 0; i < n; ++i) {
    if (i) out += "\n";
    out += "[" + std::to_string(i + 1) + "] ";
    if (!items[i].title.empty()) {
      out += items[i].title + ": ";
    }
    out += items[i].text;
  }
  return out;
}

}  // namespace arag
