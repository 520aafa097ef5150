#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "arag/errors.hpp"
#include "arag/util.hpp"

namespace arag {

/// One corpus unit. Corpora are assumed pre-chunked into passages upstream.
struct Document {
  std::string doc_id;
  std::string title;
  std::string contents;
};

/// A QA dataset sample: one question plus its gold answer aliases.
struct QASample {
  std::string sample_id;
  std::string question;
  std::vector<std::string> golden_answers;
};

namespace detail {

/// Decodes one UTF-8 codepoint at `i` and advances it. Malformed sequences
/// consume a single byte and decode as U+FFFD.
inline uint32_t decode_utf8(std::string_view s, size_t& i) {
  unsigned char c0 = static_cast<unsigned char>(s[i]);
  int len = c0 >= 0xF0 ? 4 : c0 >= 0xE0 ? 3 : c0 >= 0xC0 ? 2 : 1;
  if (len == 1) {  // stray continuation byte
    ++i;
    return 0xFFFD;
  }
  uint32_t cp = c0 & static_cast<unsigned char>(0x7F >> len);
  size_t j = i + 1;
  for (; j < i + static_cast<size_t>(len) && j < s.size(); ++j) {
    unsigned char cc = static_cast<unsigned char>(s[j]);
    if ((cc & 0xC0) != 0x80) break;
    cp = (cp << 6) | (cc & 0x3F);
  }
  if (j != i + static_cast<size_t>(len)) {
    ++i;
    return 0xFFFD;
  }
  i = j;
  return cp;
}

/// Unicode punctuation/space ranges that split tokens. Codepoints outside
/// these ranges (accented letters, CJK ideographs, ...) are word characters.
inline bool is_separator_codepoint(uint32_t cp) {
  return cp == 0xFFFD || cp == 0x00A0 || (cp >= 0x00A1 && cp <= 0x00BF) || cp == 0x00D7 ||
         cp == 0x00F7 || (cp >= 0x2000 && cp <= 0x206F) || (cp >= 0x2E00 && cp <= 0x2E7F) ||
         (cp >= 0x3000 && cp <= 0x303F) || (cp >= 0xFE30 && cp <= 0xFE4F) ||
         (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
         (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65);
}

}  // namespace detail

/// Lowercased terms split on non-alphanumeric boundaries. ASCII is lowercased
/// and classified with isalnum; multi-byte UTF-8 codepoints split on the
/// common Unicode punctuation blocks and otherwise pass through unchanged
/// (no Unicode case folding). Deterministic for a given input.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      if (std::isalnum(c)) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
      ++i;
      continue;
    }
    size_t start = i;
    uint32_t cp = detail::decode_utf8(text, i);
    if (detail::is_separator_codepoint(cp)) {
      flush();
    } else {
      cur.append(text.substr(start, i - start));
    }
  }
  flush();
  return out;
}

/// Immutable after ingestion; safe for concurrent readers.
class Corpus {
 public:
  void add(Document d) {
    if (trim_view(d.doc_id).empty()) throw ValidationError("document id must be non-empty");
    if (trim_view(d.contents).empty())
      throw ValidationError("document '" + d.doc_id + "' has empty contents");
    auto [it, inserted] = by_id_.emplace(d.doc_id, docs_.size());
    if (!inserted) throw IntegrityError("duplicate document id: " + d.doc_id);
    docs_.push_back(std::move(d));
  }

  size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& at(size_t i) const { return docs_.at(i); }
  const std::vector<Document>& docs() const { return docs_; }

  const Document* find(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    return it == by_id_.end() ? nullptr : &docs_[it->second];
  }

  bool contains(const std::string& doc_id) const { return by_id_.count(doc_id) != 0; }

  int ordinal(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    if (it == by_id_.end()) throw IntegrityError("unknown document id: " + doc_id);
    return static_cast<int>(it->second);
  }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, size_t> by_id_;
};

enum class CorpusFormat { Jsonl };

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, const std::filesystem::path& path,
                                       size_t line_no) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) {
    throw IngestError(path.string() + ": line " + std::to_string(line_no) + ": malformed JSON");
  }
  if (!j.is_object()) {
    throw IngestError(path.string() + ": line " + std::to_string(line_no) + ": expected an object");
  }
  return j;
}

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  const std::filesystem::path& path, size_t line_no) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw IngestError(path.string() + ": line " + std::to_string(line_no) +
                      ": missing or non-string field \"" + key + "\"");
  }
  return it->get<std::string>();
}

}  // namespace detail

/// Loads a JSONL corpus: one {"id", "title", "contents"} object per line.
/// Document order follows file order. Blank lines are skipped.
inline Corpus ingest_corpus(const std::filesystem::path& path,
                            CorpusFormat format = CorpusFormat::Jsonl) {
  (void)format;  // jsonl is the only supported format
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open corpus file: " + path.string());
  Corpus corpus;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    nlohmann::json j = detail::parse_jsonl_line(line, path, line_no);
    Document d;
    d.doc_id = detail::require_string(j, "id", path, line_no);
    d.title = detail::require_string(j, "title", path, line_no);
    d.contents = detail::require_string(j, "contents", path, line_no);
    try {
      corpus.add(std::move(d));
    } catch (const ValidationError& e) {
      throw IngestError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

/// Loads a JSONL dataset: {"id", "question", "golden_answers"} per line.
/// "id" is optional; missing ids become "sample_<line>".
inline std::vector<QASample> ingest_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open dataset file: " + path.string());
  std::vector<QASample> samples;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    nlohmann::json j = detail::parse_jsonl_line(line, path, line_no);
    QASample s;
    if (j.contains("id") && j["id"].is_string()) {
      s.sample_id = j["id"].get<std::string>();
    } else {
      s.sample_id = "sample_" + std::to_string(line_no);
    }
    s.question = detail::require_string(j, "question", path, line_no);
    auto it = j.find("golden_answers");
    if (it == j.end() || !it->is_array()) {
      throw IngestError(path.string() + ": line " + std::to_string(line_no) +
                        ": missing or non-array field \"golden_answers\"");
    }
    for (const auto& g : *it) {
      if (!g.is_string())
        throw IngestError(path.string() + ": line " + std::to_string(line_no) +
                          ": golden_answers entries must be strings");
      s.golden_answers.push_back(g.get<std::string>());
    }
    if (s.golden_answers.empty()) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) +
                            ": sample \"" + s.sample_id + "\" has empty golden_answers");
    }
    for (const auto& g : s.golden_answers) {
      if (trim_view(g).empty()) {
        throw ValidationError(path.string() + ": line " + std::to_string(line_no) +
                              ": sample \"" + s.sample_id + "\" has an empty gold answer");
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

inline std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const Document& d : corpus.docs()) {
    nlohmann::json j{{"id", d.doc_id}, {"title", d.title}, {"contents", d.contents}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace arag
