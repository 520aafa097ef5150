#pragma once

#include <cctype>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "arag/errors.hpp"
#include "arag/util.hpp"

namespace arag {

namespace detail {

inline bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
inline bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

/// Matches "{identifier}" starting at `pos` (which must point at '{').
/// Returns the identifier, or empty if this brace is not a placeholder.
inline std::string match_placeholder(std::string_view body, size_t pos, size_t* end) {
  size_t i = pos + 1;
  if (i >= body.size() || !is_ident_start(body[i])) return {};
  size_t start = i;
  while (i < body.size() && is_ident_char(body[i])) ++i;
  if (i >= body.size() || body[i] != '}') return {};
  *end = i + 1;
  return std::string(body.substr(start, i - start));
}

}  // namespace detail

/// A prompt body with named `{placeholder}` slots. "{{" and "}}" escape
/// literal braces; any other brace sequence (JSON blocks in the bodies) is
/// passed through untouched.
struct PromptTemplate {
  std::string name;
  std::string body;
  std::set<std::string> required_placeholders;

  static PromptTemplate from_body(std::string tmpl_name, std::string tmpl_body) {
    PromptTemplate t;
    t.name = std::move(tmpl_name);
    t.body = std::move(tmpl_body);
    std::string_view b = t.body;
    for (size_t i = 0; i < b.size();) {
      if (b[i] == '{') {
        if (i + 1 < b.size() && b[i + 1] == '{') {
          i += 2;
          continue;
        }
        size_t end = 0;
        std::string ident = detail::match_placeholder(b, i, &end);
        if (!ident.empty()) {
          t.required_placeholders.insert(ident);
          i = end;
          continue;
        }
      }
      ++i;
    }
    return t;
  }

  /// Substitutes every placeholder. Fails if any required placeholder is
  /// unbound; extra bindings are ignored.
  std::string render(const std::map<std::string, std::string>& bindings) const {
    for (const auto& req : required_placeholders) {
      if (!bindings.count(req))
        throw ValidationError("template \"" + name + "\": unbound placeholder {" + req + "}");
    }
    std::string out;
    out.reserve(body.size());
    std::string_view b = body;
    for (size_t i = 0; i < b.size();) {
      char c = b[i];
      if (c == '{' && i + 1 < b.size() && b[i + 1] == '{') {
        out.push_back('{');
        i += 2;
        continue;
      }
      if (c == '}' && i + 1 < b.size() && b[i + 1] == '}') {
        out.push_back('}');
        i += 2;
        continue;
      }
      if (c == '{') {
        size_t end = 0;
        std::string ident = detail::match_placeholder(b, i, &end);
        if (!ident.empty()) {
          out += bindings.at(ident);
          i = end;
          continue;
        }
      }
      out.push_back(c);
      ++i;
    }
    return out;
  }
};

/// On-disk prompt registry: one template per *.txt file, keyed by file stem.
class PromptRegistry {
 public:
  static PromptRegistry load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
      throw ConfigError("prompt directory not found: " + dir.string());
    PromptRegistry reg;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
      std::string name = entry.path().stem().string();
      reg.templates_.emplace(name, PromptTemplate::from_body(name, read_file(entry.path())));
    }
    if (reg.templates_.empty())
      throw ConfigError("prompt directory has no *.txt templates: " + dir.string());
    return reg;
  }

  bool has(const std::string& name) const { return templates_.count(name) != 0; }

  const PromptTemplate& get(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw ConfigError("unknown prompt template: " + name);
    return it->second;
  }

  void put(PromptTemplate t) { templates_[t.name] = std::move(t); }

  size_t size() const { return templates_.size(); }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace arag
