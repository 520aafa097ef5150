#pragma once

#include <cctype>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arag/errors.hpp"
#include "arag/evidence.hpp"
#include "arag/ledger.hpp"
#include "arag/prompts.hpp"
#include "arag/util.hpp"

namespace arag {

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

struct ChatResult {
  std::string text;
  long long tokens_in = 0;
  long long tokens_out = 0;
};

/// Chat completion boundary. Implementations must be safe for concurrent
/// calls; every call reports non-negative token counts.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ChatResult complete(Role role, std::string_view prompt, int max_new_tokens) = 0;
};

/// One scripted-provider rule. A call matches when the role agrees (or the
/// rule is role-agnostic) and `match` is a substring of the prompt (empty
/// matches anything). `uses` limits how many calls a rule may serve (-1 =
/// unlimited). First matching rule wins, so put specific rules first.
struct ScriptRule {
  std::optional<Role> role;
  std::string match;
  std::string response;
  int uses = -1;
};

/// Deterministic test double for every agent. Token counts are
/// whitespace-token counts of prompt and response. An unmatched call throws
/// ScriptError: never a silent fallthrough.
class ScriptedProvider final : public ChatProvider {
 public:
  struct Call {
    Role role;
    std::string prompt;
    std::string response;
  };

  explicit ScriptedProvider(std::vector<ScriptRule> rules) : rules_(std::move(rules)) {}

  ChatResult complete(Role role, std::string_view prompt, int max_new_tokens) override {
    (void)max_new_tokens;
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& rule : rules_) {
      if (rule.uses == 0) continue;
      if (rule.role && *rule.role != role) continue;
      if (!rule.match.empty() && prompt.find(rule.match) == std::string_view::npos) continue;
      if (rule.uses > 0) --rule.uses;
      calls_.push_back({role, std::string(prompt), rule.response});
      return {rule.response, count_ws_tokens(prompt), count_ws_tokens(rule.response)};
    }
    std::string head(prompt.substr(0, 160));
    throw ScriptError(std::string("scripted provider: no rule matches ") + role_name(role) +
                      " call starting with: " + head);
  }

  int call_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return static_cast<int>(calls_.size());
  }

  std::vector<Call> calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_;
  }

  static std::vector<ScriptRule> rules_from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) throw ConfigError("provider script must be a JSON array of rules");
    std::vector<ScriptRule> rules;
    for (const auto& j : arr) {
      ScriptRule r;
      if (j.contains("role")) {
        auto role = role_from_name(j.at("role").get<std::string>());
        if (!role) throw ConfigError("script rule has unknown role: " + j.at("role").dump());
        r.role = *role;
      }
      r.match = j.value("match", std::string());
      r.response = j.at("response").get<std::string>();
      r.uses = j.value("uses", -1);
      rules.push_back(std::move(r));
    }
    return rules;
  }

  static std::vector<ScriptRule> rules_from_file(const std::filesystem::path& path) {
    return rules_from_json(nlohmann::json::parse(read_file(path)));
  }

 private:
  mutable std::mutex mu_;
  std::vector<ScriptRule> rules_;
  std::vector<Call> calls_;
};

// ---------------------------------------------------------------------------
// Output grammars
// ---------------------------------------------------------------------------

enum class RouteLabel { Obvious, Small, Large, Reasoner };

inline const char* route_label_name(RouteLabel l) {
  switch (l) {
    case RouteLabel::Obvious: return "OBVIOUS";
    case RouteLabel::Small: return "SMALL";
    case RouteLabel::Large: return "LARGE";
    case RouteLabel::Reasoner: return "REASONER";
  }
  return "LARGE";
}

inline std::optional<RouteLabel> route_label_from_name(std::string_view s) {
  if (iequals(s, "OBVIOUS")) return RouteLabel::Obvious;
  if (iequals(s, "SMALL")) return RouteLabel::Small;
  if (iequals(s, "LARGE")) return RouteLabel::Large;
  if (iequals(s, "REASONER") || iequals(s, "REASONING")) return RouteLabel::Reasoner;
  return std::nullopt;
}

/// Fixed label -> generator mapping. OBVIOUS answers come straight from the
/// large model's parametric knowledge.
inline Role generator_role_for(RouteLabel label) {
  switch (label) {
    case RouteLabel::Obvious: return Role::Large;
    case RouteLabel::Small: return Role::Small;
    case RouteLabel::Large: return Role::Large;
    case RouteLabel::Reasoner: return Role::Reasoner;
  }
  return Role::Large;
}

struct RouteDecision {
  RouteLabel label = RouteLabel::Large;
  Role generator_role = Role::Large;

  nlohmann::json to_json() const {
    return {{"label", route_label_name(label)}, {"generator_role", role_name(generator_role)}};
  }

  static RouteDecision from_json(const nlohmann::json& j) {
    auto label = route_label_from_name(j.at("label").get<std::string>());
    if (!label) throw IntegrityError("unknown route label: " + j.at("label").dump());
    return {*label, generator_role_for(*label)};
  }
};

struct FilterVerdict {
  std::set<std::string> removed_ids;  // actual doc ids, always a subset of the batch
  int batch_number = 1;
  std::vector<std::string> unknown_ids;  // tags the model emitted that match nothing

  nlohmann::json to_json() const {
    return {{"batch_number", batch_number},
            {"removed_ids", std::vector<std::string>(removed_ids.begin(), removed_ids.end())},
            {"unknown_ids", unknown_ids}};
  }

  static FilterVerdict from_json(const nlohmann::json& j) {
    FilterVerdict v;
    v.batch_number = j.at("batch_number").get<int>();
    for (const auto& id : j.at("removed_ids")) v.removed_ids.insert(id.get<std::string>());
    v.unknown_ids = j.value("unknown_ids", std::vector<std::string>{});
    return v;
  }
};

/// Parsed Structured Evidence Assessment block. raw_text preserves the model
/// output verbatim for auditing; all other fields are cleaned of markdown
/// emphasis markers.
struct SEAReport {
  std::string main_goal;
  std::vector<std::string> required_findings;
  std::vector<std::string> confirmed_findings;
  std::vector<std::string> remaining_gaps;
  std::string remaining_gaps_text;  // raw section content ("None" parses to an empty list)
  std::string conclusion;
  bool sufficient = false;
  std::string raw_text;

  /// Summary handed to the query refiner: confirmed findings, open gaps, and
  /// the analyst's conclusion.
  std::string analysis_summary() const {
    std::string out = "Confirmed Findings: ";
    out += confirmed_findings.empty() ? std::string("None") : join(confirmed_findings, "; ");
    out += "\nRemaining Gaps: ";
    out += remaining_gaps.empty() ? std::string("None") : join(remaining_gaps, "; ");
    out += "\nConclusion: ";
    out += conclusion;
    return out;
  }

  nlohmann::json to_json() const {
    return {{"main_goal", main_goal},
            {"required_findings", required_findings},
            {"confirmed_findings", confirmed_findings},
            {"remaining_gaps", remaining_gaps},
            {"remaining_gaps_text", remaining_gaps_text},
            {"conclusion", conclusion},
            {"sufficient", sufficient},
            {"raw_text", raw_text}};
  }

  static SEAReport from_json(const nlohmann::json& j) {
    SEAReport r;
    r.main_goal = j.at("main_goal").get<std::string>();
    r.required_findings = j.at("required_findings").get<std::vector<std::string>>();
    r.confirmed_findings = j.at("confirmed_findings").get<std::vector<std::string>>();
    r.remaining_gaps = j.at("remaining_gaps").get<std::vector<std::string>>();
    r.remaining_gaps_text = j.value("remaining_gaps_text", std::string());
    r.conclusion = j.at("conclusion").get<std::string>();
    r.sufficient = j.at("sufficient").get<bool>();
    r.raw_text = j.at("raw_text").get<std::string>();
    return r;
  }
};

namespace detail {

inline std::string strip_emphasis(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c != '*') out.push_back(c);
  }
  return out;
}

inline size_t ci_find(std::string_view haystack, std::string_view needle) {
  std::string h = to_lower_ascii(haystack);
  std::string n = to_lower_ascii(needle);
  return h.find(n);
}

/// First whitespace token of `s`, with surrounding non-alphanumerics removed.
inline std::string first_word_token(std::string_view s) {
  std::vector<std::string> toks = split_whitespace(s);
  if (toks.empty()) return {};
  std::string t = toks.front();
  size_t b = 0, e = t.size();
  while (b < e && !std::isalnum(static_cast<unsigned char>(t[b]))) ++b;
  while (e > b && !std::isalnum(static_cast<unsigned char>(t[e - 1]))) --e;
  return t.substr(b, e - b);
}

/// True if `word` occurs in `text` delimited by non-alphanumerics (ci).
inline bool contains_word_ci(std::string_view text, std::string_view word) {
  std::string h = to_lower_ascii(text);
  std::string n = to_lower_ascii(word);
  size_t pos = 0;
  while ((pos = h.find(n, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(h[pos - 1]));
    size_t end = pos + n.size();
    bool right_ok = end >= h.size() || !std::isalnum(static_cast<unsigned char>(h[end]));
    if (left_ok && right_ok) return true;
    pos += 1;
  }
  return false;
}

/// Strips list decorations used in the agent grammars: leading whitespace,
/// one bullet dash, and a "N." enumeration prefix.
inline std::string_view strip_list_decoration(std::string_view s) {
  s = trim_view(s);
  if (!s.empty() && s.front() == '-') s = trim_view(s.substr(1));
  size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && s[i] == '.') {
    std::string_view rest = trim_view(s.substr(i + 1));
    if (!rest.empty()) s = rest;
  }
  return s;
}

}  // namespace detail

/// Parses the router's "Selected Label:" grammar (SMALL / LARGE / REASONER,
/// plus OBVIOUS for configurations that enable the shortcut). The label may
/// follow the marker on the same or the next line; a bare label with no
/// marker is accepted too.
inline RouteLabel parse_route_label(std::string_view raw) {
  std::string cleaned = detail::strip_emphasis(raw);
  std::string_view region = cleaned;
  size_t pos = detail::ci_find(cleaned, "selected label");
  if (pos != std::string_view::npos) {
    region = std::string_view(cleaned).substr(pos + std::string("selected label").size());
    size_t colon = region.find(':');
    if (colon != std::string_view::npos) region = region.substr(colon + 1);
  }
  std::string token = detail::first_word_token(region);
  if (auto label = route_label_from_name(token)) return *label;
  throw AgentFormatError("router output has no recognizable label", std::string(raw));
}

/// Parses hyphen-prefixed query lines following a marker such as
/// "Optimized Queries:" or "Improved Queries:". Blank lines are skipped,
/// anything past `max_queries` is dropped, and a missing marker falls back to
/// scanning the whole text for a hyphen list.
inline std::vector<std::string> parse_query_list(std::string_view raw, std::string_view marker,
                                                 int max_queries = 4) {
  std::string cleaned = detail::strip_emphasis(raw);
  std::vector<std::string> lines = split_lines(cleaned);
  size_t start = 0;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (detail::ci_find(lines[i], marker) != std::string::npos &&
        lines[i].find(':') != std::string::npos) {
      start = i + 1;
      break;
    }
  }
  std::vector<std::string> queries;
  for (size_t i = start; i < lines.size(); ++i) {
    std::string_view t = trim_view(lines[i]);
    if (t.empty()) continue;
    if (t.front() == '-') {
      std::string q = trim(t.substr(1));
      if (!q.empty()) queries.push_back(std::move(q));
      continue;
    }
    if (!queries.empty()) break;  // trailing prose ends the list
  }
  if (queries.empty())
    throw AgentFormatError("no parseable query lines after \"" + std::string(marker) + "\"",
                           std::string(raw));
  if (max_queries >= 0 && queries.size() > static_cast<size_t>(max_queries))
    queries.resize(static_cast<size_t>(max_queries));
  return queries;
}

/// Parses the filter grammar: "[doc_X], [doc_Y] or None" after the
/// "Unhelpful Document IDs:" marker. Batch-local doc_N tags map to the actual
/// ids of `batch_doc_ids`; tags that match nothing are reported in
/// unknown_ids rather than failing the call.
inline FilterVerdict parse_filter_verdict(std::string_view raw,
                                          const std::vector<std::string>& batch_doc_ids,
                                          int batch_number) {
  std::string cleaned = detail::strip_emphasis(raw);
  std::string_view region = cleaned;
  size_t pos = detail::ci_find(cleaned, "unhelpful document ids");
  if (pos != std::string_view::npos) {
    region = std::string_view(cleaned).substr(pos + std::string("unhelpful document ids").size());
    size_t colon = region.find(':');
    if (colon != std::string_view::npos) region = region.substr(colon + 1);
  }

  std::vector<std::string> tags;
  for (size_t i = 0; i < region.size();) {
    if (region[i] == '[') {
      size_t close = region.find(']', i + 1);
      if (close == std::string_view::npos) break;
      std::string inner = trim(region.substr(i + 1, close - i - 1));
      if (!inner.empty()) tags.push_back(std::move(inner));
      i = close + 1;
    } else {
      ++i;
    }
  }

  FilterVerdict verdict;
  verdict.batch_number = batch_number;
  if (tags.empty()) {
    if (detail::contains_word_ci(region, "none")) return verdict;
    throw AgentFormatError("filter output has neither document ids nor \"None\"",
                           std::string(raw));
  }
  for (const std::string& tag : tags) {
    // Batch-local tag: doc_<n> (case-insensitive, underscore optional).
    std::string low = to_lower_ascii(tag);
    bool mapped = false;
    if (low.rfind("doc", 0) == 0) {
      size_t i = 3;
      if (i < low.size() && (low[i] == '_' || low[i] == ' ')) ++i;
      if (i < low.size() && low.size() - i <= 6 &&
          std::all_of(low.begin() + static_cast<long>(i), low.end(),
                      [](unsigned char c) { return std::isdigit(c); })) {
        int n = std::stoi(low.substr(i));
        if (n >= 1 && n <= static_cast<int>(batch_doc_ids.size())) {
          verdict.removed_ids.insert(batch_doc_ids[static_cast<size_t>(n - 1)]);
          mapped = true;
        }
      }
    }
    if (!mapped) {
      // The model may echo a real document id instead of the batch tag.
      auto it = std::find(batch_doc_ids.begin(), batch_doc_ids.end(), tag);
      if (it != batch_doc_ids.end()) {
        verdict.removed_ids.insert(*it);
        mapped = true;
      }
    }
    if (!mapped) verdict.unknown_ids.push_back(tag);
  }
  return verdict;
}

/// Parses the Structured Evidence Assessment block grammar: Mission
/// Deconstruction / Intelligence Synthesis & Analysis / Final Assessment
/// sections with their bold headings. The verdict is "sufficient" only when
/// the word after "Sufficient:" is Yes AND no remaining gap was listed, which
/// is exactly how the grammar defines the word.
inline SEAReport parse_sea_report(std::string_view raw) {
  SEAReport report;
  report.raw_text = std::string(raw);

  enum class Section { None, MainGoal, Required, Confirmed, Gaps, Conclusion, Sufficient };
  struct Heading {
    const char* text;
    Section section;
  };
  // Longest-prefix headings first where one is a prefix of another.
  static const Heading kHeadings[] = {
      {"main goal", Section::MainGoal},
      {"required findings", Section::Required},
      {"confirmed findings", Section::Confirmed},
      {"remaining gaps", Section::Gaps},
      {"conclusion", Section::Conclusion},
      {"sufficient", Section::Sufficient},
      {"mission deconstruction", Section::None},
      {"intelligence synthesis & analysis", Section::None},
      {"intelligence synthesis and analysis", Section::None},
      {"final assessment", Section::None},
  };

  std::map<Section, std::string> content;
  std::set<Section> seen;
  Section current = Section::None;

  for (const std::string& line : split_lines(detail::strip_emphasis(raw))) {
    std::string_view stripped = detail::strip_list_decoration(line);
    std::string low = to_lower_ascii(stripped);
    bool is_heading = false;
    for (const Heading& h : kHeadings) {
      std::string key = h.text;
      if (low.rfind(key, 0) != 0) continue;
      size_t i = key.size();
      while (i < low.size() && std::isspace(static_cast<unsigned char>(low[i]))) ++i;
      if (i >= low.size() || low[i] != ':') continue;
      current = h.section;
      seen.insert(current);
      std::string after(trim_view(stripped.substr(i + 1)));
      if (current != Section::None && !after.empty()) {
        std::string& dst = content[current];
        if (!dst.empty()) dst += "\n";
        dst += after;
      }
      is_heading = true;
      break;
    }
    if (is_heading) continue;
    if (current == Section::None) continue;
    std::string_view t = trim_view(line);
    if (t.empty()) continue;
    std::string& dst = content[current];
    if (!dst.empty()) dst += "\n";
    dst += std::string(t);
  }

  auto split_items = [](const std::string& text) {
    std::vector<std::string> items;
    bool has_bullets = false;
    for (const std::string& ln : split_lines(text)) {
      std::string_view t = trim_view(ln);
      if (!t.empty() && t.front() == '-') {
        has_bullets = true;
        std::string item = trim(t.substr(1));
        if (!item.empty()) items.push_back(std::move(item));
      }
    }
    if (has_bullets) return items;
    size_t pos = 0;
    while (pos <= text.size()) {
      size_t semi = text.find(';', pos);
      std::string piece = semi == std::string::npos ? text.substr(pos)
                                                    : text.substr(pos, semi - pos);
      std::string item = trim(piece);
      if (!item.empty()) items.push_back(std::move(item));
      if (semi == std::string::npos) break;
      pos = semi + 1;
    }
    return items;
  };

  auto is_none = [](const std::string& text) {
    std::string t;
    for (char c : text) {
      if (std::isalnum(static_cast<unsigned char>(c))) t.push_back(c);
    }
    return iequals(t, "none");
  };

  report.main_goal = content.count(Section::MainGoal) ? trim(content[Section::MainGoal]) : "";
  report.required_findings = split_items(content[Section::Required]);
  report.confirmed_findings = split_items(content[Section::Confirmed]);
  report.conclusion = content.count(Section::Conclusion) ? trim(content[Section::Conclusion]) : "";
  report.remaining_gaps_text = trim(content[Section::Gaps]);
  if (!report.remaining_gaps_text.empty() && !is_none(report.remaining_gaps_text)) {
    report.remaining_gaps = split_items(report.remaining_gaps_text);
  }

  if (!seen.count(Section::Sufficient))
    throw AgentFormatError("assessment output lacks a \"Sufficient:\" line", std::string(raw));
  std::string word = detail::first_word_token(content[Section::Sufficient]);
  if (iequals(word, "yes")) {
    report.sufficient = report.remaining_gaps.empty();
  } else if (iequals(word, "no")) {
    report.sufficient = false;
  } else {
    throw AgentFormatError("assessment verdict is neither Yes nor No", std::string(raw));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Agent operations
// ---------------------------------------------------------------------------

struct AgentOptions {
  int max_new_tokens = 1024;
  /// Whole-prompt budget for generation, measured in whitespace tokens as a
  /// provider-agnostic proxy. Lowest-ranked evidence is dropped first.
  long long max_input_tokens = 8000;
};

struct FilterCandidate {
  std::string doc_id;
  std::string title;
  std::string text;
};

namespace detail {

inline ChatResult complete_accounted(ChatProvider& chat, Role role, const std::string& prompt,
                                     int max_new_tokens, CostLedger& ledger) {
  ChatResult r = chat.complete(role, prompt, max_new_tokens);
  ledger.account(role, r.tokens_in, r.tokens_out);
  return r;
}

/// One re-ask on AgentFormatError, then the error propagates to the caller's
/// role-specific fallback.
template <typename ParseFn>
auto ask_with_retry(ChatProvider& chat, Role role, const std::string& prompt, int max_new_tokens,
                    CostLedger& ledger, ParseFn parse) {
  ChatResult first = complete_accounted(chat, role, prompt, max_new_tokens, ledger);
  try {
    return parse(first.text);
  } catch (const AgentFormatError&) {
    ChatResult second = complete_accounted(chat, role, prompt, max_new_tokens, ledger);
    return parse(second.text);
  }
}

inline std::string casefold_key(std::string_view s) { return to_lower_ascii(trim_view(s)); }

/// Drops a leading checklist label like "C: " from a gap item.
inline std::string strip_finding_label(const std::string& s) {
  if (s.size() >= 2 && std::isalpha(static_cast<unsigned char>(s[0])) && s[1] == ':') {
    return trim(std::string_view(s).substr(2));
  }
  return s;
}

}  // namespace detail

/// Classifies the question and pins the generator model for the final step.
/// Unparseable output is re-asked once, then fails the sample.
inline RouteDecision route_query(ChatProvider& chat, const PromptRegistry& prompts,
                                 const std::string& question, CostLedger& ledger,
                                 Role role = Role::Small, const AgentOptions& opts = {}) {
  if (trim_view(question).empty()) throw ValidationError("route_query: question is empty");
  std::string prompt = prompts.get("router").render({{"user_query", question}});
  RouteLabel label = detail::ask_with_retry(chat, role, prompt, opts.max_new_tokens, ledger,
                                            [](const std::string& text) {
                                              return parse_route_label(text);
                                            });
  return {label, generator_role_for(label)};
}

/// Splits the question into 1-4 keyword-rich sub-queries. After a failed
/// retry the original question becomes the single sub-query.
inline std::vector<std::string> decompose_query(ChatProvider& chat, const PromptRegistry& prompts,
                                                const std::string& question, CostLedger& ledger,
                                                Role role = Role::Small,
                                                const AgentOptions& opts = {}) {
  if (trim_view(question).empty()) throw ValidationError("decompose_query: question is empty");
  std::string prompt = prompts.get("decompose").render({{"user_query", question}});
  try {
    return detail::ask_with_retry(chat, role, prompt, opts.max_new_tokens, ledger,
                                  [](const std::string& text) {
                                    return parse_query_list(text, "optimized queries");
                                  });
  } catch (const AgentFormatError&) {
    return {question};
  }
}

inline std::string render_filter_batch(const std::vector<FilterCandidate>& batch) {
  std::string out;
  for (size_t i = 0; i < batch.size(); ++i) {
    if (i) out += "\n";
    out += "[doc_" + std::to_string(i + 1) + "] ";
    if (!batch[i].title.empty()) out += batch[i].title + ": ";
    out += batch[i].text;
  }
  return out;
}

/// Asks the filter which batch documents are irrelevant to the original
/// question. After a failed retry every document is kept (the grammar's own
/// inclusive bias).
inline FilterVerdict filter_evidence(ChatProvider& chat, const PromptRegistry& prompts,
                                     const std::string& question,
                                     const std::vector<FilterCandidate>& batch, int batch_number,
                                     CostLedger& ledger, Role role = Role::Large,
                                     const AgentOptions& opts = {}) {
  if (batch.empty()) throw ValidationError("filter_evidence: batch is empty");
  std::vector<std::string> batch_ids;
  batch_ids.reserve(batch.size());
  for (const auto& c : batch) batch_ids.push_back(c.doc_id);
  std::string prompt =
      prompts.get("filter").render({{"original_query", question},
                                    {"batch_number", std::to_string(batch_number)},
                                    {"numbered_candidates_text_for_prompt", render_filter_batch(batch)}});
  try {
    return detail::ask_with_retry(chat, role, prompt, opts.max_new_tokens, ledger,
                                  [&](const std::string& text) {
                                    return parse_filter_verdict(text, batch_ids, batch_number);
                                  });
  } catch (const AgentFormatError&) {
    FilterVerdict keep_all;
    keep_all.batch_number = batch_number;
    return keep_all;
  }
}

/// Runs the Structured Evidence Assessment over the full aggregated evidence.
/// After a failed retry the evidence is treated as insufficient so the loop
/// keeps searching.
inline SEAReport assess_sufficiency(ChatProvider& chat, const PromptRegistry& prompts,
                                    const std::string& question, const EvidenceSet& evidence,
                                    CostLedger& ledger, Role role = Role::Small,
                                    const AgentOptions& opts = {}) {
  std::string block = render_numbered_evidence(evidence.items());
  if (block.empty()) block = "(no evidence collected)";
  std::string prompt = prompts.get("sea").render(
      {{"original_query", question}, {"combined_evidence", block}});
  std::string last_raw;
  try {
    return detail::ask_with_retry(chat, role, prompt, opts.max_new_tokens, ledger,
                                  [&](const std::string& text) {
                                    last_raw = text;
                                    return parse_sea_report(text);
                                  });
  } catch (const AgentFormatError&) {
    SEAReport fallback;
    fallback.sufficient = false;
    fallback.raw_text = last_raw;
    fallback.conclusion = "(assessment output unparseable; treated as insufficient)";
    return fallback;
  }
}

/// Generates targeted follow-up queries for the gaps the assessment found.
/// Queries textually identical (trimmed, casefolded) to any previously issued
/// query are dropped; when everything is a duplicate or unparseable, the gap
/// texts themselves become the queries.
inline std::vector<std::string> refine_queries(ChatProvider& chat, const PromptRegistry& prompts,
                                               const std::string& question, const SEAReport& sea,
                                               const std::vector<std::string>& previous_queries,
                                               CostLedger& ledger, Role role = Role::Large,
                                               const AgentOptions& opts = {}) {
  if (sea.sufficient)
    throw ValidationError("refine_queries: evidence was already assessed as sufficient");

  auto gap_fallback = [&]() -> std::vector<std::string> {
    std::vector<std::string> out;
    for (const auto& gap : sea.remaining_gaps) {
      out.push_back(detail::strip_finding_label(gap));
      if (out.size() == 4) break;
    }
    if (out.empty() && !trim_view(sea.remaining_gaps_text).empty())
      out.push_back(trim(sea.remaining_gaps_text));
    if (out.empty()) out.push_back(question);
    return out;
  };

  std::string previous_block;
  for (const auto& q : previous_queries) {
    if (!previous_block.empty()) previous_block += "\n";
    previous_block += "- " + q;
  }
  std::string prompt = prompts.get("refine").render({{"original_query", question},
                                                     {"analysis_summary", sea.analysis_summary()},
                                                     {"combined_previous_queries", previous_block}});
  std::vector<std::string> parsed;
  try {
    parsed = detail::ask_with_retry(chat, role, prompt, opts.max_new_tokens, ledger,
                                    [](const std::string& text) {
                                      return parse_query_list(text, "improved queries");
                                    });
  } catch (const AgentFormatError&) {
    return gap_fallback();
  }

  std::set<std::string> seen;
  for (const auto& q : previous_queries) seen.insert(detail::casefold_key(q));
  std::vector<std::string> fresh;
  for (const auto& q : parsed) {
    if (seen.insert(detail::casefold_key(q)).second) fresh.push_back(q);
  }
  if (fresh.empty()) return gap_fallback();
  return fresh;
}

struct GenerationResult {
  std::string answer;
  size_t evidence_used = 0;  // leading final_evidence items present in the prompt
};

/// Renders the evidence-only generation prompt and returns the raw model
/// answer. The prompt is trimmed to the input budget by dropping the
/// lowest-ranked evidence items first.
inline GenerationResult generate_answer(ChatProvider& chat, const PromptRegistry& prompts,
                                        Role role, const std::string& question,
                                        const EvidenceSet& evidence, CostLedger& ledger,
                                        const AgentOptions& opts = {}) {
  if (trim_view(question).empty()) throw ValidationError("generate_answer: question is empty");
  const PromptTemplate& tmpl = prompts.get("generate");
  size_t used = evidence.items().size();
  std::string prompt;
  for (;;) {
    prompt = tmpl.render({{"combined_evidence", render_numbered_evidence(evidence.items(), used)},
                          {"original_query", question}});
    if (count_ws_tokens(prompt) <= opts.max_input_tokens || used == 0) break;
    --used;
  }
  ChatResult r = detail::complete_accounted(chat, role, prompt, opts.max_new_tokens, ledger);
  return {r.text, used};
}

}  // namespace arag
