#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "arag/errors.hpp"
#include "arag/util.hpp"

namespace arag {

/// Model slot a call is billed against. Each role maps to a configured
/// endpoint/model; uniform setups point every role at the same model.
enum class Role { Small, Large, Reasoner, Judge };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Small: return "SMALL";
    case Role::Large: return "LARGE";
    case Role::Reasoner: return "REASONER";
    case Role::Judge: return "JUDGE";
  }
  return "SMALL";
}

inline std::optional<Role> role_from_name(std::string_view s) {
  if (iequals(s, "SMALL")) return Role::Small;
  if (iequals(s, "LARGE")) return Role::Large;
  if (iequals(s, "REASONER") || iequals(s, "REASONING")) return Role::Reasoner;
  if (iequals(s, "JUDGE")) return Role::Judge;
  return std::nullopt;
}

/// Per-run accounting of provider calls and token usage, by role.
/// Addition is associative and commutative, so per-iteration deltas can be
/// folded in any order.
struct CostLedger {
  std::map<Role, int> calls_by_role;
  long long tokens_in = 0;
  long long tokens_out = 0;

  void account(Role role, long long in_tokens, long long out_tokens) {
    if (in_tokens < 0 || out_tokens < 0) throw ValidationError("token counts must be >= 0");
    calls_by_role[role] += 1;
    tokens_in += in_tokens;
    tokens_out += out_tokens;
  }

  int total_calls() const {
    int n = 0;
    for (const auto& [role, c] : calls_by_role) n += c;
    return n;
  }

  long long total_tokens() const { return tokens_in + tokens_out; }

  int calls(Role role) const {
    auto it = calls_by_role.find(role);
    return it == calls_by_role.end() ? 0 : it->second;
  }

  CostLedger& operator+=(const CostLedger& other) {
    for (const auto& [role, c] : other.calls_by_role) calls_by_role[role] += c;
    tokens_in += other.tokens_in;
    tokens_out += other.tokens_out;
    return *this;
  }

  friend CostLedger operator+(CostLedger a, const CostLedger& b) {
    a += b;
    return a;
  }

  friend bool operator==(const CostLedger& a, const CostLedger& b) {
    return a.calls_by_role == b.calls_by_role && a.tokens_in == b.tokens_in &&
           a.tokens_out == b.tokens_out;
  }

  nlohmann::json to_json() const {
    nlohmann::json roles = nlohmann::json::object();
    for (const auto& [role, c] : calls_by_role) {
      if (c != 0) roles[role_name(role)] = c;
    }
    return {{"calls_by_role", roles},
            {"total_calls", total_calls()},
            {"tokens_in", tokens_in},
            {"tokens_out", tokens_out}};
  }

  static CostLedger from_json(const nlohmann::json& j) {
    CostLedger led;
    for (const auto& [key, val] : j.at("calls_by_role").items()) {
      auto role = role_from_name(key);
      if (!role) throw IntegrityError("unknown role in ledger: " + key);
      led.calls_by_role[*role] = val.get<int>();
    }
    led.tokens_in = j.at("tokens_in").get<long long>();
    led.tokens_out = j.at("tokens_out").get<long long>();
    return led;
  }
};

/// Records one provider call in the ledger.
inline void account_call(CostLedger& ledger, Role role, long long tokens_in,
                         long long tokens_out) {
  ledger.account(role, tokens_in, tokens_out);
}

}  // namespace arag
