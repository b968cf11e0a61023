#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "decisionbench/trace_model.hpp"

namespace decisionbench {

// Declaration order is the fixed taxonomy order, which also serves as the
// tie-break wherever skills compete.
enum class SkillId {
  tool_schema_adherence,
  multi_turn_state_tracking,
  domain_policy_compliance,
  information_retrieval,
  multi_step_reasoning,
  numerical_computation,
  long_input_handling,
};

inline constexpr std::array kAllSkills{
    SkillId::tool_schema_adherence,  SkillId::multi_turn_state_tracking, SkillId::domain_policy_compliance,
    SkillId::information_retrieval,  SkillId::multi_step_reasoning,      SkillId::numerical_computation,
    SkillId::long_input_handling,
};

inline constexpr std::size_t kSkillCount = kAllSkills.size();

inline constexpr std::size_t skill_index(SkillId s) { return static_cast<std::size_t>(s); }

inline std::string_view to_string(SkillId s) {
  switch (s) {
    case SkillId::tool_schema_adherence: return "tool_schema_adherence";
    case SkillId::multi_turn_state_tracking: return "multi_turn_state_tracking";
    case SkillId::domain_policy_compliance: return "domain_policy_compliance";
    case SkillId::information_retrieval: return "information_retrieval";
    case SkillId::multi_step_reasoning: return "multi_step_reasoning";
    case SkillId::numerical_computation: return "numerical_computation";
    case SkillId::long_input_handling: return "long_input_handling";
  }
  return "?";
}

/// Hyphenated form used in card prose, e.g. "domain-policy-compliance".
inline std::string skill_slug(SkillId s) {
  std::string out(to_string(s));
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

inline std::optional<SkillId> parse_skill(std::string_view s) {
  for (auto k : kAllSkills)
    if (to_string(k) == s || skill_slug(k) == s) return k;
  return std::nullopt;
}

class StepTag {
 public:
  enum class Kind { skill, infra_delegation, none };

  static StepTag of(SkillId s) { return StepTag(Kind::skill, s); }
  static StepTag infra() { return StepTag(Kind::infra_delegation, SkillId::tool_schema_adherence); }
  static StepTag none() { return StepTag(Kind::none, SkillId::tool_schema_adherence); }

  Kind kind() const { return kind_; }
  bool is_skill() const { return kind_ == Kind::skill; }
  bool is_infra() const { return kind_ == Kind::infra_delegation; }
  std::optional<SkillId> skill() const { return is_skill() ? std::optional(skill_) : std::nullopt; }

  std::string str() const {
    switch (kind_) {
      case Kind::skill: return std::string(to_string(skill_));
      case Kind::infra_delegation: return "_infra_delegation";
      case Kind::none: return "none";
    }
    return "none";
  }

  bool operator==(const StepTag& o) const { return kind_ == o.kind_ && (kind_ != Kind::skill || skill_ == o.skill_); }

 private:
  StepTag(Kind k, SkillId s) : kind_(k), skill_(s) {}
  Kind kind_;
  SkillId skill_;
};

// ---------------------------------------------------------------------------
// Configuration

struct TaggerConfig {
  std::string version = "v2.0-2026-05-01";
  std::vector<std::string> numerical_tool_names{"calculator", "evaluate_expression", "eval_python",
                                                "python_eval", "math_eval",           "compute"};
  std::vector<std::string> retrieval_tool_substrings{
      "web_search",      "search",         "fetch_url",         "browse",      "find_user_id",
      "find_user",       "lookup",         "get_user_details",  "get_order",   "list_orders",
      "get_product",     "list_products",  "get_reservation",   "list_reservation",
      "search_direct_flight", "search_onestop_flight", "parse_pdf", "extract_table", "ocr",
      "read_document"};
  std::vector<std::string> policy_patterns{
      R"(\bagainst\s+(?:our\s+|the\s+)?policy\b)",
      R"(\bnot\s+permitted\b)",
      R"(\bI\s+cannot\b.{0,40}\bpolicy\b)",
      R"(\btransfer.{0,20}human\s+agent)",
      R"(\boutside\s+(?:my|our)\s+scope\b)",
      R"(\bplease\s+confirm\b)",
      R"(\bI\s+(?:will\s+)?need\s+(?:your\s+)?confirmation\b)",
  };
  // One expression per numeric class, tried in this order at each position:
  // ISO date (optionally with time), clock time, currency amount, decimal, integer.
  std::vector<std::string> numeric_patterns{
      R"(\b\d{4}-\d{2}-\d{2}(?:[T ]\d{1,2}:\d{2}(?::\d{2})?)?\b)",
      R"(\b\d{1,2}:\d{2}(?::\d{2})?\b)",
      R"((?:\$|€|£|USD ?)\d[\d,]*(?:\.\d+)?)",
      R"(\b\d+\.\d+\b)",
      R"(\b\d+\b)",
  };
  std::int64_t long_input_threshold = 15000;
  std::size_t numeric_token_min = 3;
  std::int64_t chars_per_token_fallback = 4;

  void validate() const {
    if (version.empty()) throw std::invalid_argument("tagger version must be non-empty");
    if (long_input_threshold <= 0) throw std::invalid_argument("long_input_threshold must be positive");
    if (chars_per_token_fallback <= 0) throw std::invalid_argument("chars_per_token_fallback must be positive");
  }

  nlohmann::ordered_json to_json() const {
    return {{"version", version},
            {"numerical_tool_names", numerical_tool_names},
            {"retrieval_tool_substrings", retrieval_tool_substrings},
            {"policy_patterns", policy_patterns},
            {"numeric_patterns", numeric_patterns},
            {"long_input_threshold", long_input_threshold},
            {"numeric_token_min", numeric_token_min},
            {"chars_per_token_fallback", chars_per_token_fallback}};
  }

  static TaggerConfig from_json(const nlohmann::ordered_json& j) {
    TaggerConfig c;
    c.version = j.value("version", c.version);
    c.numerical_tool_names = j.value("numerical_tool_names", c.numerical_tool_names);
    c.retrieval_tool_substrings = j.value("retrieval_tool_substrings", c.retrieval_tool_substrings);
    c.policy_patterns = j.value("policy_patterns", c.policy_patterns);
    c.numeric_patterns = j.value("numeric_patterns", c.numeric_patterns);
    c.long_input_threshold = j.value("long_input_threshold", c.long_input_threshold);
    c.numeric_token_min = j.value("numeric_token_min", c.numeric_token_min);
    c.chars_per_token_fallback = j.value("chars_per_token_fallback", c.chars_per_token_fallback);
    c.validate();
    return c;
  }
};

struct TagContext {
  Benchmark benchmark = Benchmark::gaia;
  // Graded (non-infra) tool calls issued earlier in the same task.
  std::size_t prior_tool_calls_in_task = 0;
};

// ---------------------------------------------------------------------------
// Tagger

/// Compiled form of a TaggerConfig. Immutable; safe to share across threads.
class Tagger {
 public:
  explicit Tagger(TaggerConfig cfg = {}) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& p : cfg_.policy_patterns) policy_.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    std::string joined;
    for (const auto& p : cfg_.numeric_patterns) {
      if (!joined.empty()) joined += '|';
      joined += "(?:" + p + ")";
    }
    numeric_ = std::regex(joined.empty() ? std::string("(?!)") : joined, std::regex::ECMAScript);
  }

  const TaggerConfig& config() const { return cfg_; }

  std::size_t count_numeric_tokens(std::string_view text) const {
    using It = std::string_view::const_iterator;
    std::regex_iterator<It> it(text.begin(), text.end(), numeric_), end;
    return static_cast<std::size_t>(std::distance(it, end));
  }

  /// Index of the first matching policy pattern, if any.
  std::optional<std::size_t> policy_match_index(std::string_view text) const {
    for (std::size_t i = 0; i < policy_.size(); ++i)
      if (std::regex_search(text.begin(), text.end(), policy_[i])) return i;
    return std::nullopt;
  }

  bool match_policy_phrase(std::string_view text) const { return policy_match_index(text).has_value(); }

  bool is_numerical_tool(std::string_view name) const {
    return std::find(cfg_.numerical_tool_names.begin(), cfg_.numerical_tool_names.end(), name) !=
           cfg_.numerical_tool_names.end();
  }

  bool is_retrieval_tool(std::string_view name) const {
    return std::any_of(cfg_.retrieval_tool_substrings.begin(), cfg_.retrieval_tool_substrings.end(),
                       [&](const std::string& sub) { return name.find(sub) != std::string_view::npos; });
  }

  std::int64_t input_tokens(const StepEvent& step) const {
    if (step.prompt_tokens) return *step.prompt_tokens;
    return static_cast<std::int64_t>(step.text.size()) / cfg_.chars_per_token_fallback;
  }

  /// Priority-ordered rules; the first that fires wins.
  StepTag tag_step(const StepEvent& step, const TagContext& ctx) const {
    if (step.role != Role::assistant) return StepTag::none();

    if (!step.tool_calls.empty()) {
      // Rule 1: infra-only.
      if (std::all_of(step.tool_calls.begin(), step.tool_calls.end(),
                      [](const ToolCall& c) { return is_infra_tool(c.name); }))
        return StepTag::infra();
      // Rules 2-4 look at graded calls only.
      bool numerical = false, retrieval = false;
      for (const auto& c : step.tool_calls) {
        if (is_infra_tool(c.name)) continue;
        if (is_numerical_tool(c.name) || count_numeric_tokens(c.args_text) >= cfg_.numeric_token_min) numerical = true;
        if (is_retrieval_tool(c.name)) retrieval = true;
      }
      if (numerical) return StepTag::of(SkillId::numerical_computation);
      if (retrieval) return StepTag::of(SkillId::information_retrieval);
      return StepTag::of(SkillId::tool_schema_adherence);
    }

    // Rule 5: policy phrasing, tau_bench only.
    if (ctx.benchmark == Benchmark::tau_bench && match_policy_phrase(step.text))
      return StepTag::of(SkillId::domain_policy_compliance);
    // Rule 6: long input.
    if (input_tokens(step) >= cfg_.long_input_threshold) return StepTag::of(SkillId::long_input_handling);
    // Rule 7: multi-step reasoning on GAIA.
    if (ctx.benchmark == Benchmark::gaia)
      return ctx.prior_tool_calls_in_task >= 2 ? StepTag::of(SkillId::multi_step_reasoning) : StepTag::none();
    // Rule 8: multi-turn suites.
    if (ctx.benchmark == Benchmark::tau_bench || ctx.benchmark == Benchmark::bfcl)
      return StepTag::of(SkillId::multi_turn_state_tracking);
    return StepTag::none();
  }

  /// Tags a step sequence, threading the prior-tool-call count.
  std::vector<StepTag> tag_trajectory(std::span<const StepEvent> steps, Benchmark benchmark) const {
    std::vector<StepTag> tags;
    tags.reserve(steps.size());
    TagContext ctx{benchmark, 0};
    for (const auto& s : steps) {
      tags.push_back(tag_step(s, ctx));
      if (s.role == Role::assistant)
        ctx.prior_tool_calls_in_task += static_cast<std::size_t>(std::count_if(
            s.tool_calls.begin(), s.tool_calls.end(), [](const ToolCall& c) { return !is_infra_tool(c.name); }));
    }
    return tags;
  }

  std::optional<SkillId> dominant_skill(std::span<const StepEvent> prefix, Benchmark benchmark) const;

 private:
  TaggerConfig cfg_;
  std::vector<std::regex> policy_;
  std::regex numeric_;
};

/// Modal skill among graded tags; ties go to the earlier taxonomy entry.
inline std::optional<SkillId> dominant_of_tags(std::span<const StepTag> tags) {
  std::array<std::size_t, kSkillCount> counts{};
  for (const auto& t : tags)
    if (auto s = t.skill()) ++counts[skill_index(*s)];
  std::size_t best = 0;
  std::optional<SkillId> out;
  for (auto s : kAllSkills) {
    if (counts[skill_index(s)] > best) {
      best = counts[skill_index(s)];
      out = s;
    }
  }
  return out;
}

inline std::optional<SkillId> Tagger::dominant_skill(std::span<const StepEvent> prefix, Benchmark benchmark) const {
  const auto tags = tag_trajectory(prefix, benchmark);
  return dominant_of_tags(tags);
}

inline const Tagger& default_tagger() {
  static const Tagger t{};
  return t;
}

inline std::size_t count_numeric_tokens(std::string_view args_text) {
  return default_tagger().count_numeric_tokens(args_text);
}

inline bool match_policy_phrase(std::string_view text) { return default_tagger().match_policy_phrase(text); }

inline StepTag tag_step(const StepEvent& step, const TagContext& ctx, const Tagger& tagger = default_tagger()) {
  return tagger.tag_step(step, ctx);
}

inline std::optional<SkillId> dominant_skill(std::span<const StepEvent> prefix, Benchmark benchmark,
                                             const Tagger& tagger = default_tagger()) {
  return tagger.dominant_skill(prefix, benchmark);
}

inline std::optional<SkillId> dominant_skill(const TaskRecord& r, const Tagger& tagger = default_tagger()) {
  return tagger.dominant_skill(r.steps, r.benchmark);
}

// ---------------------------------------------------------------------------
// Emergent-taxonomy audit

struct AuditConfig {
  double jaccard_threshold = 0.45;
  std::size_t max_label_words = 5;

  void validate() const {
    if (!(jaccard_threshold > 0.0 && jaccard_threshold < 1.0))
      throw std::invalid_argument("jaccard_threshold must be strictly between 0 and 1");
  }
};

/// A label maps to `skill` when every token of `keyword` occurs in it.
struct KeywordRule {
  std::string keyword;
  SkillId skill;
};

inline const std::vector<KeywordRule>& default_keyword_rules() {
  static const std::vector<KeywordRule> rules{
      {"schema", SkillId::tool_schema_adherence},        {"api", SkillId::tool_schema_adherence},
      {"function", SkillId::tool_schema_adherence},      {"arguments", SkillId::tool_schema_adherence},
      {"state", SkillId::multi_turn_state_tracking},     {"conversation", SkillId::multi_turn_state_tracking},
      {"dialogue", SkillId::multi_turn_state_tracking},  {"context", SkillId::multi_turn_state_tracking},
      {"policy", SkillId::domain_policy_compliance},     {"compliance", SkillId::domain_policy_compliance},
      {"refusal", SkillId::domain_policy_compliance},    {"confirmation", SkillId::domain_policy_compliance},
      {"search", SkillId::information_retrieval},        {"retrieval", SkillId::information_retrieval},
      {"lookup", SkillId::information_retrieval},        {"browsing", SkillId::information_retrieval},
      {"reasoning", SkillId::multi_step_reasoning},      {"planning", SkillId::multi_step_reasoning},
      {"deduction", SkillId::multi_step_reasoning},      {"decomposition", SkillId::multi_step_reasoning},
      {"arithmetic", SkillId::numerical_computation},    {"calculation", SkillId::numerical_computation},
      {"math", SkillId::numerical_computation},          {"numerical", SkillId::numerical_computation},
      {"long", SkillId::long_input_handling},            {"document", SkillId::long_input_handling},
      {"summarization", SkillId::long_input_handling},   {"pdf", SkillId::long_input_handling},
  };
  return rules;
}

/// Lowercased whitespace tokens, truncated to `max_words`.
inline std::vector<std::string> label_tokens(std::string_view label, std::size_t max_words) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && out.size() < max_words) out.push_back(cur);
    cur.clear();
  };
  for (char ch : label) {
    if (std::isspace(static_cast<unsigned char>(ch)))
      flush();
    else
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  flush();
  return out;
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct AuditResult {
  // Each cluster lists label indices ascending; clusters ordered by first member.
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> cluster_of;
  std::vector<std::optional<SkillId>> mapped_skill;
  std::size_t mapped = 0;
  double coverage = 0.0;
};

inline AuditResult audit_cluster(std::span<const std::string> labels, const AuditConfig& cfg = {},
                                 std::span<const KeywordRule> rules = default_keyword_rules()) {
  cfg.validate();
  const std::size_t n = labels.size();
  std::vector<std::set<std::string>> tokens(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto t = label_tokens(labels[i], cfg.max_label_words);
    tokens[i] = std::set<std::string>(t.begin(), t.end());
  }

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (jaccard(tokens[i], tokens[j]) >= cfg.jaccard_threshold) {
        auto a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }

  AuditResult out;
  out.cluster_of.resize(n);
  std::map<std::size_t, std::size_t> root_to_cluster;
  for (std::size_t i = 0; i < n; ++i) {
    auto root = find(i);
    auto [it, inserted] = root_to_cluster.try_emplace(root, out.clusters.size());
    if (inserted) out.clusters.emplace_back();
    out.clusters[it->second].push_back(i);
    out.cluster_of[i] = it->second;
  }

  out.mapped_skill.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& rule : rules) {
      auto kw = label_tokens(rule.keyword, static_cast<std::size_t>(-1));
      if (!kw.empty() && std::all_of(kw.begin(), kw.end(), [&](const std::string& t) { return tokens[i].contains(t); })) {
        out.mapped_skill[i] = rule.skill;
        break;
      }
    }
    if (out.mapped_skill[i]) ++out.mapped;
  }
  out.coverage = n == 0 ? 0.0 : static_cast<double>(out.mapped) / static_cast<double>(n);
  return out;
}

}  // namespace decisionbench
