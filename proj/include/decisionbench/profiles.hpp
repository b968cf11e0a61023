#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "decisionbench/tagger.hpp"
#include "decisionbench/trace_model.hpp"

namespace decisionbench {

/// A Stage-1 task counts as a pass at or above this quality.
inline constexpr double kPassThreshold = 0.5;

struct PercentileRank {
  std::size_t rank = 0;
  std::size_t of = 0;

  bool operator==(const PercentileRank&) const = default;
};

struct SkillStats {
  std::string model;
  SkillId skill = SkillId::tool_schema_adherence;
  std::size_t n_tasks = 0;
  std::size_t passes = 0;
  double pass_rate = 0.0;
  double mean_steps = 0.0;
  double mean_output_tokens = 0.0;
  double mean_latency_s = 0.0;
  double cost_per_task = 0.0;
  double total_cost = 0.0;
  std::optional<double> cost_per_success;  // undefined when passes == 0
  PercentileRank percentile_rank;
};

struct ModelCoverage {
  std::size_t n_tasks = 0;
  std::set<Benchmark> benchmarks;
};

/// Per-(model, skill) Stage-1 statistics for the whole pool.
struct PoolStats {
  std::map<std::pair<std::string, SkillId>, SkillStats> stats;
  std::map<std::string, ModelCoverage> models;
  std::string tagger_version;

  const SkillStats* find(std::string_view model, SkillId skill) const {
    auto it = stats.find({std::string(model), skill});
    return it == stats.end() ? nullptr : &it->second;
  }

  std::vector<const SkillStats*> for_model(std::string_view model) const {
    std::vector<const SkillStats*> out;
    for (auto s : kAllSkills)
      if (const auto* st = find(model, s)) out.push_back(st);
    return out;
  }

  std::vector<const SkillStats*> for_skill(SkillId skill) const {
    std::vector<const SkillStats*> out;
    for (const auto& [key, st] : stats)
      if (key.second == skill && st.n_tasks > 0) out.push_back(&st);
    return out;
  }
};

inline double cps_or_inf(const SkillStats& s) {
  return s.cost_per_success.value_or(std::numeric_limits<double>::infinity());
}

/// Competition ranking by descending pass rate among models exercising the
/// skill; tied models share the smaller rank.
inline std::optional<PercentileRank> percentile_rank(std::string_view model, SkillId skill, const PoolStats& pool) {
  const auto* self = pool.find(model, skill);
  if (self == nullptr || self->n_tasks == 0) return std::nullopt;
  const auto exercisers = pool.for_skill(skill);
  std::size_t better = 0;
  for (const auto* s : exercisers)
    if (s->pass_rate > self->pass_rate) ++better;
  return PercentileRank{better + 1, exercisers.size()};
}

inline void assign_percentile_ranks(PoolStats& pool) {
  for (auto& [key, st] : pool.stats)
    if (auto r = percentile_rank(key.first, key.second, pool)) st.percentile_rank = *r;
}

/// Attribution: a task counts toward skill s iff the dominant skill of its
/// full trajectory is s.
inline PoolStats compute_skill_stats(std::span<const TaskRecord> stage1, const Tagger& tagger = default_tagger()) {
  PoolStats pool;
  pool.tagger_version = tagger.config().version;
  if (stage1.empty()) return pool;
  const auto condition = stage1.front().condition;
  for (const auto& r : stage1)
    if (r.condition != condition) throw std::invalid_argument("Stage-1 records must share a single condition");

  struct Acc {
    std::size_t n = 0, passes = 0;
    double steps = 0, out_tokens = 0, latency = 0, cost = 0;
  };
  std::map<std::pair<std::string, SkillId>, Acc> acc;
  for (const auto& r : stage1) {
    auto& cov = pool.models[r.agent];
    ++cov.n_tasks;
    cov.benchmarks.insert(r.benchmark);
    const auto skill = dominant_skill(r, tagger);
    if (!skill) continue;
    auto& a = acc[{r.agent, *skill}];
    ++a.n;
    if (r.quality >= kPassThreshold) ++a.passes;
    for (const auto& s : r.steps) {
      if (s.role != Role::assistant) continue;
      a.steps += 1;
      a.out_tokens += static_cast<double>(s.completion_tokens.value_or(0));
    }
    a.latency += r.latency_s;
    a.cost += r.cost_usd;
  }
  for (const auto& [key, a] : acc) {
    SkillStats s;
    s.model = key.first;
    s.skill = key.second;
    s.n_tasks = a.n;
    s.passes = a.passes;
    const double n = static_cast<double>(a.n);
    s.pass_rate = static_cast<double>(a.passes) / n;
    s.mean_steps = a.steps / n;
    s.mean_output_tokens = a.out_tokens / n;
    s.mean_latency_s = a.latency / n;
    s.cost_per_task = a.cost / n;
    s.total_cost = a.cost;
    if (a.passes > 0) s.cost_per_success = a.cost / static_cast<double>(a.passes);
    pool.stats.emplace(key, std::move(s));
  }
  assign_percentile_ranks(pool);
  return pool;
}

/// Candidate peers for a skill: descending pass rate, then lower
/// cost-per-success, then name. `exclude` never appears.
inline std::vector<std::string> rank_peers(SkillId skill, const PoolStats& pool, std::string_view exclude = {}) {
  auto cands = pool.for_skill(skill);
  std::erase_if(cands, [&](const SkillStats* s) { return s->model == exclude; });
  std::sort(cands.begin(), cands.end(), [](const SkillStats* a, const SkillStats* b) {
    if (a->pass_rate != b->pass_rate) return a->pass_rate > b->pass_rate;
    if (cps_or_inf(*a) != cps_or_inf(*b)) return cps_or_inf(*a) < cps_or_inf(*b);
    return a->model < b->model;
  });
  std::vector<std::string> out;
  out.reserve(cands.size());
  for (const auto* s : cands) out.push_back(s->model);
  return out;
}

// ---------------------------------------------------------------------------
// Cards

enum class CardVariant { c1_human, c2_static, c3_llm_judge };

inline std::string_view to_string(CardVariant v) {
  switch (v) {
    case CardVariant::c1_human: return "c1_human";
    case CardVariant::c2_static: return "c2_static";
    case CardVariant::c3_llm_judge: return "c3_llm_judge";
  }
  return "?";
}

inline std::optional<CardVariant> parse_card_variant(std::string_view s) {
  for (auto v : {CardVariant::c1_human, CardVariant::c2_static, CardVariant::c3_llm_judge})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

struct CardFrontmatter {
  std::string model;
  CardVariant variant = CardVariant::c2_static;
  std::string tagger;
  std::size_t n_tasks = 0;
  std::vector<std::string> benchmarks;

  bool operator==(const CardFrontmatter&) const = default;
};

struct ProfileCard {
  CardFrontmatter frontmatter;
  std::vector<SkillStats> strengths;
  std::vector<SkillStats> weaknesses;
  std::vector<SkillStats> all_skills;
  std::vector<SkillId> unexercised;
};

inline constexpr std::size_t kCardHighlights = 3;

inline ProfileCard build_c2_card(std::string_view model, const PoolStats& pool) {
  auto cov = pool.models.find(std::string(model));
  if (cov == pool.models.end() || cov->second.n_tasks == 0)
    throw std::invalid_argument("model " + std::string(model) + " has no Stage-1 tasks");

  ProfileCard card;
  card.frontmatter.model = std::string(model);
  card.frontmatter.variant = CardVariant::c2_static;
  card.frontmatter.tagger = pool.tagger_version;
  card.frontmatter.n_tasks = cov->second.n_tasks;
  for (auto b : cov->second.benchmarks) card.frontmatter.benchmarks.emplace_back(to_string(b));
  std::sort(card.frontmatter.benchmarks.begin(), card.frontmatter.benchmarks.end());

  for (auto s : kAllSkills) {
    const auto* st = pool.find(model, s);
    if (st != nullptr && st->n_tasks > 0)
      card.all_skills.push_back(*st);
    else
      card.unexercised.push_back(s);
  }
  if (card.all_skills.empty())
    throw std::invalid_argument("model " + std::string(model) + " exercised no skill in Stage 1");

  auto tie_break = [](const SkillStats& a, const SkillStats& b) {
    if (cps_or_inf(a) != cps_or_inf(b)) return cps_or_inf(a) < cps_or_inf(b);
    return skill_index(a.skill) < skill_index(b.skill);
  };
  auto best = card.all_skills;
  std::stable_sort(best.begin(), best.end(), [&](const SkillStats& a, const SkillStats& b) {
    if (a.pass_rate != b.pass_rate) return a.pass_rate > b.pass_rate;
    return tie_break(a, b);
  });
  auto worst = card.all_skills;
  std::stable_sort(worst.begin(), worst.end(), [&](const SkillStats& a, const SkillStats& b) {
    if (a.pass_rate != b.pass_rate) return a.pass_rate < b.pass_rate;
    return tie_break(a, b);
  });
  best.resize(std::min(best.size(), kCardHighlights));
  worst.resize(std::min(worst.size(), kCardHighlights));
  card.strengths = std::move(best);
  card.weaknesses = std::move(worst);
  return card;
}

namespace detail {

// Integer round-half-up of 100 * passes / n, immune to float formatting.
inline std::size_t percent_of(std::size_t passes, std::size_t n) { return n == 0 ? 0 : (200 * passes + n) / (2 * n); }

inline std::string highlight(const SkillStats& s, bool with_rank) {
  std::string out = fmt::format("{} {}/{}={}%", skill_slug(s.skill), s.passes, s.n_tasks, percent_of(s.passes, s.n_tasks));
  std::vector<std::string> notes;
  if (with_rank && s.percentile_rank.of > 0)
    notes.push_back(fmt::format("rank {}/{}", s.percentile_rank.rank, s.percentile_rank.of));
  if (s.cost_per_success)
    notes.push_back(fmt::format("${:.3f}/success", *s.cost_per_success));
  else
    notes.emplace_back("no successes");
  out += " (";
  for (std::size_t i = 0; i < notes.size(); ++i) out += (i ? ", " : "") + notes[i];
  out += ")";
  return out;
}

}  // namespace detail

inline std::string render_frontmatter(const CardFrontmatter& fm) {
  std::string out = "---\n";
  out += "model: " + fm.model + "\n";
  out += "variant: " + std::string(to_string(fm.variant)) + "\n";
  out += "tagger: " + fm.tagger + "\n";
  out += fmt::format("n_tasks: {}\n", fm.n_tasks);
  out += "benchmarks: [";
  for (std::size_t i = 0; i < fm.benchmarks.size(); ++i) out += (i ? ", " : "") + fm.benchmarks[i];
  out += "]\n---\n";
  return out;
}

/// Byte-stable markdown. Percentages print with 0 decimals, USD with 3.
inline std::string render_card(const ProfileCard& card) {
  if (card.all_skills.empty()) throw std::invalid_argument("card has no measured skills");
  const auto& fm = card.frontmatter;
  std::string out = render_frontmatter(fm);
  out += fmt::format("# {}: derived skill profile (C2)\n\n", fm.model);
  out += fmt::format(
      "Generated automatically from {} Stage-1 tasks across {} benchmarks via the rule-based tagger {}. "
      "No LLM judgment.\n\n",
      fm.n_tasks, fm.benchmarks.size(), fm.tagger);
  out += "## Strengths\n\n";
  for (const auto& s : card.strengths) out += "- " + detail::highlight(s, true) + "\n";
  out += "\n## Weaknesses\n\n";
  for (const auto& s : card.weaknesses) out += "- " + detail::highlight(s, true) + "\n";
  out += "\n## All measured skills\n\n";
  out += "| Skill | pass | n | avg steps | avg out-tok | $/task |\n";
  out += "|---|---:|---:|---:|---:|---:|\n";
  for (const auto& s : card.all_skills)
    out += fmt::format("| {} | {}% | {} | {:.1f} | {:.0f} | {:.3f} |\n", skill_slug(s.skill),
                       detail::percent_of(s.passes, s.n_tasks), s.n_tasks, s.mean_steps, s.mean_output_tokens,
                       s.cost_per_task);
  out += "\n## Skills not exercised in Stage 1\n\n";
  if (card.unexercised.empty()) out += "- none\n";
  for (auto s : card.unexercised) out += fmt::format("- {}\n", to_string(s));
  out += "\nRecommended delegation patterns: none; C2 is metric-only.\n";
  return out;
}

class FrontmatterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads the leading "---" delimited block of any card variant.
inline CardFrontmatter parse_frontmatter(std::string_view text) {
  auto next_line = [&](std::size_t& pos) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  std::size_t pos = 0;
  if (next_line(pos) != "---") throw FrontmatterError("card does not start with a frontmatter delimiter");
  CardFrontmatter fm;
  std::set<std::string> seen;
  while (true) {
    if (pos >= text.size()) throw FrontmatterError("unterminated frontmatter");
    auto line = next_line(pos);
    if (line == "---") break;
    auto colon = line.find(':');
    if (colon == std::string_view::npos) throw FrontmatterError("malformed frontmatter line: " + std::string(line));
    std::string key(line.substr(0, colon));
    std::string value(line.substr(colon + 1));
    value.erase(0, value.find_first_not_of(' '));
    seen.insert(key);
    if (key == "model") {
      fm.model = value;
    } else if (key == "variant") {
      auto v = parse_card_variant(value);
      if (!v) throw FrontmatterError("unknown card variant " + value);
      fm.variant = *v;
    } else if (key == "tagger") {
      fm.tagger = value;
    } else if (key == "n_tasks") {
      fm.n_tasks = static_cast<std::size_t>(std::stoull(value));
    } else if (key == "benchmarks") {
      if (value.size() < 2 || value.front() != '[' || value.back() != ']')
        throw FrontmatterError("benchmarks must be a bracketed list");
      std::string body = value.substr(1, value.size() - 2);
      std::size_t p = 0;
      while (p < body.size()) {
        auto comma = body.find(',', p);
        if (comma == std::string::npos) comma = body.size();
        auto item = body.substr(p, comma - p);
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (!item.empty()) fm.benchmarks.push_back(item);
        p = comma + 1;
      }
    }
  }
  if (!seen.contains("model") || !seen.contains("variant")) throw FrontmatterError("frontmatter lacks model/variant");
  if (fm.variant == CardVariant::c2_static && fm.tagger.empty())
    throw FrontmatterError("c2_static card must pin a tagger version");
  return fm;
}

}  // namespace decisionbench
