#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>

#include "decisionbench/numeric.hpp"
#include "decisionbench/profiles.hpp"
#include "decisionbench/tagger.hpp"
#include "decisionbench/trace_model.hpp"

namespace decisionbench {

// ---------------------------------------------------------------------------
// Rollup

struct CellSummary {
  CellKey cell;
  double mean_q = 0.0;
  double mean_cost = 0.0;
  double mean_latency_s = 0.0;
  double p90_latency_s = 0.0;
  double delegation_rate = 0.0;  // call_model invocations per task
  std::size_t n_tasks = 0;
};

inline std::size_t count_call_model(const TaskRecord& r) {
  std::size_t n = 0;
  for (const auto& s : r.steps)
    if (s.role == Role::assistant)
      for (const auto& c : s.tool_calls) n += c.name == kCallModelTool;
  return n;
}

inline std::vector<CellSummary> rollup(std::span<const TaskRecord> records) {
  std::vector<CellSummary> out;
  for (const auto& [cell, recs] : group_by_cell(records)) {
    CellSummary s;
    s.cell = cell;
    s.n_tasks = recs.size();
    std::vector<double> lat;
    double q = 0, cost = 0, dlg = 0;
    for (const auto* r : recs) {
      q += r->quality;
      cost += r->cost_usd;
      lat.push_back(r->latency_s);
      dlg += static_cast<double>(count_call_model(*r));
    }
    const double n = static_cast<double>(recs.size());
    s.mean_q = q / n;
    s.mean_cost = cost / n;
    s.mean_latency_s = numeric::mean(lat);
    s.p90_latency_s = numeric::quantile(lat, 0.9);
    s.delegation_rate = dlg / n;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Delegation fidelity

struct FidelityResult {
  std::size_t hits = 0;
  std::size_t ranked = 0;     // denominator: delegations with a ranked peer list
  std::size_t unranked = 0;   // excluded: no dominant skill or no candidates
  double share = 0.0;
};

/// Outcome of scoring one delegation; `rank` is 0-based among candidates,
/// absent when the chosen peer is not a ranked candidate.
struct DelegationScore {
  std::optional<SkillId> skill;
  std::vector<std::string> candidates;
  std::optional<std::size_t> rank;
  bool rankable() const { return skill.has_value() && !candidates.empty(); }
};

inline DelegationScore score_delegation(const Delegation& d, const TaskRecord& r, const PoolStats& pool,
                                        const Tagger& tagger) {
  std::vector<StepEvent> prefix;
  for (const auto& s : r.steps)
    if (s.index < d.step_index) prefix.push_back(s);
  DelegationScore out;
  out.skill = tagger.dominant_skill(prefix, r.benchmark);
  if (!out.skill) return out;
  out.candidates = rank_peers(*out.skill, pool, r.agent);
  auto it = std::find(out.candidates.begin(), out.candidates.end(), d.peer);
  if (it != out.candidates.end()) out.rank = static_cast<std::size_t>(it - out.candidates.begin());
  return out;
}

namespace detail {

inline std::map<std::pair<CellKey, std::string>, const TaskRecord*> index_records(std::span<const TaskRecord> records) {
  std::map<std::pair<CellKey, std::string>, const TaskRecord*> idx;
  for (const auto& r : records) idx[{r.cell(), r.task_id}] = &r;
  return idx;
}

}  // namespace detail

inline std::vector<Delegation> extract_delegations(std::span<const TaskRecord> records) {
  std::vector<Delegation> out;
  for (const auto& r : records) {
    auto d = extract_delegations(r);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

/// Share of ranked delegations whose peer is among the top-k candidates.
/// Undefined (nullopt) when no delegation is rankable.
inline std::optional<FidelityResult> fidelity_at_k(std::span<const Delegation> delegations,
                                                   std::span<const TaskRecord> records, const PoolStats& pool,
                                                   std::size_t k, const Tagger& tagger = default_tagger()) {
  if (k < 1) throw std::invalid_argument("fidelity k must be >= 1");
  const auto idx = detail::index_records(records);
  FidelityResult res;
  for (const auto& d : delegations) {
    auto it = idx.find({d.cell, d.task_id});
    if (it == idx.end()) throw std::invalid_argument("delegation references unknown record " + d.cell.str() + "/" + d.task_id);
    const auto score = score_delegation(d, *it->second, pool, tagger);
    if (!score.rankable()) {
      ++res.unranked;
      continue;
    }
    ++res.ranked;
    if (score.rank && *score.rank < k) ++res.hits;
  }
  if (res.ranked == 0) return std::nullopt;
  res.share = static_cast<double>(res.hits) / static_cast<double>(res.ranked);
  return res;
}

inline std::optional<FidelityResult> fidelity_at_k(std::span<const TaskRecord> records, const PoolStats& pool,
                                                   std::size_t k, const Tagger& tagger = default_tagger()) {
  const auto dels = extract_delegations(records);
  return fidelity_at_k(dels, records, pool, k, tagger);
}

// ---------------------------------------------------------------------------
// Vendor self-preference

struct SelfPreference {
  std::string orchestrator;
  std::string vendor;
  std::size_t n = 0;
  std::size_t same_vendor = 0;
  double observed_share = 0.0;
  double chance = 0.0;                 // (k-1)/(N-1)
  std::optional<double> ratio;        // undefined for singleton vendors
  std::map<std::string, std::size_t> peer_vendor_counts;
};

inline double same_vendor_chance(const PoolRegistry& registry, std::string_view vendor) {
  const auto k = registry.vendor_size(vendor);
  const auto n = registry.size();
  if (n < 2 || k == 0) return 0.0;
  return static_cast<double>(k - 1) / static_cast<double>(n - 1);
}

inline std::vector<SelfPreference> self_preference(std::span<const Delegation> delegations,
                                                   const PoolRegistry& registry) {
  std::map<std::string, SelfPreference> by_orch;
  for (const auto& d : delegations) {
    const auto ov = registry.vendor_of(d.cell.agent);
    const auto pv = registry.vendor_of(d.peer);
    if (!ov) throw std::invalid_argument("orchestrator not in registry: " + d.cell.agent);
    if (!pv) throw std::invalid_argument("peer not in registry: " + d.peer);
    auto& sp = by_orch[d.cell.agent];
    sp.orchestrator = d.cell.agent;
    sp.vendor = *ov;
    ++sp.n;
    ++sp.peer_vendor_counts[*pv];
    if (*pv == *ov) ++sp.same_vendor;
  }
  std::vector<SelfPreference> out;
  for (auto& [name, sp] : by_orch) {
    sp.observed_share = static_cast<double>(sp.same_vendor) / static_cast<double>(sp.n);
    sp.chance = same_vendor_chance(registry, sp.vendor);
    if (sp.chance > 0.0) sp.ratio = sp.observed_share / sp.chance;
    out.push_back(std::move(sp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Counterfactual-delegation ceiling

struct CeilingConfig {
  double realization_rate = 1.0;

  void validate() const {
    if (!(realization_rate > 0.0 && realization_rate <= 1.0))
      throw std::invalid_argument("realization rate must be in (0,1]");
  }
};

struct CeilingRow {
  CellKey cell;
  std::size_t n_tasks = 0;
  double actual = 0.0;
  double ceiling = 0.0;
  double gap = 0.0;
};

/// Best available pass rate for whole-task delegation, if any peer ranks.
inline std::optional<double> best_peer_rate(const TaskRecord& r, const PoolStats& pool, const Tagger& tagger) {
  const auto skill = dominant_skill(r, tagger);
  if (!skill) return std::nullopt;
  const auto peers = rank_peers(*skill, pool, r.agent);
  if (peers.empty()) return std::nullopt;
  return pool.find(peers.front(), *skill)->pass_rate;
}

inline std::vector<CeilingRow> counterfactual_ceiling(std::span<const TaskRecord> blind_records, const PoolStats& pool,
                                                      const CeilingConfig& cfg = {},
                                                      const Tagger& tagger = default_tagger()) {
  cfg.validate();
  std::vector<CeilingRow> out;
  for (const auto& [cell, recs] : group_by_cell(blind_records)) {
    if (cell.condition != Condition::blind) throw std::invalid_argument("ceiling expects blind records only");
    CeilingRow row;
    row.cell = cell;
    row.n_tasks = recs.size();
    double actual = 0, ceiling = 0;
    for (const auto* r : recs) {
      actual += r->quality;
      double cf = r->quality;
      if (auto p = best_peer_rate(*r, pool, tagger)) cf = std::max(cf, cfg.realization_rate * *p);
      ceiling += cf;
    }
    const double n = static_cast<double>(recs.size());
    row.actual = actual / n;
    row.ceiling = ceiling / n;
    row.gap = row.ceiling - row.actual;
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pareto frontier and hypervolume

struct ParetoPoint {
  double q = 0.0;
  double cost = 0.0;
  std::optional<double> latency;
  std::string label;

  bool operator==(const ParetoPoint&) const = default;
};

/// a dominates b: no worse on every axis, strictly better on one. Latency
/// participates only when both points carry it.
inline bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  const bool lat = a.latency && b.latency;
  const bool no_worse = a.q >= b.q && a.cost <= b.cost && (!lat || *a.latency <= *b.latency);
  const bool better = a.q > b.q || a.cost < b.cost || (lat && *a.latency < *b.latency);
  return no_worse && better;
}

inline std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points) {
  std::vector<ParetoPoint> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return std::tie(b.q, a.cost, a.latency, a.label) < std::tie(a.q, b.cost, b.latency, b.label);
  });
  std::vector<ParetoPoint> out;
  for (const auto& p : sorted) {
    bool dominated = false;
    for (const auto& other : sorted)
      if (dominates(other, p)) {
        dominated = true;
        break;
      }
    if (!dominated) out.push_back(p);
  }
  return out;
}

struct HvConfig {
  double cost_ref_multiplier = 1.05;

  void validate() const {
    if (!(cost_ref_multiplier >= 1.0)) throw std::invalid_argument("cost_ref_multiplier must be >= 1");
  }
};

inline double cost_reference(std::span<const double> mean_costs, const HvConfig& cfg = {}) {
  cfg.validate();
  double mx = 0.0;
  for (double c : mean_costs) mx = std::max(mx, c);
  return cfg.cost_ref_multiplier * mx;
}

/// Area of the union of rectangles [0, q_i] x [cost_i, cost_ref].
inline double hypervolume_2d(std::span<const ParetoPoint> points, double cost_ref) {
  std::vector<std::pair<double, double>> pts;  // (cost, q)
  for (const auto& p : points)
    if (p.cost < cost_ref && p.q > 0.0) pts.emplace_back(p.cost, p.q);
  if (pts.empty()) return 0.0;
  std::sort(pts.begin(), pts.end());
  double area = 0.0, height = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    height = std::max(height, pts[i].second);
    const double next = i + 1 < pts.size() ? pts[i + 1].first : cost_ref;
    area += height * (next - pts[i].first);
  }
  return area;
}

struct HvRow {
  Benchmark benchmark = Benchmark::gaia;
  Condition condition = Condition::blind;
  double cost_ref = 0.0;
  double hv = 0.0;
  std::size_t n_points = 0;
};

/// Points are per-agent (mean_q, mean_cost) cells; cost_ref is per benchmark
/// over every condition.
inline std::map<Benchmark, double> cost_references(std::span<const CellSummary> cells, const HvConfig& cfg = {}) {
  std::map<Benchmark, std::vector<double>> costs;
  for (const auto& c : cells) costs[c.cell.benchmark].push_back(c.mean_cost);
  std::map<Benchmark, double> out;
  for (const auto& [b, cs] : costs) out[b] = cost_reference(cs, cfg);
  return out;
}

inline std::map<std::pair<Benchmark, Condition>, std::vector<ParetoPoint>> points_by_condition(
    std::span<const CellSummary> cells) {
  std::map<std::pair<Benchmark, Condition>, std::vector<ParetoPoint>> out;
  for (const auto& c : cells)
    out[{c.cell.benchmark, c.cell.condition}].push_back(
        {c.mean_q, c.mean_cost, c.mean_latency_s, c.cell.agent});
  return out;
}

inline std::vector<HvRow> hypervolume_by_condition(std::span<const CellSummary> cells, const HvConfig& cfg = {}) {
  const auto refs = cost_references(cells, cfg);
  std::vector<HvRow> out;
  for (const auto& [key, pts] : points_by_condition(cells))
    out.push_back({key.first, key.second, refs.at(key.first), hypervolume_2d(pts, refs.at(key.first)), pts.size()});
  return out;
}

// ---------------------------------------------------------------------------
// Per-skill lift

struct LiftRow {
  SkillId skill = SkillId::tool_schema_adherence;
  std::size_t n = 0;
  double blind_mean = 0.0;
  double aware_mean = 0.0;
  double delta = 0.0;
};

struct LiftResult {
  std::vector<LiftRow> rows;       // taxonomy order, populated buckets only
  std::size_t matched = 0;
  std::size_t blind_only = 0;
  std::size_t aware_only = 0;
  std::size_t no_dominant_skill = 0;
};

/// Buckets tasks by the dominant skill of their blind trajectory and pairs
/// each against the aware run of the same (agent, benchmark, task).
inline LiftResult per_skill_lift(std::span<const TaskRecord> blind, std::span<const TaskRecord> aware,
                                 const Tagger& tagger = default_tagger()) {
  using Key = std::tuple<std::string, Benchmark, std::string>;
  std::map<Key, const TaskRecord*> aware_idx;
  for (const auto& r : aware) aware_idx[{r.agent, r.benchmark, r.task_id}] = &r;

  LiftResult res;
  std::set<Key> used;
  std::array<double, kSkillCount> bsum{}, asum{};
  std::array<std::size_t, kSkillCount> n{};
  for (const auto& b : blind) {
    Key key{b.agent, b.benchmark, b.task_id};
    auto it = aware_idx.find(key);
    if (it == aware_idx.end()) {
      ++res.blind_only;
      continue;
    }
    used.insert(key);
    ++res.matched;
    const auto skill = dominant_skill(b, tagger);
    if (!skill) {
      ++res.no_dominant_skill;
      continue;
    }
    const auto i = skill_index(*skill);
    bsum[i] += b.quality;
    asum[i] += it->second->quality;
    ++n[i];
  }
  res.aware_only = aware_idx.size() - used.size();
  for (auto s : kAllSkills) {
    const auto i = skill_index(s);
    if (n[i] == 0) continue;
    const double cnt = static_cast<double>(n[i]);
    LiftRow row{s, n[i], bsum[i] / cnt, asum[i] / cnt, 0.0};
    row.delta = row.aware_mean - row.blind_mean;
    res.rows.push_back(row);
  }
  return res;
}

}  // namespace decisionbench
