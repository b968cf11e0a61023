#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "decisionbench/profiles.hpp"
#include "decisionbench/rng.hpp"
#include "decisionbench/tagger.hpp"
#include "decisionbench/trace_model.hpp"

namespace decisionbench::sim {

struct SyntheticPeer {
  std::string name;
  std::string vendor;
  Tier tier = Tier::small;
  std::array<double, kSkillCount> skill_pass{};
  double cost_mean = 0.05;
  double cost_spread = 0.01;
  double latency_mean = 60.0;
  double latency_spread = 10.0;

  double pass(SkillId s) const { return skill_pass[skill_index(s)]; }

  void validate() const {
    if (name.empty()) throw std::invalid_argument("synthetic peer needs a name");
    for (double p : skill_pass)
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("skill pass rate out of [0,1] for " + name);
    if (cost_mean < 0.0 || latency_mean < 0.0) throw std::invalid_argument("negative cost/latency mean for " + name);
  }
};

class Policy {
 public:
  enum class Kind { no_delegate, blind_uniform, oracle_top1, epsilon_noisy };

  static Policy no_delegate() { return Policy(Kind::no_delegate, 0.0); }
  static Policy blind_uniform() { return Policy(Kind::blind_uniform, 0.0); }
  static Policy oracle_top1() { return Policy(Kind::oracle_top1, 0.0); }
  static Policy epsilon_noisy(double eps) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("epsilon must be in [0,1]");
    return Policy(Kind::epsilon_noisy, eps);
  }

  Kind kind() const { return kind_; }
  std::optional<double> epsilon() const {
    return kind_ == Kind::epsilon_noisy ? std::optional(epsilon_) : std::nullopt;
  }

  std::string str() const {
    switch (kind_) {
      case Kind::no_delegate: return "no_delegate";
      case Kind::blind_uniform: return "blind_uniform";
      case Kind::oracle_top1: return "oracle_top1";
      case Kind::epsilon_noisy: return fmt::format("epsilon_noisy({})", epsilon_);
    }
    return "?";
  }

 private:
  Policy(Kind k, double e) : kind_(k), epsilon_(e) {}
  Kind kind_;
  double epsilon_;
};

struct SimTask {
  std::string task_id;  // canonical
  Benchmark benchmark = Benchmark::gaia;
  std::optional<std::string> shard;
  SkillId dominant_skill = SkillId::tool_schema_adherence;
  double difficulty = 1.0;  // multiplicative success factor in (0,1]
};

struct SimConfig {
  std::uint64_t seed = 0;
  std::vector<SyntheticPeer> pool;
  SyntheticPeer orchestrator;
  std::vector<SimTask> tasks;
  int delegation_cap = kDelegationCap;
  double delegation_propensity = 1.0;
  // Peer calls per delegating task; 1 is whole-task delegation.
  int delegations_per_task = 1;

  void validate() const {
    if (pool.size() < 2) throw std::invalid_argument("simulator pool needs at least 2 peers");
    for (const auto& p : pool) p.validate();
    if (!(delegation_propensity >= 0.0 && delegation_propensity <= 1.0))
      throw std::invalid_argument("delegation_propensity must be in [0,1]");
    if (delegation_cap < 0 || delegations_per_task < 1) throw std::invalid_argument("bad delegation limits");
  }

  const SyntheticPeer* find_peer(std::string_view name) const {
    for (const auto& p : pool)
      if (p.name == name) return &p;
    return nullptr;
  }
};

/// Whether the tagger can ever assign `skill` on `benchmark`.
inline bool skill_reachable(SkillId skill, Benchmark b) {
  switch (skill) {
    case SkillId::multi_turn_state_tracking: return b == Benchmark::tau_bench || b == Benchmark::bfcl;
    case SkillId::domain_policy_compliance: return b == Benchmark::tau_bench;
    case SkillId::multi_step_reasoning: return b == Benchmark::gaia;
    default: return true;
  }
}

inline PoolRegistry to_registry(std::span<const SyntheticPeer> pool) {
  std::vector<PoolEntry> entries;
  for (const auto& p : pool) entries.push_back({p.name, p.vendor, p.tier});
  return PoolRegistry(std::move(entries));
}

/// PoolStats built from the true per-skill pass rates, for oracle routing.
inline PoolStats true_pool_stats(std::span<const SyntheticPeer> pool, std::string tagger_version = TaggerConfig{}.version) {
  PoolStats st;
  st.tagger_version = std::move(tagger_version);
  for (const auto& p : pool) {
    for (auto s : kAllSkills) {
      SkillStats ss;
      ss.model = p.name;
      ss.skill = s;
      ss.n_tasks = 1;
      ss.pass_rate = p.pass(s);
      ss.passes = ss.pass_rate >= kPassThreshold ? 1 : 0;
      ss.cost_per_task = p.cost_mean;
      ss.total_cost = p.cost_mean;
      if (ss.pass_rate > 0.0) ss.cost_per_success = p.cost_mean / ss.pass_rate;
      st.stats.emplace(std::pair{p.name, s}, ss);
    }
    st.models[p.name].n_tasks = 1;
  }
  assign_percentile_ranks(st);
  return st;
}

namespace detail {

inline const std::array<const char*, 4> kSchemaTools{"set_value", "update_status", "create_item", "send_message"};
inline const std::array<const char*, 3> kRetrievalTools{"web_search", "lookup_entity", "read_document"};
inline const std::array<const char*, 2> kNumericTools{"calculator", "python_eval"};
inline const std::array<const char*, 3> kPolicyLines{
    "I am sorry, but that change is against our policy.",
    "Please confirm the change before I proceed.",
    "Upgrading this fare is not permitted under the current rules."};
inline const std::array<const char*, 2> kStateLines{"Noted. Your open request is still pending; what would you like next?",
                                                    "Understood, I have updated the running summary of this session."};

class StepWriter {
 public:
  explicit StepWriter(Rng& rng) : rng_(rng) {}

  void tool(const std::string& name, const std::string& args) {
    StepEvent s;
    s.index = next_++;
    s.role = Role::assistant;
    s.tool_calls.push_back({name, args});
    s.prompt_tokens = context_;
    s.completion_tokens = 40 + static_cast<std::int64_t>(rng_.below(160));
    s.finish_reason = "tool_calls";
    context_ += *s.completion_tokens;
    steps_.push_back(std::move(s));
    result("ok");
  }

  void text(const std::string& body, std::optional<std::int64_t> prompt_tokens = std::nullopt) {
    StepEvent s;
    s.index = next_++;
    s.role = Role::assistant;
    s.text = body;
    s.prompt_tokens = prompt_tokens.value_or(context_);
    s.completion_tokens = 60 + static_cast<std::int64_t>(rng_.below(400));
    s.finish_reason = "stop";
    context_ += *s.completion_tokens;
    steps_.push_back(std::move(s));
  }

  void result(const std::string& body) {
    StepEvent s;
    s.index = next_++;
    s.role = Role::tool_result;
    s.text = body;
    context_ += 50 + static_cast<std::int64_t>(rng_.below(250));
    steps_.push_back(std::move(s));
  }

  std::vector<StepEvent> take() { return std::move(steps_); }

 private:
  Rng& rng_;
  std::vector<StepEvent> steps_;
  std::int64_t next_ = 0;
  std::int64_t context_ = 600;
};

template <class Arr>
const char* pick(Rng& rng, const Arr& arr) {
  return arr[rng.below(arr.size())];
}

// Every assistant step emitted here tags as `skill`, except the retrieval
// preamble of multi-step reasoning which stays strictly in the minority.
inline void emit_skill_steps(SkillId skill, Benchmark bench, Rng& rng, StepWriter& w) {
  const auto m = 3 + rng.below(3);
  for (std::uint64_t k = 0; k < m; ++k) {
    switch (skill) {
      case SkillId::tool_schema_adherence:
        w.tool(pick(rng, kSchemaTools), R"({"field": "status", "value": "ok"})");
        break;
      case SkillId::multi_turn_state_tracking:
        w.text(pick(rng, kStateLines));
        break;
      case SkillId::domain_policy_compliance:
        w.text(pick(rng, kPolicyLines));
        break;
      case SkillId::information_retrieval:
        w.tool(pick(rng, kRetrievalTools), R"({"query": "topic"})");
        break;
      case SkillId::multi_step_reasoning:
        if (k == 0) {
          w.tool("web_search", R"({"query": "first lead"})");
          w.tool("web_search", R"({"query": "second lead"})");
        }
        w.text("Combining the retrieved facts, the next inference follows.");
        break;
      case SkillId::numerical_computation:
        w.tool(pick(rng, kNumericTools), R"({"expression": "(12 + 30) * 4"})");
        break;
      case SkillId::long_input_handling:
        w.text("Summarising the relevant section of the attached document.",
               15000 + static_cast<std::int64_t>(rng.below(20000)));
        break;
    }
  }
  (void)bench;
}

inline double sample_nonneg(Rng& rng, double mean, double spread) {
  return std::max(0.0, mean + spread * rng.normal_ih());
}

}  // namespace detail

/// Chooses the peer the orchestrator delegates to.
inline std::string choose_peer(const SimConfig& cfg, const SyntheticPeer& orch, SkillId skill, const Policy& policy,
                               Rng& rng) {
  std::vector<std::string> cands;
  for (const auto& p : cfg.pool)
    if (p.name != orch.name) cands.push_back(p.name);
  if (cands.empty()) throw std::invalid_argument("no candidate peers for " + orch.name);
  auto top1 = [&] {
    const auto ranked = rank_peers(skill, true_pool_stats(cfg.pool), orch.name);
    return ranked.front();
  };
  switch (policy.kind()) {
    case Policy::Kind::oracle_top1: return top1();
    case Policy::Kind::epsilon_noisy:
      if (!rng.bernoulli(*policy.epsilon())) return top1();
      [[fallthrough]];
    case Policy::Kind::blind_uniform: return cands[rng.below(cands.size())];
    case Policy::Kind::no_delegate: break;
  }
  throw std::logic_error("no_delegate policy cannot choose a peer");
}

inline std::string task_stream_key(const CellKey& cell, std::string_view task_id) {
  return cell.str() + "/" + std::string(task_id);
}

/// Simulates one task for cfg.orchestrator. The record's RNG substream is
/// keyed by (seed, cell, task_id), so any cell can be regenerated alone.
inline TaskRecord simulate_task(const SimConfig& cfg, const SimTask& task, const Policy& policy,
                                Condition condition = Condition::blind) {
  cfg.validate();
  const auto& orch = cfg.orchestrator;
  if (!skill_reachable(task.dominant_skill, task.benchmark))
    throw std::invalid_argument(fmt::format("skill {} cannot occur on {}", to_string(task.dominant_skill),
                                            to_string(task.benchmark)));
  if (!(task.difficulty > 0.0 && task.difficulty <= 1.0)) throw std::invalid_argument("difficulty must be in (0,1]");

  TaskRecord r;
  r.task_id = task.task_id;
  r.benchmark = task.benchmark;
  r.shard = task.shard;
  r.agent = orch.name;
  r.condition = condition;
  Rng rng(substream_seed(cfg.seed, task_stream_key(r.cell(), r.task_id)));

  detail::StepWriter w(rng);
  detail::emit_skill_steps(task.dominant_skill, task.benchmark, rng, w);

  const SyntheticPeer* actor = &orch;
  double cost = detail::sample_nonneg(rng, orch.cost_mean, orch.cost_spread);
  double latency = detail::sample_nonneg(rng, orch.latency_mean, orch.latency_spread);
  if (policy.kind() != Policy::Kind::no_delegate && rng.bernoulli(cfg.delegation_propensity)) {
    const int calls = std::min(cfg.delegations_per_task, cfg.delegation_cap);
    for (int c = 0; c < calls; ++c) {
      const auto peer_name = choose_peer(cfg, orch, task.dominant_skill, policy, rng);
      const auto* peer = cfg.find_peer(peer_name);
      if (peer == nullptr) throw std::invalid_argument("policy chose a peer outside the pool: " + peer_name);
      w.tool(std::string(kCallModelTool), call_model_args(peer_name, "subtask for " + task.task_id, 0.5));
      cost += detail::sample_nonneg(rng, peer->cost_mean, peer->cost_spread);
      latency += detail::sample_nonneg(rng, peer->latency_mean, peer->latency_spread);
      actor = peer;
    }
  }
  r.quality = rng.bernoulli(actor->pass(task.dominant_skill) * task.difficulty) ? 1.0 : 0.0;
  r.cost_usd = cost;
  r.latency_s = latency;
  r.steps = w.take();
  return r;
}

/// The orchestrator x benchmark x condition cross product, n tasks per cell.
/// Orchestrators are the pool members in order; benchmarks are those present
/// in cfg.tasks, in enum order; each uses its first n tasks.
inline std::vector<TaskRecord> simulate_sweep(const SimConfig& cfg,
                                              std::span<const std::pair<Condition, Policy>> conditions,
                                              std::size_t n_tasks_per_cell) {
  cfg.validate();
  std::vector<Benchmark> benches;
  for (auto b : kAllBenchmarks)
    if (std::any_of(cfg.tasks.begin(), cfg.tasks.end(), [&](const SimTask& t) { return t.benchmark == b; }))
      benches.push_back(b);
  std::vector<TaskRecord> out;
  for (const auto& orch : cfg.pool) {
    SimConfig local = cfg;
    local.orchestrator = orch;
    for (auto b : benches) {
      std::vector<const SimTask*> tasks;
      for (const auto& t : cfg.tasks)
        if (t.benchmark == b && tasks.size() < n_tasks_per_cell) tasks.push_back(&t);
      if (tasks.size() < n_tasks_per_cell)
        throw std::invalid_argument(fmt::format("only {} {} tasks for {} requested per cell", tasks.size(),
                                                to_string(b), n_tasks_per_cell));
      for (const auto& [cond, policy] : conditions)
        for (const auto* t : tasks) out.push_back(simulate_task(local, *t, policy, cond));
    }
  }
  return out;
}

/// Profiling run: every pool member solves `tasks` alone under blind.
inline std::vector<TaskRecord> simulate_stage1(const SimConfig& cfg, std::span<const SimTask> tasks) {
  std::vector<TaskRecord> out;
  for (const auto& peer : cfg.pool) {
    SimConfig local = cfg;
    local.orchestrator = peer;
    for (const auto& t : tasks) out.push_back(simulate_task(local, t, Policy::no_delegate(), Condition::blind));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixtures

/// A deterministic pool with two models per vendor (the last one may be a
/// singleton) and distinct pass rates in every skill column.
inline std::vector<SyntheticPeer> default_pool(std::size_t n) {
  std::vector<SyntheticPeer> pool;
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticPeer p;
    p.name = fmt::format("model-{:02}", i);
    p.vendor = fmt::format("vendor-{}", i / 2);
    p.tier = i % 3 == 0 ? Tier::frontier : (i % 3 == 1 ? Tier::strong_mid : Tier::small);
    for (auto s : kAllSkills) {
      // Quasi-random Weyl sequence: distinct values per column for n < 1000.
      const double u = std::fmod(0.5 + 0.6180339887498949 * static_cast<double>(i + 1) +
                                     0.41421356237309515 * static_cast<double>(skill_index(s)),
                                 1.0);
      p.skill_pass[skill_index(s)] = 0.15 + 0.8 * u;
    }
    p.cost_mean = 0.02 + 0.01 * static_cast<double>(i % 5);
    p.cost_spread = 0.005;
    p.latency_mean = 40.0 + 5.0 * static_cast<double>(i % 4);
    p.latency_spread = 8.0;
    pool.push_back(std::move(p));
  }
  return pool;
}

inline std::vector<SkillId> reachable_skills(Benchmark b) {
  std::vector<SkillId> out;
  for (auto s : kAllSkills)
    if (skill_reachable(s, b)) out.push_back(s);
  return out;
}

/// n tasks per benchmark with canonical ids and skills drawn from those the
/// benchmark can exhibit. tau_bench alternates airline/retail shards.
inline std::vector<SimTask> make_task_suite(std::span<const Benchmark> benchmarks, std::size_t n_per_benchmark,
                                            std::uint64_t seed) {
  std::vector<SimTask> out;
  for (auto b : benchmarks) {
    Rng rng(substream_seed(seed, std::string("suite/") + std::string(to_string(b))));
    const auto skills = reachable_skills(b);
    for (std::size_t i = 0; i < n_per_benchmark; ++i) {
      SimTask t;
      t.benchmark = b;
      t.dominant_skill = skills[rng.below(skills.size())];
      switch (b) {
        case Benchmark::gaia: t.task_id = fmt::format("gaia-{:04}", i); break;
        case Benchmark::bfcl: t.task_id = fmt::format("multi_turn_base_{}", i); break;
        case Benchmark::tau_bench:
          t.shard = i % 2 == 0 ? "airline" : "retail";
          t.task_id = canonical_task_id(b, t.shard, fmt::format("task-{}", i / 2));
          break;
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace decisionbench::sim
