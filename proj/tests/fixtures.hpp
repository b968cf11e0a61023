#pragma once

#include "decisionbench/profiles.hpp"

namespace testsupport {

using namespace decisionbench;

inline SkillStats fixture_skill(std::string model, SkillId skill, std::size_t n, std::size_t passes, double cost_per_task,
                                double steps, double out_tokens, PercentileRank rank) {
  SkillStats s;
  s.model = std::move(model);
  s.skill = skill;
  s.n_tasks = n;
  s.passes = passes;
  s.pass_rate = static_cast<double>(passes) / static_cast<double>(n);
  s.mean_steps = steps;
  s.mean_output_tokens = out_tokens;
  s.mean_latency_s = 20.0;
  s.cost_per_task = cost_per_task;
  s.total_cost = cost_per_task * static_cast<double>(n);
  if (passes > 0) s.cost_per_success = s.total_cost / static_cast<double>(passes);
  s.percentile_rank = rank;
  return s;
}

/// Stage-1 statistics for a six-skill claude-opus-4.7 C2 card.
inline PoolStats opus_card_fixture() {
  const std::string m = "claude-opus-4.7";
  PoolStats pool;
  pool.tagger_version = "v2.0-2026-05-01";
  pool.models[m] = {105, {Benchmark::bfcl, Benchmark::gaia, Benchmark::tau_bench}};
  auto add = [&](SkillStats s) { pool.stats.emplace(std::pair{s.model, s.skill}, s); };
  add(fixture_skill(m, SkillId::domain_policy_compliance, 11, 9, 0.069 * 9 / 11, 1.2, 256, {2, 10}));
  add(fixture_skill(m, SkillId::numerical_computation, 34, 27, 0.163 * 27 / 34, 2.1, 388, {3, 11}));
  add(fixture_skill(m, SkillId::tool_schema_adherence, 52, 41, 0.050, 4.4, 310, {5, 11}));
  add(fixture_skill(m, SkillId::long_input_handling, 22, 12, 1.962 * 12 / 22, 2.9, 712, {2, 8}));
  add(fixture_skill(m, SkillId::information_retrieval, 46, 35, 0.142, 3.7, 453, {4, 11}));
  add(fixture_skill(m, SkillId::multi_turn_state_tracking, 73, 57, 0.258, 8.3, 504, {5, 11}));
  return pool;
}

}  // namespace testsupport
