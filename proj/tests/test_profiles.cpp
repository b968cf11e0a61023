#include <random>

#include <gtest/gtest.h>

#include "decisionbench/profiles.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace decisionbench;
using namespace testsupport;

namespace {

TaskRecord skill_task(const std::string& id, const std::string& agent, SkillId skill, double q, double cost = 0.1) {
  std::vector<StepEvent> steps;
  Benchmark b = Benchmark::bfcl;
  switch (skill) {
    case SkillId::numerical_computation: steps = {assistant_tool(0, "calculator"), tool_result(1)}; break;
    case SkillId::information_retrieval: steps = {assistant_tool(0, "web_search"), tool_result(1)}; break;
    case SkillId::tool_schema_adherence: steps = {assistant_tool(0, "set_value"), tool_result(1)}; break;
    case SkillId::long_input_handling: steps = {assistant_text(0, "doc", 20000)}; break;
    case SkillId::multi_turn_state_tracking: steps = {assistant_text(0, "noted", 100)}; break;
    default: break;
  }
  auto r = record(id, agent, b, Condition::blind, q, steps);
  r.cost_usd = cost;
  return r;
}

PoolStats rates(const std::vector<std::pair<std::string, double>>& models, SkillId skill,
                const std::vector<double>& cps = {}) {
  PoolStats p;
  for (std::size_t i = 0; i < models.size(); ++i) {
    SkillStats s;
    s.model = models[i].first;
    s.skill = skill;
    s.n_tasks = 10;
    s.pass_rate = models[i].second;
    s.passes = static_cast<std::size_t>(s.pass_rate * 10 + 0.5);
    if (i < cps.size()) s.cost_per_success = cps[i];
    p.stats.emplace(std::pair{s.model, skill}, s);
    p.models[s.model].n_tasks = 10;
  }
  assign_percentile_ranks(p);
  return p;
}

}  // namespace

TEST(SkillStats, EmptyInputGivesEmptyMap) {
  const auto p = compute_skill_stats(std::vector<TaskRecord>{});
  EXPECT_TRUE(p.stats.empty());
}

TEST(SkillStats, SingleNumericalTask) {
  std::vector<TaskRecord> rs{skill_task("t1", "m", SkillId::numerical_computation, 1.0)};
  const auto p = compute_skill_stats(rs);
  const auto* s = p.find("m", SkillId::numerical_computation);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->n_tasks, 1u);
  EXPECT_DOUBLE_EQ(s->pass_rate, 1.0);
  EXPECT_EQ(p.tagger_version, TaggerConfig{}.version);
}

TEST(SkillStats, TwoTasksHalfPassRate) {
  std::vector<TaskRecord> rs{skill_task("t1", "m", SkillId::information_retrieval, 0.0, 0.3),
                             skill_task("t2", "m", SkillId::information_retrieval, 1.0, 0.5)};
  rs[0].steps[0].completion_tokens = 100;
  rs[1].steps[0].completion_tokens = 300;
  const auto* s = compute_skill_stats(rs).find("m", SkillId::information_retrieval);
  ASSERT_NE(s, nullptr);
  EXPECT_DOUBLE_EQ(s->pass_rate, 0.5);
  EXPECT_DOUBLE_EQ(*s->cost_per_success, 0.8);
  EXPECT_DOUBLE_EQ(s->cost_per_task, 0.4);
  EXPECT_DOUBLE_EQ(s->mean_output_tokens, 200.0);
  EXPECT_DOUBLE_EQ(s->mean_steps, 1.0);
}

TEST(SkillStats, FractionalQualityUsesHalfThreshold) {
  std::vector<TaskRecord> rs{skill_task("t1", "m", SkillId::numerical_computation, 0.5),
                             skill_task("t2", "m", SkillId::numerical_computation, 0.49)};
  const auto* s = compute_skill_stats(rs).find("m", SkillId::numerical_computation);
  EXPECT_EQ(s->passes, 1u);
}

TEST(SkillStats, NoSuccessesMeansUndefinedCostPerSuccess) {
  std::vector<TaskRecord> rs{skill_task("t1", "m", SkillId::numerical_computation, 0.0)};
  EXPECT_FALSE(compute_skill_stats(rs).find("m", SkillId::numerical_computation)->cost_per_success);
}

TEST(SkillStats, MixedConditionsRejected) {
  std::vector<TaskRecord> rs{skill_task("t1", "m", SkillId::numerical_computation, 1.0),
                             skill_task("t2", "m", SkillId::numerical_computation, 1.0)};
  rs[1].condition = Condition::aware_c2;
  EXPECT_THROW(compute_skill_stats(rs), std::invalid_argument);
}

TEST(SkillStats, PropertyCountsAndPasses) {
  std::mt19937_64 gen(11);
  const std::vector<SkillId> skills{SkillId::numerical_computation, SkillId::information_retrieval,
                                    SkillId::tool_schema_adherence, SkillId::long_input_handling,
                                    SkillId::multi_turn_state_tracking};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TaskRecord> rs;
    std::map<std::string, std::size_t> with_skill;
    for (int i = 0; i < 80; ++i) {
      const std::string m = "m" + std::to_string(gen() % 4);
      if (gen() % 5 == 0) {
        rs.push_back(record("t" + std::to_string(i), m, Benchmark::gaia));  // no graded steps
      } else {
        rs.push_back(skill_task("t" + std::to_string(i), m, skills[gen() % skills.size()], static_cast<double>(gen() % 2)));
        ++with_skill[m];
      }
    }
    const auto p = compute_skill_stats(rs);
    for (const auto& [m, cov] : p.models) {
      std::size_t sum = 0;
      for (const auto* s : p.for_model(m)) {
        sum += s->n_tasks;
        EXPECT_DOUBLE_EQ(s->pass_rate * static_cast<double>(s->n_tasks), static_cast<double>(s->passes));
        EXPECT_LE(s->percentile_rank.rank, s->percentile_rank.of);
      }
      EXPECT_EQ(sum, with_skill[m]);
    }
  }
}

TEST(PercentileRank, UniqueBestAmongTen) {
  std::vector<std::pair<std::string, double>> ms;
  for (int i = 0; i < 10; ++i) ms.push_back({"m" + std::to_string(i), 0.1 * i});
  const auto p = rates(ms, SkillId::numerical_computation);
  EXPECT_EQ(percentile_rank("m9", SkillId::numerical_computation, p), (PercentileRank{1, 10}));
}

TEST(PercentileRank, TiesShareSmallerRank) {
  const auto p = rates({{"a", 0.8}, {"b", 0.8}, {"c", 0.5}}, SkillId::numerical_computation);
  EXPECT_EQ(percentile_rank("a", SkillId::numerical_computation, p), (PercentileRank{1, 3}));
  EXPECT_EQ(percentile_rank("b", SkillId::numerical_computation, p), (PercentileRank{1, 3}));
  EXPECT_EQ(percentile_rank("c", SkillId::numerical_computation, p), (PercentileRank{3, 3}));
  EXPECT_FALSE(percentile_rank("a", SkillId::long_input_handling, p));
}

TEST(PercentileRank, OfCountsExercisersOnly) {
  std::vector<std::pair<std::string, double>> ms;
  for (int i = 0; i < 8; ++i) ms.push_back({"m" + std::to_string(i), 0.1 * i});
  auto p = rates(ms, SkillId::long_input_handling);
  for (int i = 8; i < 11; ++i) p.models["m" + std::to_string(i)].n_tasks = 5;  // no long-input tasks
  EXPECT_EQ(percentile_rank("m6", SkillId::long_input_handling, p)->of, 8u);
}

TEST(RankPeers, Examples) {
  const auto p = rates({{"A", 0.9}, {"B", 0.7}, {"C", 0.95}}, SkillId::numerical_computation);
  EXPECT_EQ(rank_peers(SkillId::numerical_computation, p, "C"), (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(rank_peers(SkillId::numerical_computation, p, "X").front(), "C");
  EXPECT_TRUE(rank_peers(SkillId::long_input_handling, p, "C").empty());
}

TEST(RankPeers, TieBrokenByCostThenName) {
  const auto p = rates({{"B", 0.8}, {"A", 0.8}, {"C", 0.8}, {"D", 0.8}}, SkillId::numerical_computation,
                       {0.10, 0.05, 0.05});
  EXPECT_EQ(rank_peers(SkillId::numerical_computation, p), (std::vector<std::string>{"A", "C", "B", "D"}));
}

TEST(RankPeers, PropertyTotalOrderWithoutExclude) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, double>> ms;
    std::vector<double> cps;
    const int n = 2 + static_cast<int>(gen() % 8);
    for (int i = 0; i < n; ++i) {
      ms.push_back({"m" + std::to_string(i), static_cast<double>(gen() % 5) / 4.0});
      cps.push_back(static_cast<double>(gen() % 3));
    }
    const auto p = rates(ms, SkillId::numerical_computation, cps);
    const std::string ex = "m" + std::to_string(gen() % n);
    const auto r = rank_peers(SkillId::numerical_computation, p, ex);
    EXPECT_EQ(r.size(), static_cast<std::size_t>(n - 1));
    EXPECT_EQ(std::count(r.begin(), r.end(), ex), 0);
    EXPECT_EQ(std::set<std::string>(r.begin(), r.end()).size(), r.size());
    for (std::size_t i = 1; i < r.size(); ++i)
      EXPECT_GE(p.find(r[i - 1], SkillId::numerical_computation)->pass_rate, p.find(r[i], SkillId::numerical_computation)->pass_rate);
  }
}

TEST(C2Card, FixtureStrengthsAndWeaknesses) {
  const auto pool = opus_card_fixture();
  const auto card = build_c2_card("claude-opus-4.7", pool);
  ASSERT_EQ(card.strengths.size(), 3u);
  EXPECT_EQ(card.strengths[0].skill, SkillId::domain_policy_compliance);
  EXPECT_EQ(card.strengths[1].skill, SkillId::numerical_computation);
  EXPECT_EQ(card.strengths[2].skill, SkillId::tool_schema_adherence);
  EXPECT_EQ(card.weaknesses[0].skill, SkillId::long_input_handling);
  EXPECT_EQ(card.weaknesses[1].skill, SkillId::information_retrieval);
  EXPECT_EQ(card.weaknesses[2].skill, SkillId::multi_turn_state_tracking);
  EXPECT_EQ(card.unexercised, (std::vector<SkillId>{SkillId::multi_step_reasoning}));
  EXPECT_NEAR(*card.strengths[0].cost_per_success, 0.069, 1e-12);
  for (const auto& s : card.strengths)
    for (const auto& w : card.weaknesses) EXPECT_NE(s.skill, w.skill);
}

TEST(C2Card, RenderedHighlights) {
  const auto text = render_card(build_c2_card("claude-opus-4.7", opus_card_fixture()));
  EXPECT_NE(text.find("- domain-policy-compliance 9/11=82% (rank 2/10, $0.069/success)"), std::string::npos);
  EXPECT_NE(text.find("- long-input-handling 12/22=55% (rank 2/8, $1.962/success)"), std::string::npos);
  EXPECT_NE(text.find("variant: c2_static"), std::string::npos);
  EXPECT_NE(text.find("| Skill | pass | n | avg steps | avg out-tok | $/task |"), std::string::npos);
  EXPECT_NE(text.find("## Skills not exercised in Stage 1\n\n- multi_step_reasoning\n"), std::string::npos);
}

TEST(C2Card, GoldenRendering) {
  const std::string golden = R"(---
model: claude-opus-4.7
variant: c2_static
tagger: v2.0-2026-05-01
n_tasks: 105
benchmarks: [bfcl, gaia, tau_bench]
---
# claude-opus-4.7: derived skill profile (C2)

Generated automatically from 105 Stage-1 tasks across 3 benchmarks via the rule-based tagger v2.0-2026-05-01. No LLM judgment.

## Strengths

- domain-policy-compliance 9/11=82% (rank 2/10, $0.069/success)
- numerical-computation 27/34=79% (rank 3/11, $0.163/success)
- tool-schema-adherence 41/52=79% (rank 5/11, $0.063/success)

## Weaknesses

- long-input-handling 12/22=55% (rank 2/8, $1.962/success)
- information-retrieval 35/46=76% (rank 4/11, $0.187/success)
- multi-turn-state-tracking 57/73=78% (rank 5/11, $0.330/success)

## All measured skills

| Skill | pass | n | avg steps | avg out-tok | $/task |
|---|---:|---:|---:|---:|---:|
| tool-schema-adherence | 79% | 52 | 4.4 | 310 | 0.050 |
| multi-turn-state-tracking | 78% | 73 | 8.3 | 504 | 0.258 |
| domain-policy-compliance | 82% | 11 | 1.2 | 256 | 0.056 |
| information-retrieval | 76% | 46 | 3.7 | 453 | 0.142 |
| numerical-computation | 79% | 34 | 2.1 | 388 | 0.129 |
| long-input-handling | 55% | 22 | 2.9 | 712 | 1.070 |

## Skills not exercised in Stage 1

- multi_step_reasoning

Recommended delegation patterns: none; C2 is metric-only.
)";
  const auto card = build_c2_card("claude-opus-4.7", opus_card_fixture());
  EXPECT_EQ(render_card(card), golden);
  EXPECT_EQ(render_card(card), render_card(build_c2_card("claude-opus-4.7", opus_card_fixture())));
}

TEST(C2Card, ThreeSkillsOverlap) {
  std::vector<TaskRecord> rs{skill_task("t1", "m", SkillId::numerical_computation, 1.0),
                             skill_task("t2", "m", SkillId::information_retrieval, 0.0),
                             skill_task("t3", "m", SkillId::tool_schema_adherence, 1.0)};
  const auto card = build_c2_card("m", compute_skill_stats(rs));
  std::set<SkillId> s, w;
  for (const auto& x : card.strengths) s.insert(x.skill);
  for (const auto& x : card.weaknesses) w.insert(x.skill);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s, w);
  EXPECT_EQ(card.weaknesses.front().skill, SkillId::information_retrieval);
  EXPECT_NE(render_card(card).find("(rank 1/1, no successes)"), std::string::npos);
}

TEST(C2Card, ErrorsForMissingModel) {
  const auto pool = opus_card_fixture();
  EXPECT_THROW(build_c2_card("nobody", pool), std::invalid_argument);
  auto p = pool;
  p.models["idle"].n_tasks = 3;  // tasks, but none with a graded skill
  EXPECT_THROW(build_c2_card("idle", p), std::invalid_argument);
  ProfileCard empty;
  EXPECT_THROW(render_card(empty), std::invalid_argument);
}

TEST(C2Card, FrontmatterRoundTrip) {
  const auto card = build_c2_card("claude-opus-4.7", opus_card_fixture());
  const auto fm = parse_frontmatter(render_card(card));
  EXPECT_EQ(fm, card.frontmatter);
  EXPECT_EQ(fm.tagger, "v2.0-2026-05-01");
  EXPECT_THROW(parse_frontmatter("no frontmatter"), FrontmatterError);
  EXPECT_THROW(parse_frontmatter("---\nmodel: x\n"), FrontmatterError);
}

TEST(C2Card, ParsesOtherVariantsFrontmatter) {
  const auto fm = parse_frontmatter("---\nmodel: m\nvariant: c3_llm_judge\ntagger: t\nn_tasks: 4\nbenchmarks: [gaia]\n---\nprose\n");
  EXPECT_EQ(fm.variant, CardVariant::c3_llm_judge);
  EXPECT_EQ(fm.benchmarks, (std::vector<std::string>{"gaia"}));
}
