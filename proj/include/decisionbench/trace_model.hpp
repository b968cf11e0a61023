#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "decisionbench/io.hpp"
#include "decisionbench/rng.hpp"

namespace decisionbench {

using ordered_json = nlohmann::ordered_json;

/// Maximum number of peer calls a single task may issue.
inline constexpr int kDelegationCap = 10;

inline constexpr std::string_view kCallModelTool = "call_model";
inline constexpr std::string_view kReadProfileTool = "read_profile";

// ---------------------------------------------------------------------------
// Enumerations

enum class Benchmark { gaia, tau_bench, bfcl };
inline constexpr std::array kAllBenchmarks{Benchmark::gaia, Benchmark::tau_bench, Benchmark::bfcl};

enum class Condition { blind, aware_c1, aware_c2, aware_c3, aware_tool_only };
inline constexpr std::array kAllConditions{Condition::blind, Condition::aware_c1, Condition::aware_c2,
                                           Condition::aware_c3, Condition::aware_tool_only};

enum class Tier { frontier, strong_mid, small };

enum class Role { assistant, user, tool_result };

inline std::string_view to_string(Benchmark b) {
  switch (b) {
    case Benchmark::gaia: return "gaia";
    case Benchmark::tau_bench: return "tau_bench";
    case Benchmark::bfcl: return "bfcl";
  }
  return "?";
}

inline std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::blind: return "blind";
    case Condition::aware_c1: return "aware_c1";
    case Condition::aware_c2: return "aware_c2";
    case Condition::aware_c3: return "aware_c3";
    case Condition::aware_tool_only: return "aware_tool_only";
  }
  return "?";
}

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::frontier: return "frontier";
    case Tier::strong_mid: return "strong_mid";
    case Tier::small: return "small";
  }
  return "?";
}

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::assistant: return "assistant";
    case Role::user: return "user";
    case Role::tool_result: return "tool_result";
  }
  return "?";
}

inline std::optional<Benchmark> parse_benchmark(std::string_view s) {
  for (auto b : kAllBenchmarks)
    if (to_string(b) == s) return b;
  return std::nullopt;
}

inline std::optional<Condition> parse_condition(std::string_view s) {
  for (auto c : kAllConditions)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline std::optional<Tier> parse_tier(std::string_view s) {
  for (auto t : {Tier::frontier, Tier::strong_mid, Tier::small})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

inline std::optional<Role> parse_role(std::string_view s) {
  for (auto r : {Role::assistant, Role::user, Role::tool_result})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pool registry

struct PoolEntry {
  std::string model_name;
  std::string vendor;
  Tier tier = Tier::small;

  bool operator==(const PoolEntry&) const = default;
};

class PoolRegistry {
 public:
  PoolRegistry() = default;

  explicit PoolRegistry(std::vector<PoolEntry> entries) : entries_(std::move(entries)) {
    if (entries_.size() < 2) throw std::invalid_argument("pool registry needs at least 2 models");
    std::set<std::string> seen;
    for (const auto& e : entries_) {
      if (e.model_name.empty()) throw std::invalid_argument("pool entry with empty model name");
      if (e.vendor.empty()) throw std::invalid_argument("pool entry " + e.model_name + " has no vendor");
      if (!seen.insert(e.model_name).second)
        throw std::invalid_argument("duplicate pool model " + e.model_name);
    }
  }

  const std::vector<PoolEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const PoolEntry* find(std::string_view model) const {
    for (const auto& e : entries_)
      if (e.model_name == model) return &e;
    return nullptr;
  }

  bool contains(std::string_view model) const { return find(model) != nullptr; }

  std::optional<std::string> vendor_of(std::string_view model) const {
    if (const auto* e = find(model)) return e->vendor;
    return std::nullopt;
  }

  std::size_t vendor_size(std::string_view vendor) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const PoolEntry& e) { return e.vendor == vendor; }));
  }

  ordered_json to_json() const {
    ordered_json arr = ordered_json::array();
    for (const auto& e : entries_)
      arr.push_back({{"model_name", e.model_name}, {"vendor", e.vendor}, {"tier", to_string(e.tier)}});
    return ordered_json{{"entries", arr}};
  }

  static PoolRegistry from_json(const ordered_json& j) {
    std::vector<PoolEntry> entries;
    for (const auto& e : j.at("entries")) {
      auto tier = parse_tier(e.at("tier").get<std::string>());
      if (!tier) throw std::invalid_argument("unknown tier " + e.at("tier").get<std::string>());
      entries.push_back({e.at("model_name").get<std::string>(), e.at("vendor").get<std::string>(), *tier});
    }
    return PoolRegistry(std::move(entries));
  }

 private:
  std::vector<PoolEntry> entries_;
};

// ---------------------------------------------------------------------------
// Records

struct ToolCall {
  std::string name;
  std::string args_text;

  bool operator==(const ToolCall&) const = default;
};

struct StepEvent {
  std::int64_t index = 0;
  Role role = Role::assistant;
  std::string text;
  std::vector<ToolCall> tool_calls;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
  std::string finish_reason;

  bool operator==(const StepEvent&) const = default;
};

/// Identity of one evaluation unit: (agent, benchmark, condition).
struct CellKey {
  std::string agent;
  Benchmark benchmark = Benchmark::gaia;
  Condition condition = Condition::blind;

  auto operator<=>(const CellKey&) const = default;
  bool operator==(const CellKey&) const = default;

  std::string str() const {
    return agent + "/" + std::string(to_string(benchmark)) + "/" + std::string(to_string(condition));
  }
};

struct TaskRecord {
  std::string task_id;
  Benchmark benchmark = Benchmark::gaia;
  std::optional<std::string> shard;
  std::string agent;
  Condition condition = Condition::blind;
  double quality = 0.0;
  double cost_usd = 0.0;
  double latency_s = 0.0;
  std::vector<StepEvent> steps;
  // Fields not in the schema, kept verbatim so re-emission is lossless.
  ordered_json extras = ordered_json::object();

  CellKey cell() const { return {agent, benchmark, condition}; }

  bool operator==(const TaskRecord&) const = default;
};

struct Delegation {
  CellKey cell;
  std::string task_id;
  std::int64_t step_index = 0;
  std::string peer;
  std::string subtask;
  double budget_usd = 0.0;
  bool well_formed = true;

  bool operator==(const Delegation&) const = default;
};

// ---------------------------------------------------------------------------
// Identity

/// tau_bench ids are prefixed by their environment shard so that
/// "airline:task-0" and "retail:task-0" stay distinct.
inline std::string canonical_task_id(Benchmark benchmark, const std::optional<std::string>& shard,
                                     std::string_view raw_id) {
  if (benchmark == Benchmark::tau_bench) {
    if (!shard || shard->empty()) throw std::invalid_argument("tau_bench task requires a shard");
    return *shard + ":" + std::string(raw_id);
  }
  return std::string(raw_id);
}

// ---------------------------------------------------------------------------
// Serialization

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateKeyError : public std::runtime_error {
 public:
  DuplicateKeyError(std::size_t line, std::string key)
      : std::runtime_error("line " + std::to_string(line) + ": duplicate record key " + key), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline ordered_json to_json(const StepEvent& s) {
  ordered_json j;
  j["index"] = s.index;
  j["role"] = to_string(s.role);
  j["text"] = s.text;
  ordered_json calls = ordered_json::array();
  for (const auto& c : s.tool_calls) calls.push_back({{"name", c.name}, {"args_text", c.args_text}});
  j["tool_calls"] = std::move(calls);
  if (s.prompt_tokens) j["prompt_tokens"] = *s.prompt_tokens;
  if (s.completion_tokens) j["completion_tokens"] = *s.completion_tokens;
  j["finish_reason"] = s.finish_reason;
  return j;
}

inline ordered_json to_json(const TaskRecord& r) {
  ordered_json j;
  j["task_id"] = r.task_id;
  j["benchmark"] = to_string(r.benchmark);
  if (r.shard) j["shard"] = *r.shard;
  j["agent"] = r.agent;
  j["condition"] = to_string(r.condition);
  j["quality"] = r.quality;
  j["cost_usd"] = r.cost_usd;
  j["latency_s"] = r.latency_s;
  ordered_json steps = ordered_json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  j["steps"] = std::move(steps);
  for (const auto& [k, v] : r.extras.items()) j[k] = v;
  return j;
}

namespace detail {

inline const std::set<std::string, std::less<>>& known_record_fields() {
  static const std::set<std::string, std::less<>> f{"task_id", "benchmark", "shard",     "agent", "condition",
                                                    "quality", "cost_usd",  "latency_s", "steps"};
  return f;
}

inline std::optional<std::int64_t> optional_count(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::int64_t>();
}

}  // namespace detail

inline StepEvent step_from_json(const ordered_json& j) {
  StepEvent s;
  s.index = j.at("index").get<std::int64_t>();
  const auto role = parse_role(j.at("role").get<std::string>());
  if (!role) throw std::invalid_argument("unknown role " + j.at("role").get<std::string>());
  s.role = *role;
  s.text = j.value("text", std::string{});
  if (auto it = j.find("tool_calls"); it != j.end() && !it->is_null())
    for (const auto& c : *it) s.tool_calls.push_back({c.at("name").get<std::string>(), c.value("args_text", std::string{})});
  s.prompt_tokens = detail::optional_count(j, "prompt_tokens");
  s.completion_tokens = detail::optional_count(j, "completion_tokens");
  s.finish_reason = j.value("finish_reason", std::string{});
  return s;
}

inline TaskRecord record_from_json(const ordered_json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
  TaskRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  const auto bench = parse_benchmark(j.at("benchmark").get<std::string>());
  if (!bench) throw std::invalid_argument("unknown benchmark " + j.at("benchmark").get<std::string>());
  r.benchmark = *bench;
  if (auto it = j.find("shard"); it != j.end() && !it->is_null()) r.shard = it->get<std::string>();
  r.agent = j.at("agent").get<std::string>();
  const auto cond = parse_condition(j.at("condition").get<std::string>());
  if (!cond) throw std::invalid_argument("unknown condition " + j.at("condition").get<std::string>());
  r.condition = *cond;
  r.quality = j.at("quality").get<double>();
  r.cost_usd = j.at("cost_usd").get<double>();
  r.latency_s = j.at("latency_s").get<double>();
  for (const auto& s : j.at("steps")) r.steps.push_back(step_from_json(s));
  for (const auto& [k, v] : j.items())
    if (!detail::known_record_fields().contains(k)) r.extras[k] = v;
  return r;
}

/// Canonical single-line serialization (no trailing newline).
inline std::string emit_record(const TaskRecord& r) { return to_json(r).dump(); }

inline std::string emit_records(std::span<const TaskRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += emit_record(r);
    out += '\n';
  }
  return out;
}

inline std::string record_key(const TaskRecord& r) { return r.cell().str() + "/" + r.task_id; }

/// Parses decompressed JSON-lines text. Blank lines are skipped.
inline std::vector<TaskRecord> parse_records(std::string_view text) {
  std::vector<TaskRecord> out;
  std::set<std::string> keys;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    TaskRecord r;
    try {
      r = record_from_json(ordered_json::parse(line));
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
    auto key = record_key(r);
    if (!keys.insert(key).second) throw DuplicateKeyError(line_no, key);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<TaskRecord> read_records(const std::filesystem::path& path) {
  return parse_records(io::read_maybe_gz(path));
}

inline void write_records(const std::filesystem::path& path, std::span<const TaskRecord> records) {
  io::write_gz(path, emit_records(records));
}

// ---------------------------------------------------------------------------
// Delegations

inline bool is_infra_tool(std::string_view name) { return name == kCallModelTool || name == kReadProfileTool; }

/// Delegations are not stored; they are read off call_model tool calls.
inline std::vector<Delegation> extract_delegations(const TaskRecord& r) {
  std::vector<Delegation> out;
  for (const auto& step : r.steps) {
    if (step.role != Role::assistant) continue;
    for (const auto& call : step.tool_calls) {
      if (call.name != kCallModelTool) continue;
      Delegation d;
      d.cell = r.cell();
      d.task_id = r.task_id;
      d.step_index = step.index;
      try {
        const auto args = ordered_json::parse(call.args_text);
        if (auto it = args.find("model"); it != args.end() && it->is_string())
          d.peer = it->get<std::string>();
        else if (auto nit = args.find("name"); nit != args.end() && nit->is_string())
          d.peer = nit->get<std::string>();
        if (auto it = args.find("subtask"); it != args.end() && it->is_string()) d.subtask = it->get<std::string>();
        if (auto it = args.find("budget_usd"); it != args.end() && it->is_number()) d.budget_usd = it->get<double>();
        d.well_formed = !d.peer.empty() && d.budget_usd >= 0.0;
      } catch (const nlohmann::json::exception&) {
        d.well_formed = false;
      }
      out.push_back(std::move(d));
    }
  }
  return out;
}

inline std::string call_model_args(std::string_view peer, std::string_view subtask, double budget_usd) {
  ordered_json j{{"model", peer}, {"subtask", subtask}, {"budget_usd", budget_usd}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string cell;
  std::string task_id;
  std::string message;

  bool operator==(const Violation&) const = default;
};

inline std::vector<Violation> validate_record(const TaskRecord& r, const PoolRegistry& pool) {
  std::vector<Violation> v;
  auto flag = [&](std::string msg) { v.push_back({r.cell().str(), r.task_id, std::move(msg)}); };

  if (r.task_id.empty()) flag("empty task_id");
  if (!(r.quality >= 0.0 && r.quality <= 1.0)) flag("quality out of [0,1]");
  if (!(r.cost_usd >= 0.0)) flag("negative cost");
  if (!(r.latency_s >= 0.0)) flag("negative latency");
  if (r.benchmark == Benchmark::tau_bench) {
    if (!r.shard || r.shard->empty())
      flag("missing shard for tau_bench");
    else if (!r.task_id.starts_with(*r.shard + ":"))
      flag("task_id not prefixed by shard");
  } else if (r.shard) {
    flag("shard present on non-tau_bench record");
  }
  if (!pool.empty() && !pool.contains(r.agent)) flag("agent not in pool: " + r.agent);

  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& s = r.steps[i];
    if (i > 0 && s.index <= r.steps[i - 1].index) flag("step indices not strictly increasing at " + std::to_string(s.index));
    if (s.role != Role::assistant && !s.tool_calls.empty())
      flag("non-assistant step carries tool calls at " + std::to_string(s.index));
    for (const auto& c : s.tool_calls)
      if (c.name.empty()) flag("empty tool name at step " + std::to_string(s.index));
    if ((s.prompt_tokens && *s.prompt_tokens < 0) || (s.completion_tokens && *s.completion_tokens < 0))
      flag("negative token count at step " + std::to_string(s.index));
  }

  const auto delegations = extract_delegations(r);
  if (delegations.size() > static_cast<std::size_t>(kDelegationCap))
    flag("delegation cap exceeded: " + std::to_string(delegations.size()) + " > " + std::to_string(kDelegationCap));
  for (const auto& d : delegations) {
    if (!d.well_formed) {
      flag("malformed call_model arguments at step " + std::to_string(d.step_index));
      continue;
    }
    if (!pool.contains(d.peer))
      flag("unknown peer: " + d.peer);
    else if (d.peer == r.agent)
      flag("self-delegation to " + d.peer);
  }
  return v;
}

inline std::string format_violation(const Violation& v) { return v.cell + "\t" + v.task_id + "\t" + v.message; }

// ---------------------------------------------------------------------------
// Stage-1 / Stage-2 split

struct SplitSpec {
  double fraction = 0.2;
  std::uint64_t seed = 10;
  std::function<std::string(const std::string&)> stratum_of = [](const std::string&) { return std::string{}; };
};

struct SplitResult {
  std::set<std::string> stage1;
  std::set<std::string> stage2;

  bool operator==(const SplitResult&) const = default;
};

inline std::size_t stage1_quota(double fraction, std::size_t n) {
  // The epsilon absorbs representation error in products like 0.2 * 35.
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

/// Within each stratum: sort ids, Fisher-Yates permute with a generator
/// seeded once from spec.seed (strata visited in label order), and take the
/// first ceil(fraction * n) as Stage-1.
inline SplitResult stratified_split(std::span<const std::string> task_ids, const SplitSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction < 1.0)) throw std::invalid_argument("split fraction must be in (0,1)");
  std::map<std::string, std::set<std::string>> strata;
  for (const auto& id : task_ids) strata[spec.stratum_of(id)].insert(id);

  SplitResult out;
  Rng rng(spec.seed);
  for (const auto& [label, ids] : strata) {
    std::vector<std::string> order(ids.begin(), ids.end());
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto quota = stage1_quota(spec.fraction, order.size());
    for (std::size_t i = 0; i < order.size(); ++i) (i < quota ? out.stage1 : out.stage2).insert(order[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset helpers

inline std::map<CellKey, std::vector<const TaskRecord*>> group_by_cell(std::span<const TaskRecord> records) {
  std::map<CellKey, std::vector<const TaskRecord*>> out;
  for (const auto& r : records) out[r.cell()].push_back(&r);
  return out;
}

}  // namespace decisionbench
