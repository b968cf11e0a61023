#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "decisionbench/trace_model.hpp"

namespace testsupport {

using namespace decisionbench;

inline StepEvent assistant_text(std::int64_t index, std::string text, std::optional<std::int64_t> prompt = std::nullopt) {
  StepEvent s;
  s.index = index;
  s.role = Role::assistant;
  s.text = std::move(text);
  s.prompt_tokens = prompt;
  s.finish_reason = "stop";
  return s;
}

inline StepEvent assistant_tool(std::int64_t index, std::string name, std::string args = "{}") {
  StepEvent s;
  s.index = index;
  s.role = Role::assistant;
  s.tool_calls.push_back({std::move(name), std::move(args)});
  s.finish_reason = "tool_calls";
  return s;
}

inline StepEvent tool_result(std::int64_t index, std::string text = "ok") {
  StepEvent s;
  s.index = index;
  s.role = Role::tool_result;
  s.text = std::move(text);
  return s;
}

inline StepEvent delegate(std::int64_t index, std::string_view peer) {
  return assistant_tool(index, std::string(kCallModelTool), call_model_args(peer, "sub", 0.1));
}

inline TaskRecord record(std::string task_id, std::string agent, Benchmark b = Benchmark::gaia,
                         Condition c = Condition::blind, double q = 1.0, std::vector<StepEvent> steps = {}) {
  TaskRecord r;
  r.task_id = std::move(task_id);
  r.benchmark = b;
  if (b == Benchmark::tau_bench) r.shard = "airline";
  r.agent = std::move(agent);
  r.condition = c;
  r.quality = q;
  r.cost_usd = 0.1;
  r.latency_s = 10.0;
  r.steps = std::move(steps);
  return r;
}

inline PoolRegistry small_registry() {
  return PoolRegistry({{"a1", "va", Tier::frontier}, {"a2", "va", Tier::small}, {"b1", "vb", Tier::strong_mid}});
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("decisionbench-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
