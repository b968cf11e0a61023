#include "cli_app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "decisionbench/io.hpp"
#include "decisionbench/metrics.hpp"
#include "decisionbench/profiles.hpp"
#include "decisionbench/rng.hpp"
#include "decisionbench/simulator.hpp"
#include "decisionbench/stats.hpp"
#include "decisionbench/tagger.hpp"
#include "decisionbench/trace_model.hpp"

namespace decisionbench::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string out_dir = "out";
  std::string records, stage1, pool, labels;
  std::uint64_t seed = 10;
  std::size_t n_boot = 5000;
  std::size_t k = 1;
  double realization_rate = 1.0;
  double cost_ref_multiplier = 1.05;
  unsigned threads = 1;
  std::string timestamp;

  std::string cells = "2x1x2";
  std::size_t tasks = 20;
  std::size_t pool_size = 5;
  double propensity = 1.0;
  double fraction = 0.2;
  std::string which = "all";
};

struct Paths {
  fs::path out, records, stage1, pool;
  std::optional<fs::path> labels;
};

Paths resolve(const Options& o) {
  Paths p;
  p.out = o.out_dir;
  p.records = o.records.empty() ? p.out / "records.jsonl.gz" : fs::path(o.records);
  p.stage1 = o.stage1.empty() ? p.out / "stage1.jsonl.gz" : fs::path(o.stage1);
  p.pool = o.pool.empty() ? p.out / "pool.json" : fs::path(o.pool);
  if (!o.labels.empty()) p.labels = fs::path(o.labels);
  return p;
}

void check_flags(const Options& o) {
  if (o.n_boot < 100) throw UsageError("--n-boot must be at least 100");
  if (o.k < 1) throw UsageError("--k must be at least 1");
  if (!(o.realization_rate > 0.0 && o.realization_rate <= 1.0)) throw UsageError("--realization-rate must be in (0,1]");
  if (!(o.cost_ref_multiplier >= 1.0)) throw UsageError("--cost-ref-multiplier must be >= 1");
  if (!(o.fraction > 0.0 && o.fraction < 1.0)) throw UsageError("--fraction must be in (0,1)");
  if (!(o.propensity >= 0.0 && o.propensity <= 1.0)) throw UsageError("--propensity must be in [0,1]");
}

// ---------------------------------------------------------------------------
// Manifest

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

ordered_json file_digest(const fs::path& p) {
  if (!fs::exists(p)) return nullptr;
  return "fnv1a64:" + hex64(fnv1a64(io::read_text(p)));
}

// Paths and the timestamp stay out of the hashed config so that identical
// inputs in different directories give identical artifacts.
ordered_json config_json(const Options& o, const Paths& p) {
  ordered_json inputs = ordered_json::object();
  inputs["records"] = file_digest(p.records);
  inputs["stage1"] = file_digest(p.stage1);
  inputs["pool"] = file_digest(p.pool);
  inputs["labels"] = p.labels ? file_digest(*p.labels) : ordered_json(nullptr);
  return ordered_json{{"tagger_version", TaggerConfig{}.version},
                      {"seed", o.seed},
                      {"n_boot", o.n_boot},
                      {"k", o.k},
                      {"realization_rate", o.realization_rate},
                      {"cost_ref_multiplier", o.cost_ref_multiplier},
                      {"inputs", inputs}};
}

std::string config_hash(const Options& o, const Paths& p) { return hex64(fnv1a64(config_json(o, p).dump())); }

std::string relative_to(const fs::path& p, const fs::path& base) {
  return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
}

std::string write_manifest(std::string_view command, const Options& o, const Paths& p) {
  ordered_json inputs = ordered_json::array();
  auto add = [&](const char* role, const fs::path& path) {
    if (fs::exists(path)) inputs.push_back({{"role", role}, {"path", relative_to(path, p.out)}, {"digest", file_digest(path)}});
  };
  add("records", p.records);
  add("stage1", p.stage1);
  add("pool", p.pool);
  if (p.labels) add("labels", *p.labels);
  std::string ts = o.timestamp;
  if (ts.empty())
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) ts = env;
  const auto hash = config_hash(o, p);
  ordered_json m{{"command", command},
                 {"config_hash", hash},
                 {"tagger_version", TaggerConfig{}.version},
                 {"config", config_json(o, p)},
                 {"inputs", inputs},
                 {"output_directory", "."},
                 {"timestamp", ts.empty() ? ordered_json(nullptr) : ordered_json(ts)}};
  io::write_text(p.out / "manifests" / (std::string(command) + ".json"), m.dump(2) + "\n");
  return hash;
}

std::string manifest_row(const std::string& hash) { return "# manifest: " + hash + "\n"; }

void write_artifact(const fs::path& path, const std::string& hash, const std::string& body) {
  io::write_text(path, manifest_row(hash) + body);
}

// ---------------------------------------------------------------------------
// Formatting

std::string num(double x) { return fmt::format("{:.6f}", x); }
std::string num(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string safe_filename(std::string_view s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

// ---------------------------------------------------------------------------
// Inputs

std::vector<TaskRecord> load_records(const fs::path& path, std::string_view flag) {
  if (!fs::exists(path)) throw UsageError(fmt::format("{} file not found: {}", flag, path.string()));
  try {
    return read_records(path);
  } catch (const ParseError& e) {
    throw ValidationFailure(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const DuplicateKeyError& e) {
    throw ValidationFailure(fmt::format("{}: {}", path.string(), e.what()));
  }
}

PoolRegistry load_pool(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("--pool file not found: " + path.string());
  try {
    return PoolRegistry::from_json(ordered_json::parse(io::read_text(path)));
  } catch (const std::exception& e) {
    throw ValidationFailure(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::string> load_labels(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("--labels file not found: " + path.string());
  std::vector<std::string> out;
  const auto text = io::read_text(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() != '#') out.push_back(line);
    pos = end + 1;
  }
  return out;
}

std::vector<TaskRecord> filter_condition(std::span<const TaskRecord> records, Condition c) {
  std::vector<TaskRecord> out;
  for (const auto& r : records)
    if (r.condition == c) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// simulate

sim::Policy policy_for(Condition c) {
  switch (c) {
    case Condition::blind: return sim::Policy::blind_uniform();
    case Condition::aware_c1: return sim::Policy::epsilon_noisy(0.5);
    case Condition::aware_c2: return sim::Policy::oracle_top1();
    case Condition::aware_c3: return sim::Policy::epsilon_noisy(0.25);
    case Condition::aware_tool_only: return sim::Policy::epsilon_noisy(0.75);
  }
  return sim::Policy::no_delegate();
}

int cmd_simulate(const Options& o, const Paths& p, std::ostream& out) {
  static const std::regex cells_re(R"((\d+)x(\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(o.cells, m, cells_re)) throw UsageError("--cells must look like AxBxC, e.g. 2x1x2");
  const auto n_agents = std::stoul(m[1]), n_bench = std::stoul(m[2]), n_cond = std::stoul(m[3]);
  if (n_agents < 1 || n_bench < 1 || n_bench > kAllBenchmarks.size() || n_cond < 1 || n_cond > kAllConditions.size())
    throw UsageError(fmt::format("--cells: need 1..N agents, 1..{} benchmarks, 1..{} conditions", kAllBenchmarks.size(),
                                 kAllConditions.size()));
  if (o.tasks < 1) throw UsageError("--tasks must be at least 1");

  const auto pool = sim::default_pool(std::max<std::size_t>({o.pool_size, n_agents, 2}));
  const std::vector<Benchmark> benches(kAllBenchmarks.begin(), kAllBenchmarks.begin() + static_cast<long>(n_bench));

  // Enough tasks per benchmark that Stage-2 still holds --tasks of them.
  std::size_t n_total = o.tasks;
  while (n_total - stage1_quota(o.fraction, n_total) < o.tasks) ++n_total;
  const auto suite = sim::make_task_suite(benches, n_total, o.seed);

  std::map<std::string, std::string> stratum;
  std::vector<std::string> ids;
  for (const auto& t : suite) {
    stratum[t.task_id] = std::string(to_string(t.benchmark));
    ids.push_back(t.task_id);
  }
  const auto split = stratified_split(ids, {o.fraction, o.seed, [&](const std::string& id) { return stratum.at(id); }});
  std::vector<sim::SimTask> stage1_tasks, stage2_tasks;
  for (const auto& t : suite) (split.stage1.contains(t.task_id) ? stage1_tasks : stage2_tasks).push_back(t);

  sim::SimConfig cfg;
  cfg.seed = o.seed;
  cfg.pool = pool;
  cfg.orchestrator = pool.front();
  cfg.tasks = stage2_tasks;
  cfg.delegation_propensity = o.propensity;

  std::vector<TaskRecord> records;
  for (std::size_t a = 0; a < n_agents; ++a) {
    sim::SimConfig local = cfg;
    local.orchestrator = pool[a];
    for (auto b : benches)
      for (std::size_t c = 0; c < n_cond; ++c) {
        const auto cond = kAllConditions[c];
        std::size_t used = 0;
        for (const auto& t : stage2_tasks)
          if (t.benchmark == b && used < o.tasks) {
            records.push_back(sim::simulate_task(local, t, policy_for(cond), cond));
            ++used;
          }
      }
  }
  const auto stage1 = sim::simulate_stage1(cfg, stage1_tasks);

  write_records(p.records, records);
  write_records(p.stage1, stage1);
  io::write_text(p.pool, sim::to_registry(pool).to_json().dump(2) + "\n");

  const auto hash = write_manifest("simulate", o, p);
  std::string truth = "model,vendor,skill,true_pass_rate,cost_mean,latency_mean\n";
  for (const auto& peer : pool)
    for (auto s : kAllSkills)
      truth += fmt::format("{},{},{},{},{},{}\n", csv_field(peer.name), csv_field(peer.vendor), skill_slug(s),
                           num(peer.pass(s)), num(peer.cost_mean), num(peer.latency_mean));
  write_artifact(p.out / "simulation" / "true_pass_rates.csv", hash, truth);

  out << fmt::format("simulated {} records in {} cells and {} Stage-1 records\n", records.size(),
                     n_agents * n_bench * n_cond, stage1.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ingest / tag / split

int cmd_ingest(const Options& o, const Paths& p, std::ostream& out, std::ostream& err) {
  const auto pool = load_pool(p.pool);
  if (!fs::exists(p.records)) throw UsageError("--records file not found: " + p.records.string());
  std::vector<std::string> lines;
  std::size_t n_records = 0;
  try {
    const auto records = read_records(p.records);
    n_records = records.size();
    std::set<std::string> seen;
    for (const auto& r : records) {
      for (const auto& v : validate_record(r, pool)) lines.push_back(format_violation(v));
      if (!seen.insert(record_key(r)).second) lines.push_back(format_violation({r.cell().str(), r.task_id, "duplicate record"}));
    }
  } catch (const ParseError& e) {
    lines.push_back(std::string("parse error: ") + e.what());
  } catch (const DuplicateKeyError& e) {
    lines.push_back(std::string("parse error: ") + e.what());
  } catch (const io::IoError& e) {
    throw UsageError(e.what());
  }
  const auto hash = write_manifest("ingest", o, p);
  std::string body = "cell\ttask_id\tmessage\n";
  for (const auto& l : lines) body += l + "\n";
  write_artifact(p.out / "validation.txt", hash, body);
  if (!lines.empty()) {
    err << fmt::format("{} validation problem(s); see {}\n", lines.size(), (p.out / "validation.txt").string());
    return kExitValidation;
  }
  out << fmt::format("{} records valid\n", n_records);
  return kExitOk;
}

int cmd_tag(const Options& o, const Paths& p, std::ostream& out) {
  const auto records = load_records(p.records, "--records");
  const auto& tagger = default_tagger();
  const auto version_row = "# tagger: " + tagger.config().version + "\n";
  std::string tags = version_row + "cell\ttask_id\tstep_index\trole\ttag\n";
  std::string dom = version_row + "cell\ttask_id\tdominant_skill\n";
  for (const auto& r : records) {
    const auto t = tagger.tag_trajectory(r.steps, r.benchmark);
    for (std::size_t i = 0; i < t.size(); ++i)
      tags += fmt::format("{}\t{}\t{}\t{}\t{}\n", r.cell().str(), r.task_id, r.steps[i].index, to_string(r.steps[i].role),
                          t[i].str());
    const auto d = dominant_of_tags(t);
    dom += fmt::format("{}\t{}\t{}\n", r.cell().str(), r.task_id, d ? std::string(to_string(*d)) : "none");
  }
  const auto hash = write_manifest("tag", o, p);
  write_artifact(p.out / "tags.tsv", hash, tags);
  write_artifact(p.out / "dominant_skill.tsv", hash, dom);
  out << fmt::format("tagged {} records with tagger {}\n", records.size(), tagger.config().version);
  return kExitOk;
}

std::string stratum_label(const TaskRecord& r) {
  std::string s(to_string(r.benchmark));
  if (r.benchmark == Benchmark::tau_bench && r.shard) return s + "/" + *r.shard;
  if (r.extras.contains("level")) {
    const auto& lv = r.extras["level"];
    return s + "/level-" + (lv.is_string() ? lv.get<std::string>() : lv.dump());
  }
  return s;
}

int cmd_split(const Options& o, const Paths& p, std::ostream& out) {
  const auto records = load_records(p.records, "--records");
  std::map<std::string, std::string> stratum;
  for (const auto& r : records) stratum.try_emplace(r.task_id, stratum_label(r));
  std::vector<std::string> ids;
  for (const auto& [id, s] : stratum) ids.push_back(id);
  const auto res = stratified_split(ids, {o.fraction, o.seed, [&](const std::string& id) { return stratum.at(id); }});
  std::map<std::string, std::vector<std::string>> by_stratum;
  for (const auto& [id, s] : stratum) by_stratum[s].push_back(id);
  std::string body = "stratum,task_id,stage\n";
  for (const auto& [s, members] : by_stratum)
    for (const auto& id : members) body += fmt::format("{},{},{}\n", csv_field(s), csv_field(id), res.stage1.contains(id) ? 1 : 2);
  write_artifact(p.out / "split.csv", write_manifest("split", o, p), body);
  out << fmt::format("{} Stage-1 / {} Stage-2 tasks\n", res.stage1.size(), res.stage2.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// profile

int cmd_profile_c2(const Options& o, const Paths& p, std::ostream& out) {
  const auto stage1 = load_records(p.stage1, "--stage1");
  const auto stats = compute_skill_stats(stage1);
  const auto hash = write_manifest("profile", o, p);

  const auto dir = p.out / "profile_cards" / "c2_static";
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".md") fs::remove(e.path());
  std::size_t written = 0;
  for (const auto& [model, cov] : stats.models) {
    if (cov.n_tasks == 0) continue;
    const auto card = build_c2_card(model, stats);
    // The frontmatter must open the file, so the manifest goes last.
    io::write_text(dir / (safe_filename(model) + ".md"), render_card(card) + "\n<!-- manifest: " + hash + " -->\n");
    ++written;
  }

  std::string csv = "model,skill,n,passes,pass_rate,mean_steps,mean_output_tokens,mean_latency_s,cost_per_task,cost_per_success,rank,of\n";
  for (const auto& [key, s] : stats.stats)
    csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(s.model), skill_slug(s.skill), s.n_tasks, s.passes,
                       num(s.pass_rate), num(s.mean_steps), num(s.mean_output_tokens), num(s.mean_latency_s),
                       num(s.cost_per_task), num(s.cost_per_success), s.percentile_rank.rank, s.percentile_rank.of);
  write_artifact(p.out / "profile_cards" / "skill_stats.csv", hash, csv);
  out << fmt::format("wrote {} C2 cards\n", written);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// metrics

std::string fidelity_cells(const std::optional<FidelityResult>& f, std::size_t n_delegations) {
  if (!f) return fmt::format("0,0,{},", n_delegations);
  return fmt::format("{},{},{},{}", f->hits, f->ranked, f->unranked, num(f->share));
}

int cmd_metrics(const Options& o, const Paths& p, std::ostream& out) {
  const auto& w = o.which;
  const bool all = w == "all";
  const auto records = load_records(p.records, "--records");
  const auto dir = p.out / "analysis";
  std::optional<PoolStats> stats;
  auto pool_stats = [&]() -> const PoolStats& {
    if (!stats) stats = compute_skill_stats(load_records(p.stage1, "--stage1"));
    return *stats;
  };
  if (w == "audit" && !p.labels) throw UsageError("metrics audit needs --labels");
  // Load every input before writing anything so a missing file fails cleanly.
  if (all || w == "fidelity" || w == "ceiling") pool_stats();
  std::optional<PoolRegistry> registry;
  if (all || w == "selfpref") registry = load_pool(p.pool);
  std::vector<std::string> labels;
  if (p.labels && (all || w == "audit")) labels = load_labels(*p.labels);

  const auto hash = write_manifest("metrics", o, p);
  const auto cells = rollup(records);

  if (all || w == "rollup") {
    std::string body = "cell,mean_q,mean_cost,mean_latency,p90_latency,dlg_rate,n\n";
    for (const auto& c : cells)
      body += fmt::format("{},{},{},{},{},{},{}\n", csv_field(c.cell.str()), num(c.mean_q), num(c.mean_cost),
                          num(c.mean_latency_s), num(c.p90_latency_s), num(c.delegation_rate), c.n_tasks);
    write_artifact(dir / "rollup.csv", hash, body);
  }

  if (all || w == "fidelity") {
    std::string per_cond = "condition,k,hits,ranked,unranked,fidelity\n";
    for (auto c : kAllConditions) {
      const auto sub = filter_condition(records, c);
      if (sub.empty()) continue;
      const auto n = extract_delegations(sub).size();
      per_cond += fmt::format("{},{},{}\n", to_string(c), o.k, fidelity_cells(fidelity_at_k(sub, pool_stats(), o.k), n));
    }
    write_artifact(dir / "fidelity_per_cond.csv", hash, per_cond);

    std::string by_cell = "cell,k,hits,ranked,unranked,fidelity\n";
    for (const auto& [cell, recs] : group_by_cell(records)) {
      std::vector<TaskRecord> sub;
      for (const auto* r : recs) sub.push_back(*r);
      const auto n = extract_delegations(sub).size();
      by_cell += fmt::format("{},{},{}\n", csv_field(cell.str()), o.k, fidelity_cells(fidelity_at_k(sub, pool_stats(), o.k), n));
    }
    write_artifact(dir / "delegation_fidelity_by_cell.csv", hash, by_cell);
  }

  if (all || w == "selfpref") {
    std::vector<Delegation> dels;
    for (const auto& d : extract_delegations(records))
      if (d.well_formed && registry->contains(d.peer) && registry->contains(d.cell.agent)) dels.push_back(d);
    std::string body = "orchestrator,vendor,n,same_vendor,observed_share,chance,ratio\n";
    for (const auto& s : self_preference(dels, *registry))
      body += fmt::format("{},{},{},{},{},{},{}\n", csv_field(s.orchestrator), csv_field(s.vendor), s.n, s.same_vendor,
                          num(s.observed_share), num(s.chance), num(s.ratio));
    write_artifact(dir / "vendor_self_pref.csv", hash, body);
  }

  if (all || w == "ceiling") {
    const auto blind = filter_condition(records, Condition::blind);
    std::string body = "cell,n,actual,ceiling,gap,realization_rate\n";
    for (const auto& row : counterfactual_ceiling(blind, pool_stats(), {o.realization_rate}))
      body += fmt::format("{},{},{},{},{},{}\n", csv_field(row.cell.str()), row.n_tasks, num(row.actual), num(row.ceiling),
                          num(row.gap), num(o.realization_rate));
    write_artifact(dir / "ceiling_per_agent.csv", hash, body);
  }

  if (all || w == "hv") {
    std::string body = "benchmark,condition,cost_ref,hypervolume,n_points\n";
    for (const auto& h : hypervolume_by_condition(cells, {o.cost_ref_multiplier}))
      body += fmt::format("{},{},{},{},{}\n", to_string(h.benchmark), to_string(h.condition), num(h.cost_ref), num(h.hv),
                          h.n_points);
    write_artifact(dir / "hypervolume.csv", hash, body);
  }

  if ((all && p.labels) || w == "audit") {
    const auto res = audit_cluster(labels);
    std::string body = "label,cluster,mapped_skill\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
      body += fmt::format("{},{},{}\n", csv_field(labels[i]), res.cluster_of[i],
                          res.mapped_skill[i] ? skill_slug(*res.mapped_skill[i]) : "");
    body += fmt::format("# clusters={} mapped={} coverage={}\n", res.clusters.size(), res.mapped, num(res.coverage));
    write_artifact(dir / "emergent_audit.csv", hash, body);
  }

  out << fmt::format("metrics {} over {} records in {} cells\n", w, records.size(), cells.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats

int cmd_stats(const Options& o, const Paths& p, std::ostream& out) {
  const auto records = load_records(p.records, "--records");
  const auto hash = write_manifest("stats", o, p);
  const auto dir = p.out / "stats";

  std::vector<MixedRow> rows;
  std::set<Condition> conds;
  for (const auto& r : records) {
    rows.push_back({r.quality, r.condition, r.agent + "/" + std::string(to_string(r.benchmark))});
    conds.insert(r.condition);
  }
  std::string mixed;
  if (!conds.contains(Condition::blind) || conds.size() < 2) {
    mixed = "mixed model not fitted: needs blind plus at least one other condition\n";
  } else {
    try {
      const auto fit = fit_random_intercept(rows);
      mixed = format_mixed_fit(fit);
      mixed += "\ncontrast               delta_beta       SE        z        p\n";
      for (std::size_t i = 0; i < fit.terms.size(); ++i)
        for (std::size_t j = i + 1; j < fit.terms.size(); ++j) {
          const auto c = wald_contrast(fit, fit.terms[i], fit.terms[j]);
          mixed += fmt::format("{:<22} {:>10.4f} {:>8.4f} {:>8.3f} {:>8.3f}\n",
                               fmt::format("{} - {}", to_string(fit.terms[i]), to_string(fit.terms[j])), c.delta_beta,
                               c.se, c.z, c.p);
        }
    } catch (const ConvergenceError& e) {
      mixed = fmt::format("mixed model did not converge: {}\n", e.what());
    }
  }
  write_artifact(dir / "mixedlm.txt", hash, mixed);

  const auto cells = rollup(records);
  const auto refs = cost_references(cells, {o.cost_ref_multiplier});
  std::map<std::pair<Benchmark, Condition>, std::map<std::string, const CellSummary*>> by_bc;
  for (const auto& c : cells) by_bc[{c.cell.benchmark, c.cell.condition}][c.cell.agent] = &c;

  BootstrapConfig bcfg;
  bcfg.n_boot = o.n_boot;
  bcfg.threads = o.threads;
  std::string hv = "benchmark,condition,n_agents,hv_blind,hv_condition,delta,ci_low,ci_high\n";
  for (const auto& [key, agents] : by_bc) {
    const auto [bench, cond] = key;
    if (cond == Condition::blind || !by_bc.contains({bench, Condition::blind})) continue;
    const auto& base = by_bc.at({bench, Condition::blind});
    std::vector<AgentPointPair> pairs;
    for (const auto& [agent, cs] : agents)
      if (auto it = base.find(agent); it != base.end())
        pairs.push_back({{it->second->mean_q, it->second->mean_cost, it->second->mean_latency_s, agent},
                         {cs->mean_q, cs->mean_cost, cs->mean_latency_s, agent}});
    if (pairs.empty()) continue;
    bcfg.seed = substream_seed(o.seed, fmt::format("hv_ci/{}/{}", to_string(bench), to_string(cond)));
    const auto res = paired_bootstrap_hv_diff(pairs, refs.at(bench), bcfg);
    std::vector<ParetoPoint> bp, tp;
    for (const auto& a : pairs) {
      bp.push_back(a.baseline);
      tp.push_back(a.treatment);
    }
    hv += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(bench), to_string(cond), pairs.size(),
                      num(hypervolume_2d(bp, refs.at(bench))), num(hypervolume_2d(tp, refs.at(bench))), num(res.estimate),
                      num(res.ci_low), num(res.ci_high));
  }
  write_artifact(dir / "hv_ci.csv", hash, hv);

  // Quality lift, paired on (agent, task) within each benchmark.
  std::map<std::tuple<Benchmark, Condition, std::string, std::string>, double> q;
  for (const auto& r : records) q[{r.benchmark, r.condition, r.agent, r.task_id}] = r.quality;
  std::map<std::pair<Benchmark, Condition>, std::vector<ValuePair>> lifts;
  for (const auto& [key, val] : q) {
    const auto& [bench, cond, agent, task] = key;
    if (cond == Condition::blind) continue;
    if (auto it = q.find({bench, Condition::blind, agent, task}); it != q.end()) lifts[{bench, cond}].push_back({it->second, val});
  }
  std::string qci = "benchmark,condition,n_pairs,delta,ci_low,ci_high\n";
  for (const auto& [key, pairs] : lifts) {
    bcfg.seed = substream_seed(o.seed, fmt::format("quality_ci/{}/{}", to_string(key.first), to_string(key.second)));
    const auto res = paired_bootstrap_mean_diff(pairs, bcfg);
    qci += fmt::format("{},{},{},{},{},{}\n", to_string(key.first), to_string(key.second), pairs.size(), num(res.estimate),
                       num(res.ci_low), num(res.ci_high));
  }
  write_artifact(dir / "quality_ci.csv", hash, qci);

  out << fmt::format("stats over {} records ({} bootstrap replicates)\n", records.size(), o.n_boot);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

std::optional<std::string> artifact_hash(const fs::path& path) {
  const auto text = io::read_text(path);
  static const std::string tag = "manifest: ";
  std::string_view line;
  if (path.extension() == ".md") {
    const auto start = text.rfind("<!-- manifest: ");
    if (start == std::string::npos) return std::nullopt;
    line = std::string_view(text).substr(start + 5);
  } else {
    if (!text.starts_with("# manifest: ")) return std::nullopt;
    line = std::string_view(text).substr(2);
  }
  line.remove_prefix(tag.size());
  return std::string(line.substr(0, line.find_first_of(" \n")));
}

int cmd_report(const Options& o, const Paths& p, std::ostream& out, std::ostream& err) {
  if (!fs::exists(p.out)) throw UsageError("--out-dir not found: " + p.out.string());
  const auto hash = config_hash(o, p);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p.out)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    const auto rel = relative_to(e.path(), p.out);
    if (rel == "report.txt" || rel.starts_with("manifests/") || rel.starts_with("simulation/")) continue;
    if (ext == ".csv" || ext == ".tsv" || ext == ".txt" || ext == ".md") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::string body = "artifact\tstatus\n";
  std::size_t bad = 0;
  for (const auto& f : files) {
    const auto h = artifact_hash(f);
    const bool ok = h && *h == hash;
    bad += !ok;
    body += fmt::format("{}\t{}\n", relative_to(f, p.out), ok ? "ok" : (h ? "stale manifest " + *h : "no manifest"));
  }
  write_artifact(p.out / "report.txt", hash, body);
  if (bad > 0) {
    err << fmt::format("report refused: {} artifact(s) do not match config {}\n", bad, hash);
    return kExitValidation;
  }
  out << fmt::format("{} artifacts match config {}\n", files.size(), hash);
  return kExitOk;
}

void add_common(CLI::App* sc, Options& o) {
  sc->add_option("--out-dir", o.out_dir, "Output directory");
  sc->add_option("--records", o.records, "Trace records (JSON lines, optionally gzip)");
  sc->add_option("--stage1", o.stage1, "Stage-1 profiling records");
  sc->add_option("--pool", o.pool, "Pool registry JSON");
  sc->add_option("--labels", o.labels, "Free-text skill labels, one per line");
  sc->add_option("--seed", o.seed, "Root seed for all randomness");
  sc->add_option("--n-boot", o.n_boot, "Bootstrap replicates");
  sc->add_option("--k", o.k, "Fidelity top-k");
  sc->add_option("--realization-rate", o.realization_rate, "Peer realization rate for the ceiling");
  sc->add_option("--cost-ref-multiplier", o.cost_ref_multiplier, "Hypervolume cost reference multiplier");
  sc->add_option("--threads", o.threads, "Worker threads for the bootstrap");
  sc->add_option("--timestamp", o.timestamp, "Timestamp recorded in manifests (default SOURCE_DATE_EPOCH)");
  sc->add_option("--fraction", o.fraction, "Stage-1 fraction");
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Delegation trace analysis and simulation", "decisionbench"};
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic sweep, Stage-1 run and pool");
  add_common(simulate, o);
  simulate->add_option("--cells", o.cells, "agents x benchmarks x conditions");
  simulate->add_option("--tasks", o.tasks, "Tasks per cell");
  simulate->add_option("--pool-size", o.pool_size, "Synthetic pool size");
  simulate->add_option("--propensity", o.propensity, "Probability an orchestrator delegates");

  auto* ingest = app.add_subcommand("ingest", "Parse and validate records");
  add_common(ingest, o);
  auto* tag = app.add_subcommand("tag", "Tag every step and each record's dominant skill");
  add_common(tag, o);
  auto* split = app.add_subcommand("split", "Stratified Stage-1/Stage-2 split");
  add_common(split, o);

  auto* profile = app.add_subcommand("profile", "Build profile cards");
  profile->require_subcommand(1);
  auto* build_c2 = profile->add_subcommand("build-c2", "Static trace-derived cards");
  add_common(build_c2, o);

  auto* metrics = app.add_subcommand("metrics", "Analysis tables");
  add_common(metrics, o);
  metrics->add_option("which", o.which, "rollup|fidelity|selfpref|ceiling|hv|audit|all")
      ->check(CLI::IsMember({"rollup", "fidelity", "selfpref", "ceiling", "hv", "audit", "all"}));

  auto* stats = app.add_subcommand("stats", "Mixed model and bootstrap intervals");
  add_common(stats, o);
  auto* report = app.add_subcommand("report", "Check artifact manifests against the current config");
  add_common(report, o);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    check_flags(o);
    const auto p = resolve(o);
    if (simulate->parsed()) return cmd_simulate(o, p, out);
    if (ingest->parsed()) return cmd_ingest(o, p, out, err);
    if (tag->parsed()) return cmd_tag(o, p, out);
    if (split->parsed()) return cmd_split(o, p, out);
    if (build_c2->parsed()) return cmd_profile_c2(o, p, out);
    if (metrics->parsed()) return cmd_metrics(o, p, out);
    if (stats->parsed()) return cmd_stats(o, p, out);
    if (report->parsed()) return cmd_report(o, p, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationFailure& e) {
    err << "validation failed: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace decisionbench::cli
