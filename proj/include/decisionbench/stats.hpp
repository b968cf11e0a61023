#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "decisionbench/metrics.hpp"
#include "decisionbench/numeric.hpp"
#include "decisionbench/rng.hpp"
#include "decisionbench/trace_model.hpp"

namespace decisionbench {

// ---------------------------------------------------------------------------
// Spearman

/// Average ranks (1-based) with ties sharing the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of average ranks; undefined for a constant input.
inline std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("spearman needs equal-length inputs of size >= 2");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double mx = numeric::mean(rx), my = numeric::mean(ry);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Paired bootstrap

enum class BootstrapMethod { basic_hall_reflected };

struct BootstrapConfig {
  std::size_t n_boot = 5000;
  std::uint64_t seed = 0;
  BootstrapMethod method = BootstrapMethod::basic_hall_reflected;
  double alpha = 0.05;
  unsigned threads = 1;

  void validate() const {
    if (n_boot < 100) throw std::invalid_argument("n_boot must be >= 100");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
  }
};

struct BootstrapResult {
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Basic bootstrap over resampled units. Replicate i draws from a substream
/// keyed by (seed, i), so the result does not depend on `threads`.
template <class Unit, class Statistic>
BootstrapResult bootstrap_basic(std::span<const Unit> units, Statistic&& statistic, const BootstrapConfig& cfg) {
  cfg.validate();
  if (units.empty()) throw std::invalid_argument("bootstrap needs at least one unit");
  BootstrapResult res;
  res.estimate = statistic(units);

  std::vector<double> reps(cfg.n_boot);
  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<Unit> sample(units.size());
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng(substream_seed(cfg.seed, static_cast<std::uint64_t>(i)));
      for (auto& u : sample) u = units[rng.below(units.size())];
      reps[i] = statistic(std::span<const Unit>(sample));
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.n_boot)));
  if (threads == 1) {
    run(0, cfg.n_boot);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (cfg.n_boot + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(cfg.n_boot, b + chunk);
      if (b < e) pool.emplace_back(run, b, e);
    }
  }

  std::sort(reps.begin(), reps.end());
  const double q_lo = numeric::quantile_sorted(reps, cfg.alpha / 2.0);
  const double q_hi = numeric::quantile_sorted(reps, 1.0 - cfg.alpha / 2.0);
  res.ci_low = 2.0 * res.estimate - q_hi;
  res.ci_high = 2.0 * res.estimate - q_lo;
  return res;
}

/// (baseline, treatment) values matched on task id.
using ValuePair = std::pair<double, double>;

inline double mean_difference(std::span<const ValuePair> pairs) {
  double s = 0.0;
  for (const auto& [b, t] : pairs) s += t - b;
  return s / static_cast<double>(pairs.size());
}

/// Paired bootstrap of mean(treatment - baseline); the task pair is the
/// resampling unit. Pairs are put in canonical order first, so input order
/// never changes the result.
inline BootstrapResult paired_bootstrap_mean_diff(std::span<const ValuePair> pairs, const BootstrapConfig& cfg) {
  std::vector<ValuePair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end());
  return bootstrap_basic<ValuePair>(sorted, mean_difference, cfg);
}

/// One agent's (baseline, treatment) cell points for the HV statistic.
struct AgentPointPair {
  ParetoPoint baseline;
  ParetoPoint treatment;
};

/// Paired bootstrap of HV(treatment) - HV(baseline), resampling agents.
inline BootstrapResult paired_bootstrap_hv_diff(std::span<const AgentPointPair> agents, double cost_ref,
                                                const BootstrapConfig& cfg) {
  std::vector<AgentPointPair> sorted(agents.begin(), agents.end());
  std::sort(sorted.begin(), sorted.end(), [](const AgentPointPair& a, const AgentPointPair& b) {
    return std::tie(a.baseline.label, a.baseline.q, a.baseline.cost, a.treatment.q, a.treatment.cost) <
           std::tie(b.baseline.label, b.baseline.q, b.baseline.cost, b.treatment.q, b.treatment.cost);
  });
  auto stat = [cost_ref](std::span<const AgentPointPair> s) {
    std::vector<ParetoPoint> base, treat;
    base.reserve(s.size());
    treat.reserve(s.size());
    for (const auto& a : s) {
      base.push_back(a.baseline);
      treat.push_back(a.treatment);
    }
    return hypervolume_2d(treat, cost_ref) - hypervolume_2d(base, cost_ref);
  };
  return bootstrap_basic<AgentPointPair>(sorted, stat, cfg);
}

// ---------------------------------------------------------------------------
// Random-intercept mixed model

struct MixedRow {
  double q = 0.0;
  Condition condition = Condition::blind;
  std::string group;
};

struct MixedFitOptions {
  int max_iter = 500;
  double tol = 1e-10;  // on the variance-share bracket width
};

struct MixedFitResult {
  double intercept = 0.0;
  double intercept_se = 0.0;
  std::vector<Condition> terms;          // non-baseline conditions, enum order
  std::map<Condition, double> beta;      // effect vs blind
  std::map<Condition, double> se;
  Eigen::MatrixXd covariance;            // [intercept, terms...]
  double sigma2_u = 0.0;
  double sigma2_e = 0.0;
  double icc = 0.0;
  double loglik = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_groups = 0;
  int iterations = 0;
  std::vector<double> loglik_trace;      // best log-likelihood after each iteration

  std::optional<std::size_t> term_index(Condition c) const {
    auto it = std::find(terms.begin(), terms.end(), c);
    if (it == terms.end()) return std::nullopt;
    return static_cast<std::size_t>(it - terms.begin()) + 1;
  }
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_icc, double last_loglik, int iterations)
      : std::runtime_error(what), last_icc(last_icc), last_loglik(last_loglik), iterations(iterations) {}
  double last_icc;
  double last_loglik;
  int iterations;
};

namespace detail {

struct GroupSuff {
  double n = 0;
  Eigen::MatrixXd xx;
  Eigen::VectorXd x;
  Eigen::VectorXd xy;
  double y = 0, yy = 0;
};

struct ProfiledPoint {
  double loglik = -std::numeric_limits<double>::infinity();
  double sigma2 = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd a_inv;
};

/// ML log-likelihood profiled over beta and sigma^2 at variance ratio
/// lambda = sigma2_u / sigma2, using per-group sufficient statistics.
inline ProfiledPoint profile(const std::vector<GroupSuff>& groups, double n_obs, double lambda) {
  const auto p = groups.front().xx.rows();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  double yy = 0, logdet = 0;
  for (const auto& g : groups) {
    const double c = lambda / (1.0 + g.n * lambda);
    a += g.xx - c * g.x * g.x.transpose();
    b += g.xy - c * g.x * g.y;
    yy += g.yy - c * g.y * g.y;
    logdet += std::log1p(g.n * lambda);
  }
  ProfiledPoint out;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) return out;
  out.beta = ldlt.solve(b);
  const double rss = yy - b.dot(out.beta);
  if (!(rss > 0.0)) return out;
  out.sigma2 = rss / n_obs;
  out.a_inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  out.loglik = -0.5 * n_obs * (std::log(2.0 * std::numbers::pi) + 1.0 + std::log(out.sigma2)) - 0.5 * logdet;
  return out;
}

}  // namespace detail

/// q ~ condition + (1 | group) by maximum likelihood. The variance share
/// t = sigma2_u / (sigma2_u + sigma2) is found by golden-section search on
/// [0, 1); the t = 0 boundary is always a candidate.
inline MixedFitResult fit_random_intercept(std::span<const MixedRow> rows, const MixedFitOptions& opt = {}) {
  std::set<Condition> present;
  std::map<std::string, std::size_t> group_idx;
  for (const auto& r : rows) {
    present.insert(r.condition);
    group_idx.try_emplace(r.group, group_idx.size());
  }
  if (group_idx.size() < 2) throw std::invalid_argument("mixed model needs at least 2 groups");
  if (!present.contains(Condition::blind)) throw std::invalid_argument("mixed model needs the blind reference level");

  MixedFitResult res;
  for (auto c : kAllConditions)
    if (c != Condition::blind && present.contains(c)) res.terms.push_back(c);
  const auto p = static_cast<Eigen::Index>(res.terms.size() + 1);

  std::vector<detail::GroupSuff> groups(group_idx.size());
  for (auto& g : groups) {
    g.xx = Eigen::MatrixXd::Zero(p, p);
    g.x = Eigen::VectorXd::Zero(p);
    g.xy = Eigen::VectorXd::Zero(p);
  }
  Eigen::VectorXd x(p);
  for (const auto& r : rows) {
    x.setZero();
    x[0] = 1.0;
    if (auto i = res.term_index(r.condition)) x[static_cast<Eigen::Index>(*i)] = 1.0;
    auto& g = groups[group_idx.at(r.group)];
    g.n += 1;
    g.xx += x * x.transpose();
    g.x += x;
    g.xy += x * r.q;
    g.y += r.q;
    g.yy += r.q * r.q;
  }
  const double n_obs = static_cast<double>(rows.size());
  auto eval = [&](double t) { return detail::profile(groups, n_obs, t / (1.0 - t)); };

  constexpr double kInvPhi = 0.6180339887498949;
  double lo = 0.0, hi = 1.0 - 1e-9;
  double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
  auto f1 = eval(x1), f2 = eval(x2);
  detail::ProfiledPoint best = eval(0.0);
  double best_t = 0.0;
  auto consider = [&](double t, const detail::ProfiledPoint& pt) {
    if (pt.loglik > best.loglik) {
      best = pt;
      best_t = t;
    }
  };
  consider(x1, f1);
  consider(x2, f2);
  int it = 0;
  while (hi - lo > opt.tol) {
    if (it >= opt.max_iter)
      throw ConvergenceError("random-intercept fit did not converge in " + std::to_string(opt.max_iter) + " iterations",
                             best_t, best.loglik, it);
    if (f1.loglik >= f2.loglik) {
      hi = x2;
      x2 = x1;
      f2 = std::move(f1);
      x1 = hi - kInvPhi * (hi - lo);
      f1 = eval(x1);
      consider(x1, f1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = std::move(f2);
      x2 = lo + kInvPhi * (hi - lo);
      f2 = eval(x2);
      consider(x2, f2);
    }
    ++it;
    res.loglik_trace.push_back(best.loglik);
  }
  if (!std::isfinite(best.loglik)) throw ConvergenceError("log-likelihood is not finite", best_t, best.loglik, it);

  res.iterations = it;
  res.loglik = best.loglik;
  res.sigma2_e = best.sigma2;
  res.sigma2_u = best.sigma2 * best_t / (1.0 - best_t);
  res.icc = res.sigma2_u / (res.sigma2_u + res.sigma2_e);
  res.covariance = best.sigma2 * best.a_inv;
  res.intercept = best.beta[0];
  res.intercept_se = std::sqrt(res.covariance(0, 0));
  for (std::size_t i = 0; i < res.terms.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i + 1);
    res.beta[res.terms[i]] = best.beta[k];
    res.se[res.terms[i]] = std::sqrt(res.covariance(k, k));
  }
  res.n_obs = rows.size();
  res.n_groups = groups.size();
  return res;
}

struct WaldContrast {
  double delta_beta = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
};

enum class ContrastCovariance {
  half_variance,  // cov(a, b) = 1/2 * mean(Var a, Var b), the shared-intercept approximation
  fitted,         // cov(a, b) from the fitted covariance matrix
};

inline WaldContrast wald_contrast(double beta_a, double se_a, double beta_b, double se_b,
                                  std::optional<double> cov = std::nullopt) {
  const double va = se_a * se_a, vb = se_b * se_b;
  const double c = cov.value_or(0.25 * (va + vb));
  WaldContrast out;
  out.delta_beta = beta_a - beta_b;
  const double var = va + vb - 2.0 * c;
  out.se = std::sqrt(std::max(var, 0.0));
  if (out.se == 0.0) {
    out.z = 0.0;
    out.p = 1.0;
    return out;
  }
  out.z = out.delta_beta / out.se;
  out.p = numeric::two_sided_p(out.z);
  return out;
}

inline WaldContrast wald_contrast(const MixedFitResult& fit, Condition a, Condition b,
                                  ContrastCovariance mode = ContrastCovariance::half_variance) {
  if (a == b) return {};
  const auto ia = fit.term_index(a), ib = fit.term_index(b);
  if (!ia || !ib) throw std::invalid_argument("contrast needs two non-baseline conditions present in the fit");
  std::optional<double> cov;
  if (mode == ContrastCovariance::fitted)
    cov = fit.covariance(static_cast<Eigen::Index>(*ia), static_cast<Eigen::Index>(*ib));
  return wald_contrast(fit.beta.at(a), fit.se.at(a), fit.beta.at(b), fit.se.at(b), cov);
}

/// Fixed-order table: term, beta, SE, z, p, 95% CI, then variance rows.
inline std::string format_mixed_fit(const MixedFitResult& fit) {
  const double zc = numeric::normal_quantile(0.975);
  std::string out = fmt::format("{:<22} {:>9} {:>8} {:>8} {:>8} {:>22}\n", "term", "beta", "SE", "z", "p", "95% CI");
  auto row = [&](const std::string& name, double b, double se) {
    const double z = b / se;
    out += fmt::format("{:<22} {:>+9.4f} {:>8.4f} {:>+8.2f} {:>8.3f} {:>22}\n", name, b, se, z, numeric::two_sided_p(z),
                       fmt::format("[{:+.4f}, {:+.4f}]", b - zc * se, b + zc * se));
  };
  row("intercept (blind)", fit.intercept, fit.intercept_se);
  for (auto c : fit.terms) row(std::string(to_string(c)), fit.beta.at(c), fit.se.at(c));
  out += fmt::format("group variance         {:.6f}\n", fit.sigma2_u);
  out += fmt::format("residual variance      {:.6f}\n", fit.sigma2_e);
  out += fmt::format("icc                    {:.4f}\n", fit.icc);
  out += fmt::format("log-likelihood (ML)    {:.4f}\n", fit.loglik);
  out += fmt::format("n observations         {}\n", fit.n_obs);
  out += fmt::format("n groups               {}\n", fit.n_groups);
  return out;
}

// ---------------------------------------------------------------------------
// Degree-2 capability-lift fit

struct QuadFit {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;  // y = c0 + c1 x + c2 x^2
  std::optional<double> vertex_x;
  std::optional<double> vertex_y;
  bool concave = false;

  double operator()(double x) const { return c0 + x * (c1 + x * c2); }
};

inline QuadFit quad_fit(std::span<const std::pair<double, double>> points) {
  std::set<double> distinct;
  for (const auto& [x, y] : points) distinct.insert(x);
  if (distinct.size() < 3) throw std::invalid_argument("quad_fit needs at least 3 distinct x values");

  // Fit on centred, scaled x for conditioning, then map back.
  double mx = 0, my_abs = 0;
  for (const auto& [x, y] : points) {
    mx += x;
    my_abs = std::max(my_abs, std::abs(y));
  }
  mx /= static_cast<double>(points.size());
  double sx = 0;
  for (const auto& [x, y] : points) sx = std::max(sx, std::abs(x - mx));
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = (points[static_cast<std::size_t>(i)].first - mx) / sx;
    a(i, 0) = 1.0;
    a(i, 1) = u;
    a(i, 2) = u * u;
    b[i] = points[static_cast<std::size_t>(i)].second;
  }
  Eigen::Vector3d w = a.colPivHouseholderQr().solve(b);
  if (std::abs(w[2]) <= 1e-10 * std::max(1.0, my_abs)) w[2] = 0.0;

  QuadFit fit;
  fit.c2 = w[2] / (sx * sx);
  fit.c1 = w[1] / sx - 2.0 * w[2] * mx / (sx * sx);
  fit.c0 = w[0] - w[1] * mx / sx + w[2] * mx * mx / (sx * sx);
  fit.concave = fit.c2 < 0.0;
  if (fit.c2 != 0.0) {
    fit.vertex_x = -fit.c1 / (2.0 * fit.c2);
    fit.vertex_y = fit(*fit.vertex_x);
  }
  return fit;
}

}  // namespace decisionbench
