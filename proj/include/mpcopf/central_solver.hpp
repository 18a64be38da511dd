#pragma once

// Full Newton-Raphson on the barrier KKT system: the centralized baseline.

#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "formulation.hpp"
#include "linear_solver.hpp"

namespace mpcopf {

/// How per-iteration step times are measured. `work` converts factor
/// nonzeros into seconds at a fixed nominal rate, which makes reports
/// reproducible byte for byte; `wall` uses the steady clock.
enum class TimingMode { work, wall };

inline constexpr double kSecondsPerWorkUnit = 1e-8;

struct SolverOptions {
  double tolerance = 1e-3;
  int max_iter = 500;
  BarrierSettings barrier;
  RegularizationSettings regularization;
  double fraction_to_boundary = 0.995;
  std::optional<double> mu_start;  // defaults to barrier.mu_initial
  TimingMode timing = TimingMode::work;
  std::function<void(int, const Vector&)> on_iterate;  // sees every iterate, starting point included
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  Vector solution;
  double objective = 0.0;
  double residual_norm = 0.0;
  double final_mu = 0.0;
  std::vector<double> per_iteration_seconds;
  double wall_seconds = 0.0;
  std::string diagnostics;
};

/// Solves H dy = -residual.
inline Vector newton_step(const SparseMatrix& hessian, const Vector& residual, const std::vector<bool>& primal,
                          const RegularizationSettings& rs = {}) {
  const BlockFactor f(hessian, primal, rs);
  return f.solve(-residual);
}

inline Vector newton_step(const KktSystem& kkt, const VariableLayout& layout, const RegularizationSettings& rs = {}) {
  return newton_step(kkt.hessian, kkt.residual, primal_mask(layout), rs);
}

/// Largest alpha in (0, 1] keeping slacks and inequality multipliers above
/// (1 - tau) of their current values.
inline double fraction_to_boundary(const VariableLayout& layout, const Vector& y, const Vector& dy, double tau,
                                   const std::vector<int>* subset = nullptr) {
  double alpha = 1.0;
  auto visit = [&](int i) {
    if (dy[i] < 0.0) alpha = std::min(alpha, -tau * y[i] / dy[i]);
  };
  if (subset) {
    for (int i : *subset) {
      const VarRole r = layout.role[static_cast<std::size_t>(i)];
      if (r == VarRole::slack || r == VarRole::dual) visit(i);
    }
  } else {
    for (const Inequality& q : layout.inequalities) {
      visit(q.slack);
      visit(q.dual);
    }
  }
  return alpha;
}

inline double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

/// Largest slack-multiplier product s_i * z_i.
inline double max_complementarity(const VariableLayout& layout, const Vector& y) {
  double m = 0.0;
  for (const Inequality& q : layout.inequalities) m = std::max(m, y[q.slack] * y[q.dual]);
  return m;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Outcome of one step computation inside the shared iteration loop.
struct StepResult {
  Vector dy;
  double alpha = 1.0;
};

/// Interior-point outer loop shared by the centralized and distributed
/// solvers. `step` receives the current iterate, KKT data and mu and returns
/// the damped update; it is responsible for its own timing records.
template <class StepFn, class Observer>
SolveReport run_barrier_loop(HorizonProblem& pb, Vector y, const SolverOptions& opts, StepFn&& step,
                             Observer&& observe, int divergence_window = 0) {
  const auto t_start = Clock::now();
  SolveReport rep;
  double mu = opts.mu_start.value_or(opts.barrier.mu_initial);
  const double mu_done = opts.barrier.mu_min * 10.0;
  double first_norm = -1.0;
  int grown = 0;
  for (int it = 0;; ++it) {
    const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
    Vector r = eval_kkt_residual(pb, ys, mu);
    double nr = inf_norm(r);
    if (first_norm < 0.0) first_norm = nr;
    observe(it, nr, mu);
    if (opts.on_iterate) opts.on_iterate(it, y);
    if (mu <= mu_done * (1.0 + 1e-12) && nr < opts.tolerance) {
      rep.converged = true;
      rep.residual_norm = nr;
      break;
    }
    if (!std::isfinite(nr)) {
      rep.residual_norm = nr;
      rep.diagnostics = "non-finite KKT residual at iteration " + std::to_string(it);
      break;
    }
    if (divergence_window > 0) {
      grown = nr > 10.0 * first_norm ? grown + 1 : 0;
      if (grown >= divergence_window) {
        rep.residual_norm = nr;
        rep.diagnostics = "diverged: residual above 10x its initial value for " + std::to_string(divergence_window) +
                          " consecutive iterations";
        break;
      }
    }
    if (it >= opts.max_iter) {
      rep.residual_norm = nr;
      rep.diagnostics = "max_iter " + std::to_string(opts.max_iter) + " reached, residual " + sci(nr) + ", mu " + sci(mu);
      break;
    }
    const double new_mu = barrier_update(mu, nr, opts.barrier);
    if (new_mu != mu) {
      mu = new_mu;
      r = eval_kkt_residual(pb, ys, mu);
    }
    const SparseMatrix h = assemble_hessian_matrix(pb, ys, mu, SlackCurvature::primal_dual);
    StepResult sr = step(y, h, r, mu);
    y += sr.alpha * sr.dy;
    ++rep.iterations;
  }
  pb.barrier_mu = mu;
  rep.final_mu = mu;
  rep.objective = eval_objective(pb, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  rep.solution = std::move(y);
  rep.wall_seconds = seconds_since(t_start);
  return rep;
}

}  // namespace detail

/// Centralized Newton-KKT interior-point solve from y0.
inline SolveReport solve_centralized(HorizonProblem& pb, const Vector& y0, const SolverOptions& opts = {}) {
  if (y0.size() != pb.size()) throw std::invalid_argument("y0 dimension does not match the layout");
  const std::vector<bool> primal = primal_mask(pb.layout);
  std::vector<double> seconds;
  auto step = [&](const Vector& y, const SparseMatrix& h, const Vector& r, double) {
    const auto t0 = detail::Clock::now();
    const BlockFactor f(h, primal, opts.regularization);
    detail::StepResult sr;
    sr.dy = f.solve(-r);
    sr.alpha = fraction_to_boundary(pb.layout, y, sr.dy, opts.fraction_to_boundary);
    seconds.push_back(opts.timing == TimingMode::wall ? detail::seconds_since(t0)
                                                      : f.work() * kSecondsPerWorkUnit);
    return sr;
  };
  SolveReport rep = detail::run_barrier_loop(pb, y0, opts, step, [](int, double, double) {});
  rep.per_iteration_seconds = std::move(seconds);
  return rep;
}

inline SolveReport solve_centralized(HorizonProblem& pb, const SolverOptions& opts = {}) {
  return solve_centralized(pb, flat_start(pb, opts.mu_start.value_or(opts.barrier.mu_initial)), opts);
}

}  // namespace mpcopf
