#pragma once

// Receding-horizon loop: solve the N-step window, apply its first step, carry
// the storage energy forward and shift the window by one interval.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "central_solver.hpp"
#include "ocd_solver.hpp"
#include "partitioner.hpp"

namespace mpcopf {

enum class SolveMethod { centralized, ocd, ocdc };

inline const char* to_string(SolveMethod m) {
  switch (m) {
  case SolveMethod::centralized: return "centralized";
  case SolveMethod::ocd: return "OCD";
  case SolveMethod::ocdc: return "OCD-C";
  }
  return "?";
}

inline SolveMethod parse_method(const std::string& s) {
  if (s == "centralized" || s == "central") return SolveMethod::centralized;
  if (s == "OCD" || s == "ocd") return SolveMethod::ocd;
  if (s == "OCD-C" || s == "ocd-c" || s == "ocdc") return SolveMethod::ocdc;
  throw InputError("unknown method '" + s + "' (expected centralized, OCD or OCD-C)");
}

struct MpcConfig {
  int horizon = 1;
  SolveMethod method = SolveMethod::centralized;
  std::optional<Partition> partition;  // required for OCD and OCD-C
  int steps_to_run = 1;
  double tolerance = 1e-3;
  int max_iter = 500;
  int reference_interval = 0;
  bool warm_start = true;
  double warm_mu = 1e-4;  // barrier parameter a warm-started solve begins at
  TimingMode timing = TimingMode::work;
  bool parallel_regions = false;
};

using StepReport = std::variant<SolveReport, DistributedReport>;

inline bool converged(const StepReport& r) {
  return std::visit([](const auto& x) { return x.converged; }, r);
}
inline int iterations(const StepReport& r) {
  return std::visit([](const auto& x) { return x.iterations; }, r);
}
inline double objective(const StepReport& r) {
  return std::visit([](const auto& x) { return x.objective; }, r);
}
inline const Vector& solution(const StepReport& r) {
  return std::visit([](const auto& x) -> const Vector& { return x.solution; }, r);
}
inline std::string diagnostics(const StepReport& r) {
  return std::visit([](const auto& x) { return x.diagnostics; }, r);
}

/// Convergence time of one solve: iterations times the slowest region's
/// median step time (the centralized solver is a single region).
inline double step_convergence_time(const StepReport& r) {
  if (const auto* d = std::get_if<DistributedReport>(&r)) return d->convergence_time;
  const auto& c = std::get<SolveReport>(r);
  return c.iterations > 0 ? convergence_time(c.iterations, {c.per_iteration_seconds}) : 0.0;
}

/// Decisions applied at one interval.
struct AppliedStep {
  int step = 0;  // absolute series index
  std::vector<double> pg, qg, p_in, p_out;
  std::vector<double> energy;  // storage energy at the end of the interval
};

using Schedule = std::vector<AppliedStep>;

struct MpcResult {
  std::vector<StepReport> per_step;
  Schedule applied_schedule;
  double total_cost = 0.0;
  double total_ramping = 0.0;
};

class MpcError : public std::runtime_error {
public:
  MpcError(const std::string& what, int step, MpcResult partial)
      : std::runtime_error(what), step_(step), partial_(std::move(partial)) {}
  int step() const { return step_; }
  const MpcResult& partial() const { return partial_; }

private:
  int step_;
  MpcResult partial_;
};

/// Sum over generators and consecutive applied steps of |P_G(t+1) - P_G(t)|.
inline double total_ramping(const Schedule& schedule) {
  double r = 0.0;
  for (std::size_t t = 1; t < schedule.size(); ++t)
    for (std::size_t g = 0; g < schedule[t].pg.size(); ++g) r += std::abs(schedule[t].pg[g] - schedule[t - 1].pg[g]);
  return r;
}

/// Generation cost of the applied decisions.
inline double total_cost(const PowerSystem& sys, const Schedule& schedule) {
  double c = 0.0;
  for (const auto& s : schedule)
    for (std::size_t g = 0; g < s.pg.size(); ++g) c += sys.generators[g].cost(s.pg[g]);
  return c;
}

/// Next window's starting point: the previous window shifted by one step,
/// last step duplicated; slacks reset to the shifted primal point and
/// multipliers to mu / s.
inline Vector shifted_start(const HorizonProblem& pb, const Vector& previous, double mu) {
  const VariableLayout& L = pb.layout;
  const int bs = L.step_size;
  const int n_prev = static_cast<int>(previous.size()) / bs;
  Vector y(pb.size());
  for (int t = 0; t < pb.horizon; ++t) {
    const int src = std::min(t + 1, n_prev - 1);
    y.segment(static_cast<Eigen::Index>(t) * bs, bs) = previous.segment(static_cast<Eigen::Index>(src) * bs, bs);
  }
  const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
  for (const Inequality& q : L.inequalities) {
    const double room = q.kind == BoundKind::line ? q.bound : 1.0;
    const double s = std::max(eval_inequality(pb, ys, q), 1e-3 * room);
    y[q.slack] = s;
    y[q.dual] = mu / s;
  }
  return y;
}

/// Solves one window by the configured method.
inline StepReport solve_window(HorizonProblem& pb, const MpcConfig& cfg, const Vector& y0, double mu0) {
  SolverOptions so;
  so.tolerance = cfg.tolerance;
  so.max_iter = cfg.max_iter;
  so.mu_start = mu0;
  so.timing = cfg.timing;
  if (cfg.method == SolveMethod::centralized) return solve_centralized(pb, y0, so);
  if (!cfg.partition) throw InputError("distributed method requires a partition");
  DistributedOptions d;
  d.solver = so;
  d.parallel = cfg.parallel_regions;
  return solve_distributed(pb, *cfg.partition, cfg.method == SolveMethod::ocd ? OcdMethod::ocd : OcdMethod::ocdc, y0,
                           d);
}

inline void validate(const MpcConfig& cfg, const TimeSeries& series) {
  if (cfg.horizon < 1) throw InputError("horizon must be at least 1");
  if (cfg.steps_to_run < 1) throw InputError("steps_to_run must be at least 1");
  if (static_cast<std::size_t>(cfg.steps_to_run + cfg.horizon) > series.length())
    throw InputError("steps_to_run + N = " + std::to_string(cfg.steps_to_run + cfg.horizon) +
                     " exceeds series length " + std::to_string(series.length()));
  if (cfg.tolerance <= 0.0) throw InputError("tolerance must be positive");
  if (cfg.max_iter < 1) throw InputError("max_iter must be at least 1");
  if (cfg.method != SolveMethod::centralized && !cfg.partition)
    throw InputError("distributed method requires a partition");
}

inline MpcResult run_mpc(std::shared_ptr<const PowerSystem> sys, const TimeSeries& series, const MpcConfig& cfg) {
  validate(cfg, series);
  if (cfg.partition) cfg.partition->validate(sys->bus_count());
  MpcResult res;
  std::vector<double> e_current = initial_energy(*sys);
  Vector previous;
  for (int ts = 0; ts < cfg.steps_to_run; ++ts) {
    HorizonProblem pb = build_horizon_problem(sys, series, ts, cfg.horizon, e_current);
    const bool warm = cfg.warm_start && previous.size() > 0;
    const double mu0 = warm ? cfg.warm_mu : BarrierSettings{}.mu_initial;
    const Vector y0 = warm ? shifted_start(pb, previous, mu0) : flat_start(pb, mu0);
    StepReport rep = solve_window(pb, cfg, y0, mu0);
    if (!converged(rep)) {
      const std::string why = "MPC step " + std::to_string(ts) + " did not converge: " + diagnostics(rep);
      res.per_step.push_back(std::move(rep));
      res.total_cost = total_cost(*sys, res.applied_schedule);
      res.total_ramping = total_ramping(res.applied_schedule);
      throw MpcError(why, ts, std::move(res));
    }
    const Vector& y = solution(rep);
    const VariableLayout& L = pb.layout;
    AppliedStep a;
    a.step = ts;
    for (std::size_t g = 0; g < sys->generators.size(); ++g) {
      a.pg.push_back(y[L.pg[0][g]]);
      a.qg.push_back(y[L.qg[0][g]]);
    }
    for (std::size_t s = 0; s < sys->storages.size(); ++s) {
      const auto& st = sys->storages[s];
      const double pin = y[L.p_in[0][s]], pout = y[L.p_out[0][s]];
      a.p_in.push_back(pin);
      a.p_out.push_back(pout);
      // Applied energy follows the dynamics exactly; the clamp only absorbs
      // solver tolerance at an active energy bound.
      e_current[s] = std::clamp(st.next_energy(e_current[s], pin, pout), st.e_min, st.e_max);
      a.energy.push_back(e_current[s]);
    }
    res.applied_schedule.push_back(std::move(a));
    previous = y;
    res.per_step.push_back(std::move(rep));
  }
  res.total_cost = total_cost(*sys, res.applied_schedule);
  res.total_ramping = total_ramping(res.applied_schedule);
  return res;
}

inline MpcResult run_mpc(const PowerSystem& sys, const TimeSeries& series, const MpcConfig& cfg) {
  return run_mpc(std::make_shared<const PowerSystem>(sys), series, cfg);
}

/// Spectral partition from the converged single-step solution at
/// `reference_interval`.
struct ReferencePartition {
  SpectralResult spectral;
  AffinityMatrix affinity;
  SolveReport reference_solve;
};

inline ReferencePartition compute_sp_partition(std::shared_ptr<const PowerSystem> sys, const TimeSeries& series,
                                               int reference_interval, int k, std::uint64_t seed,
                                               const SolverOptions& opts = {}) {
  HorizonProblem pb = build_horizon_problem(sys, series, reference_interval, 1, initial_energy(*sys));
  ReferencePartition out;
  out.reference_solve = solve_centralized(pb, opts);
  if (!out.reference_solve.converged)
    throw std::runtime_error("reference solve at interval " + std::to_string(reference_interval) +
                             " did not converge: " + out.reference_solve.diagnostics);
  const Vector& y = out.reference_solve.solution;
  const SparseMatrix h = assemble_hessian_matrix(
      pb, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), pb.barrier_mu);
  const ComplexMatrix ybus = build_admittance(*sys);
  out.affinity = compute_affinity(h, ybus, pb.layout);
  out.spectral = spectral_partition(out.affinity, k, seed, &ybus);
  return out;
}

}  // namespace mpcopf
