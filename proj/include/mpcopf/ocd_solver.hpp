#pragma once

// Distributed solution of the horizon problem by Optimality Condition
// Decomposition. Every region owns the variables of its buses and takes a
// block Newton step with its diagonal Hessian block; OCD-C additionally
// folds the neighbors' predicted steps into its right-hand side through the
// off-diagonal coupling blocks.
//
// Iterations are synchronous: regions step, exchange boundary data, then the
// harness checks the full residual and advances the shared barrier parameter.

#include <algorithm>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "central_solver.hpp"
#include "partitioner.hpp"

namespace mpcopf {

enum class OcdMethod { ocd, ocdc };

inline const char* to_string(OcdMethod m) { return m == OcdMethod::ocd ? "OCD" : "OCD-C"; }

/// Region view of the KKT system.
struct RegionSubproblem {
  int region = 0;
  std::vector<int> var_indices;  // sorted global indices
  SparseMatrix local_block;      // H_kk
  Vector local_residual;         // KKT_k
  struct Coupling {
    int neighbor = 0;
    SparseMatrix block;  // H_km, rows = this region, cols = neighbor
  };
  std::vector<Coupling> neighbor_coupling;  // only non-empty blocks
};

/// Global index sets per region, following bus ownership.
inline std::vector<std::vector<int>> region_indices(const VariableLayout& layout, const Partition& part) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(part.k));
  for (int i = 0; i < layout.size(); ++i)
    out[static_cast<std::size_t>(part.region(layout.bus_of[static_cast<std::size_t>(i)]))].push_back(i);
  return out;
}

inline Vector gather(const Vector& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

inline void scatter(Vector& v, const std::vector<int>& idx, const Vector& local) {
  for (std::size_t i = 0; i < idx.size(); ++i) v[idx[i]] = local[static_cast<Eigen::Index>(i)];
}

inline std::vector<RegionSubproblem> split_kkt_blocks(const SparseMatrix& hessian, const Vector& residual,
                                                      const Partition& part, const VariableLayout& layout) {
  const auto idx = region_indices(layout, part);
  std::vector<RegionSubproblem> subs(static_cast<std::size_t>(part.k));
  for (int k = 0; k < part.k; ++k) {
    auto& s = subs[static_cast<std::size_t>(k)];
    s.region = k;
    s.var_indices = idx[static_cast<std::size_t>(k)];
    s.local_block = extract_block(hessian, s.var_indices, s.var_indices);
    s.local_residual = gather(residual, s.var_indices);
    for (int m = 0; m < part.k; ++m) {
      if (m == k) continue;
      SparseMatrix b = extract_block(hessian, s.var_indices, idx[static_cast<std::size_t>(m)]);
      if (b.nonZeros() > 0) s.neighbor_coupling.push_back({m, std::move(b)});
    }
  }
  return subs;
}

inline std::vector<RegionSubproblem> split_kkt_blocks(const KktSystem& kkt, const Partition& part,
                                                      const VariableLayout& layout) {
  return split_kkt_blocks(kkt.hessian, kkt.residual, part, layout);
}

/// Factorized region block.
struct RegionFactor {
  BlockFactor factor;
  explicit RegionFactor(const RegionSubproblem& sub, const std::vector<bool>& primal,
                        const RegularizationSettings& rs = {}) try : factor(sub.local_block, primal, rs) {
  } catch (const FactorizationError& e) {
    throw FactorizationError("region " + std::to_string(sub.region) + ": " + e.what());
  }
};

/// OCD step: dy_k = -H_kk^-1 KKT_k.
inline Vector ocd_step(const RegionSubproblem& sub, const RegionFactor& f) { return f.factor.solve(-sub.local_residual); }

/// Summand H_km H_mm^-1 KKT_m computed in region m for region k. `predicted`
/// is H_mm^-1 KKT_m (region m's negated OCD step).
inline Vector correction_summand(const SparseMatrix& h_km, const Vector& predicted) { return h_km * predicted; }

/// r_k = sum over m != k of H_km H_mm^-1 KKT_m, given every region's
/// H_mm^-1 KKT_m.
inline Vector correction_term(const std::vector<RegionSubproblem>& subs, const std::vector<Vector>& predicted,
                              int k) {
  const auto& sub = subs[static_cast<std::size_t>(k)];
  Vector r = Vector::Zero(static_cast<Eigen::Index>(sub.var_indices.size()));
  for (const auto& c : sub.neighbor_coupling) r += correction_summand(c.block, predicted[static_cast<std::size_t>(c.neighbor)]);
  return r;
}

inline Vector correction_term(const std::vector<RegionSubproblem>& subs, const std::vector<RegionFactor>& factors,
                              int k) {
  std::vector<Vector> predicted;
  for (std::size_t m = 0; m < subs.size(); ++m) predicted.push_back(factors[m].factor.solve(subs[m].local_residual));
  return correction_term(subs, predicted, k);
}

/// OCD-C step: dy_k = H_kk^-1 (-KKT_k + r_k).
inline Vector ocdc_step(const RegionSubproblem& sub, const RegionFactor& f, const Vector& correction) {
  return f.factor.solve(-sub.local_residual + correction);
}

/// n times the slowest region's median per-iteration step time.
inline double convergence_time(int iterations, const std::vector<std::vector<double>>& samples) {
  double worst = 0.0;
  for (const auto& s : samples) {
    if (s.empty()) continue;
    std::vector<double> v = s;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double med = v[mid];
    if (v.size() % 2 == 0) {
      const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
      med = 0.5 * (med + lower);
    }
    worst = std::max(worst, med);
  }
  return iterations * worst;
}

/// Data region `from` sends to region `to` in one iteration.
struct ExchangeMessage {
  int from_region = 0;
  int to_region = 0;
  int iteration = 0;
  std::vector<std::pair<int, double>> boundary_values;     // updated variables region `to` reads
  std::vector<std::pair<int, double>> correction_summand;  // nonzero support of H_km H_mm^-1 KKT_m
  double alpha = 1.0;                                      // local step bound
  int payload_scalars = 0;
};

struct TraceRow {
  int iteration = 0;
  int region = 0;
  double residual_norm = 0.0;
  double step_seconds = 0.0;
  int scalars_sent = 0;
};

struct DistributedReport {
  OcdMethod method = OcdMethod::ocdc;
  Partition partition;
  bool converged = false;
  int iterations = 0;
  Vector solution;
  double objective = 0.0;
  double residual_norm = 0.0;
  double final_mu = 0.0;
  std::vector<std::vector<double>> per_region_step_seconds;
  double convergence_time = 0.0;
  long long total_scalars_exchanged = 0;
  std::vector<TraceRow> trace;
  std::string diagnostics;
  double wall_seconds = 0.0;
};

struct DistributedOptions {
  SolverOptions solver;
  bool parallel = false;   // run region steps on separate threads
  int divergence_window = 20;
  bool keep_messages = false;
};

/// Per region pair: the variables of `from` that appear in rows of `to`
/// (read through the Hessian pattern, which is the residual's dependency
/// structure).
inline std::vector<std::vector<std::vector<int>>> ghost_sets(const SparseMatrix& pattern, const Partition& part,
                                                             const VariableLayout& layout) {
  const auto k = static_cast<std::size_t>(part.k);
  std::vector<std::vector<std::vector<int>>> ghost(k, std::vector<std::vector<int>>(k));
  std::vector<int> owner(static_cast<std::size_t>(layout.size()));
  for (int i = 0; i < layout.size(); ++i) owner[static_cast<std::size_t>(i)] = part.region(layout.bus_of[static_cast<std::size_t>(i)]);
  for (Eigen::Index c = 0; c < pattern.outerSize(); ++c) {
    const int from = owner[static_cast<std::size_t>(c)];
    for (SparseMatrix::InnerIterator it(pattern, c); it; ++it) {
      const int to = owner[static_cast<std::size_t>(it.row())];
      if (to != from) ghost[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)].push_back(static_cast<int>(c));
    }
  }
  for (auto& row : ghost)
    for (auto& g : row) {
      std::sort(g.begin(), g.end());
      g.erase(std::unique(g.begin(), g.end()), g.end());
    }
  return ghost;
}

/// Distributed solve with OCD or OCD-C over `part`, starting from y0.
inline DistributedReport solve_distributed(HorizonProblem& pb, const Partition& part, OcdMethod method,
                                           const Vector& y0, const DistributedOptions& opts = {},
                                           std::vector<ExchangeMessage>* messages = nullptr) {
  if (y0.size() != pb.size()) throw std::invalid_argument("y0 dimension does not match the layout");
  part.validate(pb.system->bus_count());
  const auto nk = static_cast<std::size_t>(part.k);
  const auto idx = region_indices(pb.layout, part);
  std::vector<std::vector<bool>> primal;
  for (const auto& r : idx) primal.push_back(primal_mask(pb.layout, r));

  DistributedReport rep;
  rep.method = method;
  rep.partition = part;
  rep.per_region_step_seconds.assign(nk, {});
  std::vector<std::vector<std::vector<int>>> ghosts;
  int iteration = 0;

  auto step = [&](const Vector& y, const SparseMatrix& h, const Vector& r, double) {
    if (ghosts.empty()) ghosts = ghost_sets(h, part, pb.layout);
    ++iteration;
    const std::vector<RegionSubproblem> subs = split_kkt_blocks(h, r, part, pb.layout);
    std::vector<std::optional<RegionFactor>> factors(nk);
    std::vector<Vector> predicted(nk), dy(nk);
    std::vector<double> secs(nk, 0.0), alpha(nk, 1.0);
    std::vector<std::exception_ptr> errors(nk);

    auto run_phase = [&](auto&& body) {
      if (opts.parallel && nk > 1) {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < nk; ++k)
          pool.emplace_back([&, k] {
            try {
              body(k);
            } catch (...) {
              errors[k] = std::current_exception();
            }
          });
        for (auto& t : pool) t.join();
      } else {
        for (std::size_t k = 0; k < nk; ++k) {
          try {
            body(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    };

    // Phase 1: factorize; OCD steps directly, OCD-C predicts H_mm^-1 KKT_m.
    run_phase([&](std::size_t k) {
      const auto t0 = detail::Clock::now();
      factors[k].emplace(subs[k], primal[k], opts.solver.regularization);
      if (method == OcdMethod::ocd) {
        dy[k] = ocd_step(subs[k], *factors[k]);
      } else {
        predicted[k] = factors[k]->factor.solve(subs[k].local_residual);
      }
      secs[k] = opts.solver.timing == TimingMode::wall ? detail::seconds_since(t0)
                                                       : factors[k]->factor.work() * kSecondsPerWorkUnit;
    });
    // Phase 2 (OCD-C): correction summands arrive, corrected step.
    if (method == OcdMethod::ocdc) {
      run_phase([&](std::size_t k) {
        const auto t0 = detail::Clock::now();
        const Vector corr = correction_term(subs, predicted, static_cast<int>(k));
        dy[k] = ocdc_step(subs[k], *factors[k], corr);
        if (opts.solver.timing == TimingMode::wall) secs[k] += detail::seconds_since(t0);
      });
    }
    for (std::size_t k = 0; k < nk; ++k) {
      const Vector yk = gather(y, idx[k]);
      const Vector& d = dy[k];
      double a = 1.0;
      for (std::size_t i = 0; i < idx[k].size(); ++i) {
        const VarRole role = pb.layout.role[static_cast<std::size_t>(idx[k][i])];
        const auto ii = static_cast<Eigen::Index>(i);
        if ((role == VarRole::slack || role == VarRole::dual) && d[ii] < 0.0)
          a = std::min(a, -opts.solver.fraction_to_boundary * yk[ii] / d[ii]);
      }
      alpha[k] = a;
    }
    const double global_alpha = *std::min_element(alpha.begin(), alpha.end());

    detail::StepResult sr;
    sr.dy = Vector::Zero(pb.size());
    for (std::size_t k = 0; k < nk; ++k) scatter(sr.dy, idx[k], dy[k]);
    sr.alpha = global_alpha;

    // Exchange: boundary values after the update, the local step bound and
    // (OCD-C) the correction summands that were consumed this iteration.
    const Vector y_next = y + global_alpha * sr.dy;
    std::vector<int> sent(nk, 0);
    for (std::size_t from = 0; from < nk; ++from) {
      for (std::size_t to = 0; to < nk; ++to) {
        if (from == to) continue;
        const auto& g = ghosts[from][to];
        const SparseMatrix* h_tf = nullptr;
        for (const auto& c : subs[to].neighbor_coupling)
          if (c.neighbor == static_cast<int>(from)) h_tf = &c.block;
        if (g.empty() && !h_tf) continue;
        ExchangeMessage msg;
        msg.from_region = static_cast<int>(from);
        msg.to_region = static_cast<int>(to);
        msg.iteration = iteration;
        msg.alpha = alpha[from];
        for (int i : g) msg.boundary_values.emplace_back(i, y_next[i]);
        if (method == OcdMethod::ocdc && h_tf) {
          const Vector s = correction_summand(*h_tf, predicted[from]);
          std::vector<char> support(static_cast<std::size_t>(s.size()), 0);
          for (Eigen::Index c = 0; c < h_tf->outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(*h_tf, c); it; ++it) support[static_cast<std::size_t>(it.row())] = 1;
          for (Eigen::Index i = 0; i < s.size(); ++i)
            if (support[static_cast<std::size_t>(i)]) msg.correction_summand.emplace_back(idx[to][static_cast<std::size_t>(i)], s[i]);
        }
        msg.payload_scalars = static_cast<int>(msg.boundary_values.size() + msg.correction_summand.size()) + 1;
        sent[from] += msg.payload_scalars;
        rep.total_scalars_exchanged += msg.payload_scalars;
        if (messages) messages->push_back(std::move(msg));
      }
    }
    for (std::size_t k = 0; k < nk; ++k) {
      rep.per_region_step_seconds[k].push_back(secs[k]);
      rep.trace.push_back({iteration, static_cast<int>(k), inf_norm(subs[k].local_residual), secs[k], sent[k]});
    }
    return sr;
  };

  SolveReport base = detail::run_barrier_loop(pb, y0, opts.solver, step, [](int, double, double) {},
                                              opts.divergence_window);
  rep.converged = base.converged;
  rep.iterations = base.iterations;
  rep.solution = std::move(base.solution);
  rep.objective = base.objective;
  rep.residual_norm = base.residual_norm;
  rep.final_mu = base.final_mu;
  rep.diagnostics = base.diagnostics;
  rep.wall_seconds = base.wall_seconds;
  rep.convergence_time = rep.iterations > 0 ? convergence_time(rep.iterations, rep.per_region_step_seconds) : 0.0;
  return rep;
}

inline DistributedReport solve_distributed(HorizonProblem& pb, const Partition& part, OcdMethod method,
                                           const DistributedOptions& opts = {}) {
  const double mu = opts.solver.mu_start.value_or(opts.solver.barrier.mu_initial);
  return solve_distributed(pb, part, method, flat_start(pb, mu), opts);
}

}  // namespace mpcopf
