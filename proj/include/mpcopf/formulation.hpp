#pragma once

// Stacked N-step AC OPF with storage and wind, written as a smooth
// equality-constrained barrier problem in y = (x, s, lambda, z):
//
//   L(y) = f(x) - mu * sum ln s_i + sum lambda_e c_e(x) + sum z_i (s_i - g_i(x))
//
// where c_e are the equalities (power balances, storage dynamics, angle and
// voltage pins) and g_i(x) >= 0 the inequalities (variable boxes, line
// current limits). The KKT residual is grad L and the Newton matrix is the
// exact Hessian of L.

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "system_model.hpp"

namespace mpcopf {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

enum class VarRole {
  theta, vm, pg, qg, p_in, p_out, energy,        // primal
  slack,                                          // inequality slack
  lam_p, lam_q, lam_storage, lam_angle, lam_vset, // equality multipliers
  dual                                            // inequality multiplier
};

inline bool is_primal(VarRole r) { return r <= VarRole::slack; }

enum class BoundKind { lower, upper, line };

/// One inequality g(x) >= 0 with its slack and multiplier slots.
struct Inequality {
  BoundKind kind = BoundKind::lower;
  int step = 0;
  int var = -1;        // bounded primal index (box kinds)
  double bound = 0.0;  // lower/upper bound value, or i_max^2 for lines
  int branch = -1;     // position in PowerSystem::branches (line kind)
  int slack = -1;
  int dual = -1;
};

/// Index map of the stacked problem. Every step occupies one contiguous block
/// of `step_size` indices with identical internal structure.
struct VariableLayout {
  int horizon = 0;
  int step_size = 0;

  // [step][entity] -> global index
  std::vector<std::vector<int>> theta, vm, pg, qg, p_in, p_out, energy;
  std::vector<std::vector<int>> lam_p, lam_q, lam_storage, lam_angle, lam_vset;
  std::vector<int> angle_pin_bus;  // bus id per lam_angle entry
  std::vector<int> vset_pin_bus;   // bus id per lam_vset entry
  std::vector<Inequality> inequalities;

  std::vector<int> bus_of;  // bus id owning each index
  std::vector<VarRole> role;

  int size() const { return static_cast<int>(bus_of.size()); }
  int equality_count() const {
    int n = 0;
    for (auto r : role)
      if (r >= VarRole::lam_p && r <= VarRole::lam_vset) ++n;
    return n;
  }
  int primal_count() const {
    int n = 0;
    for (auto r : role)
      if (r < VarRole::slack) ++n;
    return n;
  }

  /// S_m: indices owned by each bus, indexed by bus position.
  std::vector<std::vector<int>> indices_by_bus(std::size_t buses) const {
    std::vector<std::vector<int>> out(buses);
    for (int i = 0; i < size(); ++i) out[static_cast<std::size_t>(bus_of[i] - 1)].push_back(i);
    return out;
  }
};

/// Barrier parameter schedule.
struct BarrierSettings {
  double mu_initial = 0.1;
  double sigma = 0.2;
  double mu_min = 1e-9;
  double trigger = 10.0;  // reduce once ||KKT||_inf < trigger * mu
};

class HorizonProblem {
public:
  std::shared_ptr<const PowerSystem> system;
  int start_step = 0;
  int horizon = 1;
  std::vector<double> e_start;
  double barrier_mu = BarrierSettings{}.mu_initial;
  VariableLayout layout;

  // Per-step data for the window.
  std::vector<std::vector<double>> p_load, q_load;  // [step][bus pos]
  std::vector<std::vector<double>> p_wind;          // [step][bus pos]

  // Network data.
  Eigen::VectorXd g_diag, b_diag;
  struct Pair {
    int j = 0, k = 0;  // bus positions, both orientations stored
    double g = 0.0, b = 0.0;
  };
  std::vector<std::vector<Pair>> pairs_of;  // [bus pos] -> neighbor pairs
  struct LineCoeffs {
    int from = 0, to = 0;  // bus positions
    double aa = 0.0, cc = 0.0, cos_coef = 0.0, sin_coef = 0.0;
  };
  std::vector<LineCoeffs> line_coeffs;  // per branch

  int size() const { return layout.size(); }
};

namespace detail {

/// Value and derivatives of Vj*Vk*(a cos(thj-thk) + b sin(thj-thk)) with
/// respect to (thj, thk, Vj, Vk).
struct PairTerm {
  double value = 0.0;
  std::array<double, 4> grad{};
  std::array<std::array<double, 4>, 4> hess{};
};

inline PairTerm pair_term(double a, double b, double vj, double vk, double th) {
  const double cs = std::cos(th), sn = std::sin(th);
  const double c = a * cs + b * sn;
  const double dc = -a * sn + b * cs;
  const double vv = vj * vk;
  PairTerm p;
  p.value = vv * c;
  p.grad = {vv * dc, -vv * dc, vk * c, vj * c};
  auto& h = p.hess;
  h[0][0] = -vv * c;
  h[0][1] = vv * c;
  h[1][1] = -vv * c;
  h[0][2] = vk * dc;
  h[0][3] = vj * dc;
  h[1][2] = -vk * dc;
  h[1][3] = -vj * dc;
  h[2][2] = 0.0;
  h[2][3] = c;
  h[3][3] = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < r; ++q) h[r][q] = h[q][r];
  return p;
}

/// Sparse first and second derivatives of one scalar constraint.
struct LocalDerivs {
  double value = 0.0;
  std::vector<std::pair<int, double>> grad;
  std::vector<std::tuple<int, int, double>> hess;  // full symmetric listing

  void clear() {
    value = 0.0;
    grad.clear();
    hess.clear();
  }
  void add_pair(const PairTerm& p, std::array<int, 4> idx, double sign) {
    value += sign * p.value;
    for (int r = 0; r < 4; ++r) grad.emplace_back(idx[r], sign * p.grad[r]);
    for (int r = 0; r < 4; ++r)
      for (int q = 0; q < 4; ++q) hess.emplace_back(idx[r], idx[q], sign * p.hess[r][q]);
  }
};

inline void require_interior_box(double lo, double hi, const std::string& what) {
  if (!(hi > lo)) throw InputError(what + ": bounds must satisfy lower < upper for the barrier");
}

}  // namespace detail

/// Builds the stacked problem for steps [start_step, start_step + horizon).
inline HorizonProblem build_horizon_problem(std::shared_ptr<const PowerSystem> system_ptr,
                                            const TimeSeries& series, int start_step, int horizon,
                                            std::vector<double> e_start) {
  const PowerSystem& sys = *system_ptr;
  if (horizon < 1) throw InputError("horizon must be at least 1");
  if (start_step < 0 || static_cast<std::size_t>(start_step + horizon) > series.length())
    throw InputError("horizon overruns series: start " + std::to_string(start_step) + " + N " +
                     std::to_string(horizon) + " > length " + std::to_string(series.length()));
  if (e_start.size() != sys.storages.size()) throw InputError("e_start size does not match storage count");
  for (std::size_t s = 0; s < e_start.size(); ++s) {
    const auto& st = sys.storages[s];
    if (e_start[s] < st.e_min || e_start[s] > st.e_max)
      throw InputError("storage " + std::to_string(s) + ": e_start outside [e_min, e_max]");
  }

  HorizonProblem pb;
  pb.system = system_ptr;
  pb.start_step = start_step;
  pb.horizon = horizon;
  pb.e_start = std::move(e_start);

  const std::size_t nb = sys.bus_count();
  const std::size_t ng = sys.generators.size();
  const std::size_t ns = sys.storages.size();

  for (int t = 0; t < horizon; ++t) {
    const auto abs_t = static_cast<std::size_t>(start_step + t);
    std::vector<double> pl(nb), ql(nb), pw(nb, 0.0);
    for (std::size_t j = 0; j < nb; ++j) {
      const double m = series.load_multiplier(sys.buses[j].id, abs_t);
      pl[j] = sys.buses[j].p_load_base * m;
      ql[j] = sys.buses[j].q_load_base * m;
    }
    for (int w : sys.wind_buses) pw[sys.index_of(w)] += series.wind_at(w, abs_t);
    pb.p_load.push_back(std::move(pl));
    pb.q_load.push_back(std::move(ql));
    pb.p_wind.push_back(std::move(pw));
  }

  const ComplexMatrix ybus = build_admittance(sys);
  pb.g_diag = ybus.diagonal().real();
  pb.b_diag = ybus.diagonal().imag();
  pb.pairs_of.resize(nb);
  for (std::size_t j = 0; j < nb; ++j)
    for (int k_id : sys.neighbors(sys.buses[j].id)) {
      const auto k = sys.index_of(k_id);
      const auto y = ybus(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
      pb.pairs_of[j].push_back({static_cast<int>(j), static_cast<int>(k), y.real(), y.imag()});
    }
  for (const auto& br : sys.branches) {
    const std::complex<double> ys = br.series_admittance();
    const std::complex<double> a = ys + std::complex<double>(0.0, 0.5 * br.b_sh);
    const std::complex<double> c = -ys;
    const std::complex<double> w = a * std::conj(c);
    pb.line_coeffs.push_back({static_cast<int>(sys.index_of(br.from_bus)), static_cast<int>(sys.index_of(br.to_bus)),
                              std::norm(a), std::norm(c), 2.0 * w.real(), -2.0 * w.imag()});
  }

  // Layout.
  VariableLayout& L = pb.layout;
  L.horizon = horizon;
  for (const auto& b : sys.buses) {
    if (b.kind == BusKind::slack) L.angle_pin_bus.push_back(b.id);
    if (b.v_set) L.vset_pin_bus.push_back(b.id);
  }
  auto add = [&](VarRole role, int bus) {
    L.role.push_back(role);
    L.bus_of.push_back(bus);
    return static_cast<int>(L.role.size()) - 1;
  };
  auto add_ineq = [&](BoundKind kind, int t, int var, double bound, int branch, int bus) {
    Inequality q;
    q.kind = kind;
    q.step = t;
    q.var = var;
    q.bound = bound;
    q.branch = branch;
    q.slack = add(VarRole::slack, bus);
    q.dual = add(VarRole::dual, bus);
    L.inequalities.push_back(q);
  };
  auto resize_step = [&](std::vector<std::vector<int>>& v, std::size_t n) { v.emplace_back(n, -1); };

  for (int t = 0; t < horizon; ++t) {
    const int block_begin = L.size();
    resize_step(L.theta, nb);
    resize_step(L.vm, nb);
    resize_step(L.pg, ng);
    resize_step(L.qg, ng);
    resize_step(L.p_in, ns);
    resize_step(L.p_out, ns);
    resize_step(L.energy, ns);
    resize_step(L.lam_p, nb);
    resize_step(L.lam_q, nb);
    resize_step(L.lam_storage, ns);
    resize_step(L.lam_angle, L.angle_pin_bus.size());
    resize_step(L.lam_vset, L.vset_pin_bus.size());

    for (std::size_t j = 0; j < nb; ++j) {
      const Bus& b = sys.buses[j];
      L.theta[t][j] = add(VarRole::theta, b.id);
      L.vm[t][j] = add(VarRole::vm, b.id);
      L.lam_p[t][j] = add(VarRole::lam_p, b.id);
      L.lam_q[t][j] = add(VarRole::lam_q, b.id);
    }
    for (std::size_t g = 0; g < ng; ++g) {
      L.pg[t][g] = add(VarRole::pg, sys.generators[g].bus);
      L.qg[t][g] = add(VarRole::qg, sys.generators[g].bus);
    }
    for (std::size_t s = 0; s < ns; ++s) {
      const int bus = sys.storages[s].bus;
      L.p_in[t][s] = add(VarRole::p_in, bus);
      L.p_out[t][s] = add(VarRole::p_out, bus);
      L.energy[t][s] = add(VarRole::energy, bus);
      L.lam_storage[t][s] = add(VarRole::lam_storage, bus);
    }
    for (std::size_t a = 0; a < L.angle_pin_bus.size(); ++a) L.lam_angle[t][a] = add(VarRole::lam_angle, L.angle_pin_bus[a]);
    for (std::size_t v = 0; v < L.vset_pin_bus.size(); ++v) L.lam_vset[t][v] = add(VarRole::lam_vset, L.vset_pin_bus[v]);

    // Inequalities (1e)-(1j) plus reactive limits.
    for (std::size_t j = 0; j < nb; ++j) {
      const Bus& b = sys.buses[j];
      if (b.v_set) continue;  // pinned by an equality
      detail::require_interior_box(b.v_min, b.v_max, detail::bus_ref(b.id) + " voltage");
      add_ineq(BoundKind::lower, t, L.vm[t][j], b.v_min, -1, b.id);
      add_ineq(BoundKind::upper, t, L.vm[t][j], b.v_max, -1, b.id);
    }
    for (std::size_t g = 0; g < ng; ++g) {
      const Generator& gen = sys.generators[g];
      const std::string who = "generator " + std::to_string(g);
      detail::require_interior_box(gen.p_min, gen.p_max, who + " active power");
      detail::require_interior_box(gen.q_min, gen.q_max, who + " reactive power");
      add_ineq(BoundKind::lower, t, L.pg[t][g], gen.p_min, -1, gen.bus);
      add_ineq(BoundKind::upper, t, L.pg[t][g], gen.p_max, -1, gen.bus);
      add_ineq(BoundKind::lower, t, L.qg[t][g], gen.q_min, -1, gen.bus);
      add_ineq(BoundKind::upper, t, L.qg[t][g], gen.q_max, -1, gen.bus);
    }
    for (std::size_t s = 0; s < ns; ++s) {
      const StorageDevice& st = sys.storages[s];
      const std::string who = "storage " + std::to_string(s);
      detail::require_interior_box(0.0, st.p_in_max, who + " charge power");
      detail::require_interior_box(0.0, st.p_out_max, who + " discharge power");
      detail::require_interior_box(st.e_min, st.e_max, who + " energy");
      add_ineq(BoundKind::lower, t, L.p_in[t][s], 0.0, -1, st.bus);
      add_ineq(BoundKind::upper, t, L.p_in[t][s], st.p_in_max, -1, st.bus);
      add_ineq(BoundKind::lower, t, L.p_out[t][s], 0.0, -1, st.bus);
      add_ineq(BoundKind::upper, t, L.p_out[t][s], st.p_out_max, -1, st.bus);
      add_ineq(BoundKind::lower, t, L.energy[t][s], st.e_min, -1, st.bus);
      add_ineq(BoundKind::upper, t, L.energy[t][s], st.e_max, -1, st.bus);
    }
    for (std::size_t k = 0; k < sys.branches.size(); ++k) {
      const Branch& br = sys.branches[k];
      if (!br.i_max) continue;
      add_ineq(BoundKind::line, t, -1, (*br.i_max) * (*br.i_max), static_cast<int>(k), br.from_bus);
    }
    const int block_size = L.size() - block_begin;
    if (t == 0) L.step_size = block_size;
  }
  return pb;
}

inline HorizonProblem build_horizon_problem(const PowerSystem& sys, const TimeSeries& series, int start_step,
                                            int horizon, std::vector<double> e_start) {
  return build_horizon_problem(std::make_shared<const PowerSystem>(sys), series, start_step, horizon,
                               std::move(e_start));
}

inline std::vector<double> initial_energy(const PowerSystem& sys) {
  std::vector<double> e;
  for (const auto& s : sys.storages) e.push_back(s.e_init);
  return e;
}

// ---------------------------------------------------------------------------
// Constraint kernels

namespace detail {

/// Active (P) or reactive (Q) balance at bus position j, step t:
/// injections minus network flow (LHS - RHS).
inline void balance_derivs(const HorizonProblem& pb, std::span<const double> y, std::size_t j, int t, bool reactive,
                           LocalDerivs& out) {
  const PowerSystem& sys = *pb.system;
  const VariableLayout& L = pb.layout;
  out.clear();
  const int id = sys.buses[j].id;
  const int vj = L.vm[t][j];
  const double vmj = y[vj];

  if (!reactive) {
    double v = pb.p_wind[t][j] - pb.p_load[t][j];
    for (std::size_t g : sys.generators_at(id)) {
      v += y[L.pg[t][g]];
      out.grad.emplace_back(L.pg[t][g], 1.0);
    }
    for (std::size_t s = 0; s < sys.storages.size(); ++s) {
      if (sys.storages[s].bus != id) continue;
      v += -y[L.p_in[t][s]] + y[L.p_out[t][s]];
      out.grad.emplace_back(L.p_in[t][s], -1.0);
      out.grad.emplace_back(L.p_out[t][s], 1.0);
    }
    const double gjj = pb.g_diag[static_cast<Eigen::Index>(j)];
    v -= gjj * vmj * vmj;
    out.grad.emplace_back(vj, -2.0 * gjj * vmj);
    out.hess.emplace_back(vj, vj, -2.0 * gjj);
    out.value = v;
  } else {
    double v = -pb.q_load[t][j];
    for (std::size_t g : sys.generators_at(id)) {
      v += y[L.qg[t][g]];
      out.grad.emplace_back(L.qg[t][g], 1.0);
    }
    const double bjj = pb.b_diag[static_cast<Eigen::Index>(j)];
    v += bjj * vmj * vmj;
    out.grad.emplace_back(vj, 2.0 * bjj * vmj);
    out.hess.emplace_back(vj, vj, 2.0 * bjj);
    out.value = v;
  }
  for (const auto& pr : pb.pairs_of[j]) {
    const std::array<int, 4> idx = {L.theta[t][pr.j], L.theta[t][pr.k], L.vm[t][pr.j], L.vm[t][pr.k]};
    const double th = y[idx[0]] - y[idx[1]];
    const PairTerm p = reactive ? pair_term(-pr.b, pr.g, y[idx[2]], y[idx[3]], th)
                                : pair_term(pr.g, pr.b, y[idx[2]], y[idx[3]], th);
    out.add_pair(p, idx, -1.0);
  }
}

/// |I|^2 at the from-end of branch k, step t.
inline void line_current_derivs(const HorizonProblem& pb, std::span<const double> y, std::size_t k, int t,
                                LocalDerivs& out) {
  const VariableLayout& L = pb.layout;
  const auto& lc = pb.line_coeffs[k];
  out.clear();
  const int vf = L.vm[t][lc.from], vt = L.vm[t][lc.to];
  const double a = y[vf], c = y[vt];
  out.value = lc.aa * a * a + lc.cc * c * c;
  out.grad.emplace_back(vf, 2.0 * lc.aa * a);
  out.grad.emplace_back(vt, 2.0 * lc.cc * c);
  out.hess.emplace_back(vf, vf, 2.0 * lc.aa);
  out.hess.emplace_back(vt, vt, 2.0 * lc.cc);
  const std::array<int, 4> idx = {L.theta[t][lc.from], L.theta[t][lc.to], vf, vt};
  out.add_pair(pair_term(lc.cos_coef, lc.sin_coef, a, c, y[idx[0]] - y[idx[1]]), idx, 1.0);
}

inline void storage_derivs(const HorizonProblem& pb, std::span<const double> y, std::size_t s, int t,
                           LocalDerivs& out) {
  const auto& st = pb.system->storages[s];
  const VariableLayout& L = pb.layout;
  out.clear();
  const double e_prev = t == 0 ? pb.e_start[s] : y[L.energy[t - 1][s]];
  out.value = y[L.energy[t][s]] - (e_prev + st.eta_c * y[L.p_in[t][s]] - y[L.p_out[t][s]] / st.eta_d - st.eps_sbl);
  out.grad.emplace_back(L.energy[t][s], 1.0);
  if (t > 0) out.grad.emplace_back(L.energy[t - 1][s], -1.0);
  out.grad.emplace_back(L.p_in[t][s], -st.eta_c);
  out.grad.emplace_back(L.p_out[t][s], 1.0 / st.eta_d);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Point evaluations

struct BalanceMismatch {
  double dp = 0.0;
  double dq = 0.0;
};

/// Power-balance mismatch at `bus_id`, step t of the window.
inline BalanceMismatch eval_power_balance(const HorizonProblem& pb, std::span<const double> y, int bus_id, int t) {
  detail::LocalDerivs d;
  const auto j = pb.system->index_of(bus_id);
  BalanceMismatch m;
  detail::balance_derivs(pb, y, j, t, false, d);
  m.dp = d.value;
  detail::balance_derivs(pb, y, j, t, true, d);
  m.dq = d.value;
  return m;
}

inline double eval_storage_dynamics(const HorizonProblem& pb, std::span<const double> y, std::size_t device, int t) {
  detail::LocalDerivs d;
  detail::storage_derivs(pb, y, device, t, d);
  return d.value;
}

inline double eval_line_current_sq(const HorizonProblem& pb, std::span<const double> y, std::size_t branch, int t) {
  detail::LocalDerivs d;
  detail::line_current_derivs(pb, y, branch, t, d);
  return d.value;
}

/// Generation cost at step t of the window.
inline double eval_step_cost(const HorizonProblem& pb, std::span<const double> y, int t) {
  double c = 0.0;
  const auto& gens = pb.system->generators;
  for (std::size_t g = 0; g < gens.size(); ++g) c += gens[g].cost(y[pb.layout.pg[t][g]]);
  return c;
}

inline double eval_objective(const HorizonProblem& pb, std::span<const double> y) {
  double c = 0.0;
  for (int t = 0; t < pb.horizon; ++t) c += eval_step_cost(pb, y, t);
  return c;
}

/// g(x) for one inequality; for lines, i_max^2 - |I|^2.
inline double eval_inequality(const HorizonProblem& pb, std::span<const double> y, const Inequality& q) {
  switch (q.kind) {
  case BoundKind::lower: return y[q.var] - q.bound;
  case BoundKind::upper: return q.bound - y[q.var];
  case BoundKind::line:
    return q.bound - eval_line_current_sq(pb, y, static_cast<std::size_t>(q.branch), q.step);
  }
  return 0.0;
}

namespace detail {

/// Visits every equality row with its multiplier index and local derivatives.
template <class Visitor>
void for_each_equality(const HorizonProblem& pb, std::span<const double> y, Visitor&& visit) {
  const VariableLayout& L = pb.layout;
  const PowerSystem& sys = *pb.system;
  LocalDerivs d;
  for (int t = 0; t < pb.horizon; ++t) {
    for (std::size_t j = 0; j < sys.bus_count(); ++j) {
      balance_derivs(pb, y, j, t, false, d);
      visit(L.lam_p[t][j], d);
      balance_derivs(pb, y, j, t, true, d);
      visit(L.lam_q[t][j], d);
    }
    for (std::size_t s = 0; s < sys.storages.size(); ++s) {
      storage_derivs(pb, y, s, t, d);
      visit(L.lam_storage[t][s], d);
    }
    for (std::size_t a = 0; a < L.angle_pin_bus.size(); ++a) {
      d.clear();
      const int th = L.theta[t][sys.index_of(L.angle_pin_bus[a])];
      d.value = y[th];
      d.grad.emplace_back(th, 1.0);
      visit(L.lam_angle[t][a], d);
    }
    for (std::size_t v = 0; v < L.vset_pin_bus.size(); ++v) {
      d.clear();
      const int bus = L.vset_pin_bus[v];
      const int vm = L.vm[t][sys.index_of(bus)];
      d.value = y[vm] - *sys.bus(bus).v_set;
      d.grad.emplace_back(vm, 1.0);
      visit(L.lam_vset[t][v], d);
    }
  }
}

template <class Visitor>
void for_each_inequality(const HorizonProblem& pb, std::span<const double> y, Visitor&& visit) {
  LocalDerivs d;
  for (const Inequality& q : pb.layout.inequalities) {
    d.clear();
    switch (q.kind) {
    case BoundKind::lower:
      d.value = y[q.var] - q.bound;
      d.grad.emplace_back(q.var, 1.0);
      break;
    case BoundKind::upper:
      d.value = q.bound - y[q.var];
      d.grad.emplace_back(q.var, -1.0);
      break;
    case BoundKind::line: {
      line_current_derivs(pb, y, static_cast<std::size_t>(q.branch), q.step, d);
      d.value = q.bound - d.value;
      for (auto& gr : d.grad) gr.second = -gr.second;
      for (auto& h : d.hess) std::get<2>(h) = -std::get<2>(h);
      break;
    }
    }
    visit(q, d);
  }
}

}  // namespace detail

/// Scalar barrier Lagrangian at y for barrier parameter mu.
inline double eval_lagrangian(const HorizonProblem& pb, std::span<const double> y, double mu) {
  double lag = eval_objective(pb, y);
  detail::for_each_equality(pb, y, [&](int lam, const detail::LocalDerivs& d) { lag += y[lam] * d.value; });
  detail::for_each_inequality(pb, y, [&](const Inequality& q, const detail::LocalDerivs& d) {
    lag += -mu * std::log(y[q.slack]) + y[q.dual] * (y[q.slack] - d.value);
  });
  return lag;
}

/// Gradient of the barrier Lagrangian (the stacked KKT residual).
inline Vector eval_kkt_residual(const HorizonProblem& pb, std::span<const double> y, double mu) {
  Vector r = Vector::Zero(pb.size());
  const auto& gens = pb.system->generators;
  for (int t = 0; t < pb.horizon; ++t)
    for (std::size_t g = 0; g < gens.size(); ++g) {
      const int i = pb.layout.pg[t][g];
      r[i] += 2.0 * gens[g].a * y[i] + gens[g].b;
    }
  detail::for_each_equality(pb, y, [&](int lam, const detail::LocalDerivs& d) {
    r[lam] = d.value;
    for (const auto& [i, v] : d.grad) r[i] += y[lam] * v;
  });
  detail::for_each_inequality(pb, y, [&](const Inequality& q, const detail::LocalDerivs& d) {
    r[q.slack] = y[q.dual] - mu / y[q.slack];
    r[q.dual] = y[q.slack] - d.value;
    for (const auto& [i, v] : d.grad) r[i] -= y[q.dual] * v;
  });
  return r;
}

inline Vector eval_kkt_residual(const HorizonProblem& pb, const Vector& y) {
  return eval_kkt_residual(pb, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), pb.barrier_mu);
}

/// Infinity norm of the equality-constraint and slack-definition rows.
inline double constraint_mismatch(const HorizonProblem& pb, std::span<const double> y) {
  double m = 0.0;
  detail::for_each_equality(pb, y, [&](int, const detail::LocalDerivs& d) { m = std::max(m, std::abs(d.value)); });
  detail::for_each_inequality(pb, y, [&](const Inequality& q, const detail::LocalDerivs& d) {
    m = std::max(m, std::abs(y[q.slack] - d.value));
  });
  return m;
}

struct KktSystem {
  SparseMatrix hessian;
  Vector residual;
  Vector iterate;
  double mu = 0.0;
};

/// Slack-diagonal treatment. `exact` is the true second derivative mu/s^2 of
/// the barrier term; `primal_dual` uses z/s, the symmetric linearization of
/// the complementarity condition s*z = mu. Both agree on the central path.
enum class SlackCurvature { exact, primal_dual };

/// Hessian of the barrier Lagrangian in layout order. Structural entries are
/// emitted even when their value is zero, so the sparsity pattern does not
/// depend on y.
inline SparseMatrix assemble_hessian_matrix(const HorizonProblem& pb, std::span<const double> y, double mu,
                                            SlackCurvature curvature = SlackCurvature::exact) {
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(pb.size()) * 24);
  const auto& gens = pb.system->generators;
  for (int t = 0; t < pb.horizon; ++t)
    for (std::size_t g = 0; g < gens.size(); ++g) {
      const int i = pb.layout.pg[t][g];
      trip.emplace_back(i, i, 2.0 * gens[g].a);
    }
  detail::for_each_equality(pb, y, [&](int lam, const detail::LocalDerivs& d) {
    for (const auto& [i, v] : d.grad) {
      trip.emplace_back(i, lam, v);
      trip.emplace_back(lam, i, v);
    }
    const double w = y[lam];
    for (const auto& [i, k, v] : d.hess) trip.emplace_back(i, k, w * v);
  });
  detail::for_each_inequality(pb, y, [&](const Inequality& q, const detail::LocalDerivs& d) {
    const double s = y[q.slack];
    trip.emplace_back(q.slack, q.slack, curvature == SlackCurvature::exact ? mu / (s * s) : y[q.dual] / s);
    trip.emplace_back(q.slack, q.dual, 1.0);
    trip.emplace_back(q.dual, q.slack, 1.0);
    for (const auto& [i, v] : d.grad) {
      trip.emplace_back(i, q.dual, -v);
      trip.emplace_back(q.dual, i, -v);
    }
    const double w = -y[q.dual];
    for (const auto& [i, k, v] : d.hess) trip.emplace_back(i, k, w * v);
  });
  SparseMatrix h(pb.size(), pb.size());
  h.setFromTriplets(trip.begin(), trip.end());
  // Duplicate summation order differs between (i,j) and (j,i); averaging
  // with the transpose makes the result exactly symmetric.
  SparseMatrix sym = 0.5 * (h + SparseMatrix(h.transpose()));
  sym.makeCompressed();
  return sym;
}

inline KktSystem assemble_hessian(const HorizonProblem& pb, const Vector& y) {
  const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
  KktSystem k;
  k.mu = pb.barrier_mu;
  k.iterate = y;
  k.hessian = assemble_hessian_matrix(pb, ys, pb.barrier_mu);
  k.residual = eval_kkt_residual(pb, ys, pb.barrier_mu);
  return k;
}

/// Reduces mu by sigma (floored at mu_min) once the KKT residual at the
/// current mu is below trigger * mu; otherwise returns mu unchanged.
inline double barrier_update(double mu, double kkt_norm, const BarrierSettings& bs = {}) {
  if (kkt_norm < bs.trigger * mu) return std::max(bs.mu_min, bs.sigma * mu);
  return mu;
}

/// Interior starting point: flat voltages (v_set where pinned), zero angles,
/// mid-box generation, idle storage, slacks at half the bound range and
/// inequality multipliers mu / slack.
inline Vector flat_start(const HorizonProblem& pb, double mu) {
  const PowerSystem& sys = *pb.system;
  const VariableLayout& L = pb.layout;
  Vector y = Vector::Zero(pb.size());
  for (int t = 0; t < pb.horizon; ++t) {
    for (std::size_t j = 0; j < sys.bus_count(); ++j) {
      const Bus& b = sys.buses[j];
      y[L.vm[t][j]] = b.v_set ? *b.v_set : std::clamp(1.0, b.v_min, b.v_max);
    }
    for (std::size_t g = 0; g < sys.generators.size(); ++g) {
      const auto& gen = sys.generators[g];
      y[L.pg[t][g]] = 0.5 * (gen.p_min + gen.p_max);
      y[L.qg[t][g]] = 0.5 * (gen.q_min + gen.q_max);
    }
    for (std::size_t s = 0; s < sys.storages.size(); ++s) y[L.energy[t][s]] = pb.e_start[s];
  }
  const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
  std::vector<double> lo(static_cast<std::size_t>(pb.size()), 0.0), hi(static_cast<std::size_t>(pb.size()), 0.0);
  for (const Inequality& q : L.inequalities) {
    if (q.kind == BoundKind::lower) lo[static_cast<std::size_t>(q.var)] = q.bound;
    if (q.kind == BoundKind::upper) hi[static_cast<std::size_t>(q.var)] = q.bound;
  }
  for (const Inequality& q : L.inequalities) {
    const double s = q.kind == BoundKind::line
                         ? std::max(eval_inequality(pb, ys, q), 0.5 * q.bound)
                         : 0.5 * (hi[static_cast<std::size_t>(q.var)] - lo[static_cast<std::size_t>(q.var)]);
    y[q.slack] = s;
    y[q.dual] = mu / s;
  }
  return y;
}

}  // namespace mpcopf
