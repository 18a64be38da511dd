// Acceptance run: one pass/fail line per criterion.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>

#include <mpcopf/cli_report.hpp>

#include "random_points.hpp"
#include "test_util.hpp"

using namespace mpcopf;
using namespace mpcopf::test;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

// Converged solutions collected for the feasibility check.
struct Solved {
  HorizonProblem pb;
  Vector y;
  std::string label;
};
std::vector<Solved> g_solutions;

std::shared_ptr<const PowerSystem> shared_case(const std::string& name, bool islands = false) {
  return std::make_shared<const PowerSystem>(load_case(name, islands));
}

TimeSeries series_for(const std::string& case_name, const PowerSystem& sys) {
  return load_series(case_name == "case5_demo" ? "case5_24h" : "case14_24h", sys);
}

Partition arbitrary(const std::string& case_name, int k) {
  const bool small = case_name == "case5_demo";
  return parse_partition(
      slurp(data_path(std::string("partitions/") + (small ? "case5" : "case14") + "_arbitrary_k" + std::to_string(k) + ".json")),
      small ? 5 : 14);
}

Partition spectral(const std::shared_ptr<const PowerSystem>& sys, const TimeSeries& ts, int k) {
  return compute_sp_partition(sys, ts, 0, k, 7).spectral.partition;
}

double primal_distance(const VariableLayout& L, const Vector& a, const Vector& b) {
  double d = 0.0;
  for (int i = 0; i < L.size(); ++i)
    if (is_primal(L.role[static_cast<std::size_t>(i)])) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Outcome solution_equivalence() {
  Outcome o;
  double worst_obj = 0.0, worst_dist = 0.0;
  for (const std::string name : {"case5_demo", "case14_like"}) {
    auto sys = shared_case(name);
    const TimeSeries ts = series_for(name, *sys);
    for (int n : {1, 3}) {
      HorizonProblem base = build_horizon_problem(sys, ts, 0, n, initial_energy(*sys));
      HorizonProblem cp = base;
      const SolveReport c = solve_centralized(cp);
      o.require(c.converged, name + " centralized N=" + std::to_string(n));
      g_solutions.push_back({cp, c.solution, name + " centralized"});
      for (int k : {2, 3}) {
        for (const auto& [label, part] : {std::pair{std::string("SP"), spectral(sys, ts, k)},
                                          std::pair{std::string("arbitrary"), arbitrary(name, k)}}) {
          HorizonProblem dp = base;
          const DistributedReport d = solve_distributed(dp, part, OcdMethod::ocdc);
          const std::string tag = name + " N=" + std::to_string(n) + " K=" + std::to_string(k) + " " + label;
          o.require(d.converged, tag + " did not converge");
          if (!d.converged) continue;
          g_solutions.push_back({dp, d.solution, tag});
          const double rel = std::abs(d.objective - c.objective) / std::abs(c.objective);
          const double dist = primal_distance(base.layout, d.solution, c.solution);
          worst_obj = std::max(worst_obj, rel);
          worst_dist = std::max(worst_dist, dist);
          o.require(rel <= 1e-4, tag + " objective gap " + num(rel));
          o.require(dist <= 1e-3, tag + " primal distance " + num(dist));
        }
      }
    }
  }
  if (o.pass) o.detail = "max relative objective gap " + num(worst_obj) + ", max primal distance " + num(worst_dist);
  return o;
}

Outcome ocdc_beats_ocd() {
  Outcome o;
  auto sys = shared_case("case14_like");
  const TimeSeries ts = series_for("case14_like", *sys);
  for (int k : {2, 3}) {
    const Partition p = spectral(sys, ts, k);
    for (int n : {1, 3}) {
      HorizonProblem a = build_horizon_problem(sys, ts, 0, n, initial_energy(*sys));
      HorizonProblem b = a;
      const DistributedReport ocd = solve_distributed(a, p, OcdMethod::ocd);
      const DistributedReport ocdc = solve_distributed(b, p, OcdMethod::ocdc);
      const std::string tag = "K=" + std::to_string(k) + " N=" + std::to_string(n);
      o.require(ocd.converged && ocdc.converged, tag + " did not converge");
      o.require(ocdc.iterations < ocd.iterations,
                tag + " OCD-C " + std::to_string(ocdc.iterations) + " vs OCD " + std::to_string(ocd.iterations));
      o.detail += (o.detail.empty() ? "" : ", ") + tag + ": " + std::to_string(ocdc.iterations) + " < " +
                  std::to_string(ocd.iterations);
    }
  }
  return o;
}

MpcResult mpc_run(const std::shared_ptr<const PowerSystem>& sys, const TimeSeries& ts, int n, int steps,
                  SolveMethod m, std::optional<Partition> p) {
  MpcConfig cfg;
  cfg.horizon = n;
  cfg.steps_to_run = steps;
  cfg.method = m;
  cfg.partition = std::move(p);
  return run_mpc(sys, ts, cfg);
}

double mean_iterations(const MpcResult& r) {
  double s = 0.0;
  for (const auto& st : r.per_step) s += iterations(st);
  return s / static_cast<double>(r.per_step.size());
}

Outcome partition_quality() {
  Outcome o;
  auto sys = shared_case("case14_like");
  const TimeSeries ts = series_for("case14_like", *sys);
  std::string summary;
  for (int k : {2, 3}) {
    const Partition sp = spectral(sys, ts, k), arb = arbitrary("case14_like", k);
    for (int n : {1, 3, 6}) {
      const std::string tag = "K=" + std::to_string(k) + " N=" + std::to_string(n);
      try {
        const MpcResult a = mpc_run(sys, ts, n, 10, SolveMethod::ocdc, sp);
        const MpcResult b = mpc_run(sys, ts, n, 10, SolveMethod::ocdc, arb);
        const double ia = mean_iterations(a), ib = mean_iterations(b);
        o.require(ia < ib, tag + " SP " + num(ia) + " vs arbitrary " + num(ib));
        summary += (summary.empty() ? "" : ", ") + tag + ": " + num(ia) + " < " + num(ib);
      } catch (const MpcError& e) {
        o.require(false, tag + ": " + e.what());
      }
    }
  }
  if (o.pass) o.detail = "mean OCD-C iterations over 10 steps, " + summary;
  return o;
}

Outcome partition_robustness() {
  Outcome o;
  auto sys = shared_case("case14_like");
  const TimeSeries ts = series_for("case14_like", *sys);
  const int steps = 20;
  std::string summary;
  for (int k : {2, 3}) {
    try {
      const MpcResult a = mpc_run(sys, ts, 3, steps, SolveMethod::ocdc, spectral(sys, ts, k));
      const MpcResult b = mpc_run(sys, ts, 3, steps, SolveMethod::ocdc, arbitrary("case14_like", k));
      int it_wins = 0, time_wins = 0;
      for (int t = 0; t < steps; ++t) {
        const auto tu = static_cast<std::size_t>(t);
        if (iterations(a.per_step[tu]) < iterations(b.per_step[tu])) ++it_wins;
        if (step_convergence_time(a.per_step[tu]) < step_convergence_time(b.per_step[tu])) ++time_wins;
      }
      o.require(it_wins == steps, "K=" + std::to_string(k) + " iteration wins " + std::to_string(it_wins));
      o.require(time_wins == steps, "K=" + std::to_string(k) + " convergence-time wins " + std::to_string(time_wins));
      summary += (summary.empty() ? "" : ", ") + std::string("K=") + std::to_string(k) + ": SP wins " +
                 std::to_string(std::min(it_wins, time_wins)) + "/" + std::to_string(steps);
    } catch (const MpcError& e) {
      o.require(false, "K=" + std::to_string(k) + ": " + e.what());
    }
  }
  if (o.pass) o.detail = "N=3, iterations and convergence time per step, " + summary;
  return o;
}

Outcome horizon_benefit() {
  Outcome o;
  auto sys = shared_case("case5_demo");
  const TimeSeries ts = load_series("case5_valley_peak", *sys);
  double prev_cost = 0.0, prev_ramp = 0.0;
  std::string summary;
  for (int n : {1, 3, 6}) {
    const MpcResult r = mpc_run(sys, ts, n, 12, SolveMethod::centralized, std::nullopt);
    if (n > 1) {
      o.require(r.total_cost <= prev_cost * (1.0 + 1e-3), "cost rises at N=" + std::to_string(n));
      o.require(r.total_ramping <= prev_ramp, "ramping rises at N=" + std::to_string(n));
    }
    prev_cost = r.total_cost;
    prev_ramp = r.total_ramping;
    summary += (summary.empty() ? "" : ", ") + std::string("N=") + std::to_string(n) + " cost " + num(r.total_cost) +
               " ramping " + num(r.total_ramping);
  }
  if (o.pass) o.detail = summary;
  return o;
}

Outcome numerical_suite() {
  Outcome o;
  const double mu = 0.05;
  int points = 0;
  double worst_grad = 0.0, worst_hv = 0.0;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const std::string name : {"case5_demo", "case14_like"}) {
    auto sys = shared_case(name);
    const HorizonProblem pb =
        build_horizon_problem(sys, TimeSeries::constant(*sys, 2), 0, 2, initial_energy(*sys));
    for (int trial = 0; trial < 10; ++trial, ++points) {
      Vector y = random_interior_point(pb, rng);
      const Vector r = eval_kkt_residual(pb, span_of(y), mu);
      for (int i = 0; i < pb.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(y[i]));
        const double keep = y[i];
        y[i] = keep + h;
        const double fp = eval_lagrangian(pb, span_of(y), mu);
        y[i] = keep - h;
        const double fm = eval_lagrangian(pb, span_of(y), mu);
        y[i] = keep;
        const double fd = (fp - fm) / (2 * h);
        worst_grad = std::max(worst_grad, std::abs(r[i] - fd) / std::max(1.0, std::abs(fd)));
      }
      Vector v(pb.size());
      for (int i = 0; i < pb.size(); ++i) v[i] = normal(rng);
      const SparseMatrix hm = assemble_hessian_matrix(pb, span_of(y), mu);
      const double eps = 1e-6;
      const Vector yp = y + eps * v, ym = y - eps * v;
      const Vector fd = (eval_kkt_residual(pb, span_of(yp), mu) - eval_kkt_residual(pb, span_of(ym), mu)) / (2 * eps);
      worst_hv = std::max(worst_hv, (hm * v - fd).lpNorm<Eigen::Infinity>() / std::max(1.0, fd.lpNorm<Eigen::Infinity>()));
    }
  }
  o.require(worst_grad < 1e-5, "(a) gradient error " + num(worst_grad));
  o.require(worst_hv < 1e-4, "(b) Hessian-vector error " + num(worst_hv));

  // (c) affinity against a dense brute-force accumulation.
  double worst_aff = 0.0;
  for (const std::string name : {"case5_demo", "case14_like"}) {
    auto sys = shared_case(name);
    HorizonProblem pb = build_horizon_problem(sys, TimeSeries::constant(*sys, 1), 0, 1, initial_energy(*sys));
    const SolveReport s = solve_centralized(pb);
    const SparseMatrix h = assemble_hessian_matrix(pb, span_of(s.solution), pb.barrier_mu);
    const ComplexMatrix ybus = build_admittance(*sys);
    const AffinityMatrix aff = compute_affinity(h, ybus, pb.layout);
    const Eigen::MatrixXd dense(h);
    const auto nb = static_cast<Eigen::Index>(sys->bus_count());
    Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(nb, nb);
    for (Eigen::Index i = 0; i < dense.rows(); ++i)
      for (Eigen::Index j = 0; j < dense.cols(); ++j)
        ref(pb.layout.bus_of[static_cast<std::size_t>(i)] - 1, pb.layout.bus_of[static_cast<std::size_t>(j)] - 1) +=
            std::abs(dense(i, j));
    ref += ybus.cwiseAbs();
    ref = 0.5 * (ref + Eigen::MatrixXd(ref.transpose()));
    ref.diagonal().setZero();
    worst_aff = std::max(worst_aff, (aff.a - ref).cwiseAbs().maxCoeff());
  }
  o.require(worst_aff <= 1e-12, "(c) affinity error " + num(worst_aff));

  // (d) two planted blocks recovered exactly.
  AffinityMatrix planted;
  planted.a = Eigen::MatrixXd::Zero(8, 8);
  const std::vector<int> block{0, 1, 0, 1, 1, 0, 0, 1};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if (i != j && block[static_cast<std::size_t>(i)] == block[static_cast<std::size_t>(j)]) planted.a(i, j) = 1.0 + 0.05 * (i * j % 7);
  bool recovered = true;
  for (std::uint64_t seed : {1ULL, 7ULL, 99ULL}) recovered = recovered && spectral_partition(planted, 2, seed).partition.region_of == block;
  o.require(recovered, "(d) planted blocks not recovered");

  // (e) mismatch and feasibility at every converged solution.
  double worst_mismatch = 0.0, worst_infeas = 0.0;
  for (const auto& s : g_solutions) {
    worst_mismatch = std::max(worst_mismatch, constraint_mismatch(s.pb, span_of(s.y)));
    for (const auto& q : s.pb.layout.inequalities) worst_infeas = std::max(worst_infeas, -eval_inequality(s.pb, span_of(s.y), q));
  }
  o.require(!g_solutions.empty(), "(e) no solutions collected");
  o.require(worst_mismatch < 1e-3, "(e) mismatch " + num(worst_mismatch));
  o.require(worst_infeas <= 1e-6, "(e) infeasibility " + num(worst_infeas));
  if (o.pass)
    o.detail = std::to_string(points) + " points: gradient " + num(worst_grad) + ", Hv " + num(worst_hv) + ", affinity " +
               num(worst_aff) + ", mismatch " + num(worst_mismatch) + " over " + std::to_string(g_solutions.size()) +
               " solutions";
  return o;
}

Outcome decoupled_equivalence() {
  Outcome o;
  auto sys = shared_case("two_island_demo", true);
  TimeSeries ts = TimeSeries::constant(*sys, 3);
  for (auto& [bus, w] : ts.wind_power) std::fill(w.begin(), w.end(), 0.2);
  const Partition p = parse_partition(R"({"K": 2, "region_of": {"1": 0, "2": 0, "3": 0, "4": 1, "5": 1, "6": 1}})", 6);
  for (int n : {1, 3}) {
    HorizonProblem base = build_horizon_problem(sys, ts, 0, n, initial_energy(*sys));
    std::vector<Vector> ref;
    SolverOptions so;
    so.on_iterate = [&](int, const Vector& y) { ref.push_back(y); };
    HorizonProblem cp = base;
    const SolveReport c = solve_centralized(cp, so);
    o.require(c.converged, "centralized N=" + std::to_string(n));
    for (OcdMethod m : {OcdMethod::ocd, OcdMethod::ocdc}) {
      std::vector<Vector> its;
      DistributedOptions d;
      d.solver.on_iterate = [&](int, const Vector& y) { its.push_back(y); };
      HorizonProblem dp = base;
      const DistributedReport r = solve_distributed(dp, p, m, d);
      const std::string tag = std::string(to_string(m)) + " N=" + std::to_string(n);
      o.require(r.iterations == c.iterations, tag + " iterations " + std::to_string(r.iterations));
      bool same = its.size() == ref.size();
      for (std::size_t i = 0; same && i < its.size(); ++i) same = (its[i] - ref[i]).lpNorm<Eigen::Infinity>() <= 1e-9;
      o.require(same, tag + " iterates differ");
    }
    if (o.pass && n == 3) o.detail = "iterates agree, " + std::to_string(c.iterations) + " iterations at N=3";
  }
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MPCOPF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  Outcome o;
  const std::string c14 = " --case " + data_path("cases/case14_like.json") + " --series " + data_path("series/case14_24h.csv");
  const std::vector<std::pair<std::string, std::string>> commands{
      {"solve", "solve" + c14 + " --horizon 3 --method centralized OCD OCD-C --partition sp --regions 3"},
      {"partition", "partition" + c14 + " --regions 3 --seed 11"},
      {"compare", "compare" + c14 + " --horizon 1 3 --method centralized OCD-C --partition sp " +
                      data_path("partitions/case14_arbitrary_k2.json") + " --steps 3"},
      {"mpc", "mpc --case " + data_path("cases/case5_demo.json") + " --series " +
                  data_path("series/case5_valley_peak.csv") + " --horizon 1 6 --steps 12"}};
  const fs::path root = fs::temp_directory_path() / "mpcopf_acceptance";
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    std::map<std::string, std::string> outputs[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path dir = root / (name + std::to_string(run));
      fs::remove_all(dir);
      fs::create_directories(dir);
      o.require(run_cli(args + " --out " + dir.string()) == 0, name + " exit code");
      for (const auto& e : fs::directory_iterator(dir)) outputs[run][e.path().filename().string()] = slurp(e.path().string());
    }
    o.require(!outputs[0].empty() && outputs[0] == outputs[1], name + " outputs differ");
    files += outputs[0].size();
  }
  fs::remove_all(root);
  if (o.pass) o.detail = "4 commands, " + std::to_string(files) + " files byte-identical";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"solution equivalence", solution_equivalence},
      {"OCD-C beats OCD", ocdc_beats_ocd},
      {"partition quality", partition_quality},
      {"partition robustness", partition_robustness},
      {"horizon benefit", horizon_benefit},
      {"numerical correctness", numerical_suite},
      {"decoupled equivalence", decoupled_equivalence},
      {"determinism", determinism}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("[%s] %zu %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
