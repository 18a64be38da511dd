#include <gtest/gtest.h>

#include <mpcopf/mpc_driver.hpp>

#include "random_points.hpp"
#include "test_util.hpp"

using namespace mpcopf;
using namespace mpcopf::test;

namespace {

Vector vec(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

SparseMatrix sparse(const Eigen::MatrixXd& m) { return m.sparseView(0.0, 0.0); }

// Two regions {0,1} and {2,3} of a dense 4x4 system.
std::vector<RegionSubproblem> split_4x4(const Eigen::MatrixXd& h, const Vector& r) {
  const std::vector<std::vector<int>> idx{{0, 1}, {2, 3}};
  std::vector<RegionSubproblem> subs(2);
  for (int k = 0; k < 2; ++k) {
    auto& s = subs[static_cast<std::size_t>(k)];
    s.region = k;
    s.var_indices = idx[static_cast<std::size_t>(k)];
    s.local_block = sparse(h.block(2 * k, 2 * k, 2, 2));
    s.local_residual = r.segment(2 * k, 2);
    s.neighbor_coupling.push_back({1 - k, sparse(h.block(2 * k, 2 * (1 - k), 2, 2))});
  }
  return subs;
}

Partition parse_bits(const std::string& s) {
  Partition p;
  for (char c : s) {
    p.region_of.push_back(c - '0');
    p.k = std::max(p.k, c - '0' + 1);
  }
  return p;
}

struct Fixture {
  std::shared_ptr<const PowerSystem> sys;
  HorizonProblem pb;
};

Fixture make(const std::string& name, int horizon, bool islands = false) {
  auto sys = std::make_shared<const PowerSystem>(load_case(name, islands));
  return {sys, build_horizon_problem(sys, TimeSeries::constant(*sys, static_cast<std::size_t>(horizon)), 0, horizon,
                                     initial_energy(*sys))};
}

Partition sp_partition(const std::string& name, int k) {
  return parse_partition(slurp(fixture_path(name + "_reference_k" + std::to_string(k) + ".json")), 14);
}

DistributedReport run(Fixture f, const Partition& p, OcdMethod m, DistributedOptions d = {}) {
  return solve_distributed(f.pb, p, m, d);
}

}  // namespace

TEST(RegionBlocks, ReassembleFullHessian) {
  Fixture f = make("case14_like", 2);
  std::mt19937_64 rng(3);
  const Vector y = random_interior_point(f.pb, rng);
  const KktSystem kkt = assemble_hessian(f.pb, y);
  const Partition p = sp_partition("case14", 2);
  const auto subs = split_kkt_blocks(kkt, p, f.pb.layout);
  const Eigen::MatrixXd dense(kkt.hessian);
  Eigen::MatrixXd rebuilt = Eigen::MatrixXd::Zero(dense.rows(), dense.cols());
  Vector r = Vector::Zero(kkt.residual.size());
  for (const auto& s : subs) {
    const Eigen::MatrixXd b(s.local_block);
    for (std::size_t i = 0; i < s.var_indices.size(); ++i)
      for (std::size_t j = 0; j < s.var_indices.size(); ++j)
        rebuilt(s.var_indices[i], s.var_indices[j]) = b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    for (const auto& c : s.neighbor_coupling) {
      const Eigen::MatrixXd cb(c.block);
      const auto& cols = subs[static_cast<std::size_t>(c.neighbor)].var_indices;
      for (std::size_t i = 0; i < s.var_indices.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
          rebuilt(s.var_indices[i], cols[j]) = cb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    scatter(r, s.var_indices, s.local_residual);
  }
  EXPECT_EQ(rebuilt, dense);
  EXPECT_EQ(r, kkt.residual);
}

TEST(OcdStep, IdentityBlockNegatesResidual) {
  RegionSubproblem sub;
  sub.local_block = sparse(Eigen::MatrixXd::Identity(2, 2));
  sub.local_residual = Vector{{2.0, -2.0}};
  const RegionFactor f(sub, {true, true});
  EXPECT_EQ(ocd_step(sub, f), (Vector{{-2.0, 2.0}}));
}

TEST(OcdStep, RegionBlockMatchesDenseSolve) {
  Fixture f = make("case14_like", 1);
  std::mt19937_64 rng(5);
  const Vector y = random_interior_point(f.pb, rng);
  const KktSystem kkt = assemble_hessian(f.pb, y);
  const auto subs = split_kkt_blocks(kkt, sp_partition("case14", 3), f.pb.layout);
  for (const auto& s : subs) {
    const RegionFactor rf(s, primal_mask(f.pb.layout, s.var_indices));
    if (rf.factor.regularization() > 0.0) continue;
    const Vector dense = Eigen::MatrixXd(s.local_block).fullPivLu().solve(-s.local_residual);
    EXPECT_LT((ocd_step(s, rf) - dense).lpNorm<Eigen::Infinity>(), 1e-10 * (1.0 + dense.lpNorm<Eigen::Infinity>()));
  }
}

TEST(OcdcStep, FourByFourMatchesOracle) {
  const auto j = fixture_json("small_oracles.json")["two_region_4x4"];
  Eigen::MatrixXd h(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) h(i, k) = j["H"][static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  const Vector r = vec(j["r"]);
  const auto subs = split_4x4(h, r);
  const std::vector<RegionFactor> factors{RegionFactor(subs[0], {true, true}), RegionFactor(subs[1], {true, true})};
  Vector ocd(4), corr(4), ocdc(4);
  for (int k = 0; k < 2; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    ocd.segment(2 * k, 2) = ocd_step(subs[ku], factors[ku]);
    const Vector c = correction_term(subs, factors, k);
    corr.segment(2 * k, 2) = c;
    ocdc.segment(2 * k, 2) = ocdc_step(subs[ku], factors[ku], c);
  }
  EXPECT_LT((ocd - vec(j["ocd_step"])).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LT((corr - vec(j["correction"])).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LT((ocdc - vec(j["ocdc_step"])).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LT((ocdc - vec(j["ocdc_by_elimination"])).lpNorm<Eigen::Infinity>(), 1e-12);
  // The corrected step is closer to the full Newton step than the plain one.
  const Vector newton = vec(j["newton_step"]);
  EXPECT_LT((ocdc - newton).norm(), (ocd - newton).norm());
}

TEST(OcdcStep, ZeroCorrectionReducesToOcd) {
  Fixture f = make("case5_demo", 1);
  std::mt19937_64 rng(8);
  const KktSystem kkt = assemble_hessian(f.pb, random_interior_point(f.pb, rng));
  const auto subs = split_kkt_blocks(kkt, parse_bits("00110"), f.pb.layout);
  for (const auto& s : subs) {
    const RegionFactor rf(s, primal_mask(f.pb.layout, s.var_indices));
    EXPECT_EQ(ocdc_step(s, rf, Vector::Zero(s.local_residual.size())), ocd_step(s, rf));
  }
}

TEST(OcdcStep, CorrectionSupportOnCoupledRows) {
  Fixture f = make("case14_like", 1);
  std::mt19937_64 rng(9);
  const KktSystem kkt = assemble_hessian(f.pb, random_interior_point(f.pb, rng));
  const auto subs = split_kkt_blocks(kkt, sp_partition("case14", 2), f.pb.layout);
  std::vector<RegionFactor> factors;
  for (const auto& s : subs) factors.emplace_back(s, primal_mask(f.pb.layout, s.var_indices));
  for (int k = 0; k < 2; ++k) {
    const auto& s = subs[static_cast<std::size_t>(k)];
    std::vector<char> coupled(s.var_indices.size(), 0);
    for (const auto& c : s.neighbor_coupling)
      for (Eigen::Index col = 0; col < c.block.outerSize(); ++col)
        for (SparseMatrix::InnerIterator it(c.block, col); it; ++it) coupled[static_cast<std::size_t>(it.row())] = 1;
    const Vector corr = correction_term(subs, factors, k);
    int n_coupled = 0;
    for (std::size_t i = 0; i < coupled.size(); ++i) {
      n_coupled += coupled[i];
      if (!coupled[i]) EXPECT_EQ(corr[static_cast<Eigen::Index>(i)], 0.0);
    }
    EXPECT_GT(n_coupled, 0);
    EXPECT_LT(n_coupled, static_cast<int>(coupled.size()) / 2);
  }
}

TEST(ConvergenceTime, SlowestRegionMedian) {
  EXPECT_DOUBLE_EQ(convergence_time(10, {{0.2}, {0.3}}), 3.0);
  EXPECT_DOUBLE_EQ(convergence_time(10, {{0.1, 0.2, 0.9}, {0.3, 0.25, 0.28}}), 2.8);
  EXPECT_DOUBLE_EQ(convergence_time(1, {{0.5}}), 0.5);
  EXPECT_DOUBLE_EQ(convergence_time(4, {{0.1, 0.3}}), 0.8);
}

TEST(ConvergenceTime, ReportMatchesRecordedSamples) {
  const DistributedReport r = run(make("case5_demo", 2), parse_bits("00110"), OcdMethod::ocdc);
  ASSERT_TRUE(r.converged);
  ASSERT_EQ(r.per_region_step_seconds.size(), 2u);
  EXPECT_EQ(r.per_region_step_seconds[0].size(), static_cast<std::size_t>(r.iterations));
  EXPECT_DOUBLE_EQ(r.convergence_time, convergence_time(r.iterations, r.per_region_step_seconds));
  EXPECT_EQ(r.trace.size(), static_cast<std::size_t>(2 * r.iterations));
}

TEST(Distributed, SingleRegionEqualsCentralized) {
  Fixture f = make("case5_demo", 3);
  Fixture g = f;
  const SolveReport c = solve_centralized(f.pb);
  const DistributedReport o = solve_distributed(g.pb, Partition::single(5), OcdMethod::ocdc);
  ASSERT_TRUE(c.converged);
  EXPECT_EQ(o.iterations, c.iterations);
  EXPECT_EQ(o.solution, c.solution);
  EXPECT_EQ(o.total_scalars_exchanged, 0);
}

TEST(Distributed, CorrectedMethodNeedsFewerIterations) {
  for (int n : {1, 3}) {
    const Partition p = sp_partition("case14", 2);
    const DistributedReport ocd = run(make("case14_like", n), p, OcdMethod::ocd);
    const DistributedReport ocdc = run(make("case14_like", n), p, OcdMethod::ocdc);
    ASSERT_TRUE(ocd.converged && ocdc.converged) << n;
    EXPECT_LT(ocdc.iterations, ocd.iterations) << n;
  }
}

TEST(Distributed, SpectralBeatsArbitraryPartition) {
  for (int k : {2, 3}) {
    const Partition arb =
        parse_partition(slurp(data_path("partitions/case14_arbitrary_k" + std::to_string(k) + ".json")), 14);
    const DistributedReport sp = run(make("case14_like", 3), sp_partition("case14", k), OcdMethod::ocdc);
    const DistributedReport ar = run(make("case14_like", 3), arb, OcdMethod::ocdc);
    ASSERT_TRUE(sp.converged && ar.converged) << k;
    EXPECT_LT(sp.iterations, ar.iterations) << k;
  }
}

TEST(Distributed, SolutionMatchesCentralized) {
  Fixture f = make("case14_like", 3);
  Fixture g = f;
  const SolveReport c = solve_centralized(f.pb);
  const DistributedReport o = solve_distributed(g.pb, sp_partition("case14", 3), OcdMethod::ocdc);
  ASSERT_TRUE(c.converged && o.converged);
  EXPECT_LT(std::abs(o.objective - c.objective), 1e-4 * std::abs(c.objective));
  const auto& L = f.pb.layout;
  double dist = 0.0;
  for (int i = 0; i < L.size(); ++i)
    if (is_primal(L.role[static_cast<std::size_t>(i)]) && L.role[static_cast<std::size_t>(i)] != VarRole::slack)
      dist = std::max(dist, std::abs(o.solution[i] - c.solution[i]));
  EXPECT_LE(dist, 1e-3);
}

TEST(Distributed, DecoupledIslandsMatchCentralizedEveryIterate) {
  auto sys = std::make_shared<const PowerSystem>(load_case("two_island_demo", true));
  TimeSeries ts = TimeSeries::constant(*sys, 3);
  ASSERT_FALSE(ts.wind_power.empty());
  for (auto& [bus, w] : ts.wind_power) std::fill(w.begin(), w.end(), 0.2);
  const Partition p = parse_bits("000111");
  for (OcdMethod m : {OcdMethod::ocd, OcdMethod::ocdc}) {
    HorizonProblem a = build_horizon_problem(sys, ts, 0, 3, initial_energy(*sys));
    HorizonProblem b = a;
    std::vector<Vector> ic, id;
    SolverOptions so;
    so.on_iterate = [&](int, const Vector& y) { ic.push_back(y); };
    const SolveReport c = solve_centralized(a, so);
    DistributedOptions d;
    d.solver.on_iterate = [&](int, const Vector& y) { id.push_back(y); };
    const DistributedReport o = solve_distributed(b, p, m, d);
    ASSERT_TRUE(c.converged);
    EXPECT_EQ(o.iterations, c.iterations);
    ASSERT_EQ(ic.size(), id.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ic.size(); ++i) worst = std::max(worst, (ic[i] - id[i]).lpNorm<Eigen::Infinity>());
    EXPECT_LT(worst, 1e-9) << to_string(m);
    EXPECT_EQ(o.total_scalars_exchanged, 0);
  }
}

TEST(Distributed, ParallelMatchesSequential) {
  DistributedOptions par;
  par.parallel = true;
  const Partition p = sp_partition("case14", 3);
  const DistributedReport s = run(make("case14_like", 2), p, OcdMethod::ocdc);
  const DistributedReport q = run(make("case14_like", 2), p, OcdMethod::ocdc, par);
  EXPECT_EQ(s.iterations, q.iterations);
  EXPECT_EQ(s.solution, q.solution);
  EXPECT_EQ(s.convergence_time, q.convergence_time);
}

TEST(Distributed, MessagePayloadAudit) {
  Fixture f = make("case14_like", 1);
  const Partition p = sp_partition("case14", 2);
  DistributedOptions d;
  d.keep_messages = true;
  std::vector<ExchangeMessage> msgs;
  const DistributedReport r = solve_distributed(f.pb, p, OcdMethod::ocdc, flat_start(f.pb, 0.1), d, &msgs);
  ASSERT_TRUE(r.converged);
  ASSERT_FALSE(msgs.empty());
  const auto idx = region_indices(f.pb.layout, p);
  long long total = 0;
  for (const auto& m : msgs) {
    EXPECT_NE(m.from_region, m.to_region);
    EXPECT_EQ(m.payload_scalars,
              static_cast<int>(m.boundary_values.size() + m.correction_summand.size()) + 1);
    // Boundary values belong to the sender; correction rows to the receiver.
    const auto& own = idx[static_cast<std::size_t>(m.from_region)];
    const auto& dest = idx[static_cast<std::size_t>(m.to_region)];
    for (const auto& [i, v] : m.boundary_values) EXPECT_TRUE(std::binary_search(own.begin(), own.end(), i));
    for (const auto& [i, v] : m.correction_summand) EXPECT_TRUE(std::binary_search(dest.begin(), dest.end(), i));
    EXPECT_LT(m.boundary_values.size() + m.correction_summand.size(), own.size() / 2);
    total += m.payload_scalars;
  }
  EXPECT_EQ(total, r.total_scalars_exchanged);
  EXPECT_EQ(msgs.size(), static_cast<std::size_t>(2 * r.iterations));
}

TEST(Distributed, DivergenceIsReported) {
  DistributedOptions d;
  d.solver.max_iter = 3;
  const DistributedReport r = run(make("case5_demo", 1), parse_bits("01201"), OcdMethod::ocd, d);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3);
  EXPECT_FALSE(r.diagnostics.empty());
}
