#pragma once

// Bus affinity from the Lagrangian Hessian and the admittance matrix, and
// normalized spectral clustering of buses into K regions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "formulation.hpp"

namespace mpcopf {

struct AffinityMatrix {
  Eigen::MatrixXd a;  // B x B, symmetric, zero diagonal
};

/// A[m][n] = sum over i in S_m, j in S_n of |H_ij|, plus |Y_mn|; diagonal 0.
inline AffinityMatrix compute_affinity(const SparseMatrix& hessian, const ComplexMatrix& ybus,
                                       const VariableLayout& layout) {
  const Eigen::Index nb = ybus.rows();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(nb, nb);
  for (Eigen::Index c = 0; c < hessian.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(hessian, c); it; ++it) {
      const int m = layout.bus_of[static_cast<std::size_t>(it.row())] - 1;
      const int n = layout.bus_of[static_cast<std::size_t>(c)] - 1;
      acc(m, n) += std::abs(it.value());
    }
  AffinityMatrix out;
  out.a = Eigen::MatrixXd::Zero(nb, nb);
  for (Eigen::Index m = 0; m < nb; ++m)
    for (Eigen::Index n = m + 1; n < nb; ++n) {
      const double v = 0.5 * (acc(m, n) + acc(n, m)) + std::abs(ybus(m, n));
      out.a(m, n) = v;
      out.a(n, m) = v;
    }
  return out;
}

inline AffinityMatrix compute_affinity(const KktSystem& kkt, const ComplexMatrix& ybus, const VariableLayout& layout) {
  return compute_affinity(kkt.hessian, ybus, layout);
}

class PartitionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bus-to-region assignment. Region labels are canonical: ordered by the
/// smallest bus id each region contains.
struct Partition {
  int k = 1;
  std::vector<int> region_of;  // by bus position (bus id - 1)

  int region(int bus_id) const { return region_of.at(static_cast<std::size_t>(bus_id - 1)); }
  bool operator==(const Partition&) const = default;

  /// Relabels regions in order of first appearance by bus id.
  void canonicalize() {
    std::map<int, int> relabel;
    for (int& r : region_of) {
      auto [it, inserted] = relabel.try_emplace(r, static_cast<int>(relabel.size()));
      r = it->second;
    }
    k = static_cast<int>(relabel.size());
  }

  void validate(std::size_t buses) const {
    if (region_of.size() != buses)
      throw PartitionError("partition covers " + std::to_string(region_of.size()) + " buses, system has " +
                           std::to_string(buses));
    if (k < 1) throw PartitionError("partition must have at least one region");
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < region_of.size(); ++i) {
      const int r = region_of[i];
      if (r < 0 || r >= k) throw PartitionError("bus " + std::to_string(i + 1) + " has region out of range");
      ++count[static_cast<std::size_t>(r)];
    }
    for (int r = 0; r < k; ++r)
      if (count[static_cast<std::size_t>(r)] == 0) throw PartitionError("region " + std::to_string(r) + " is empty");
  }

  static Partition single(std::size_t buses) {
    Partition p;
    p.k = 1;
    p.region_of.assign(buses, 0);
    return p;
  }
};

struct Boundary {
  std::vector<int> tie_lines;       // positions in PowerSystem::branches
  std::vector<int> boundary_buses;  // bus ids, ascending
};

inline Boundary derive_boundary(const Partition& part, const PowerSystem& sys) {
  Boundary b;
  std::set<int> buses;
  for (std::size_t k = 0; k < sys.branches.size(); ++k) {
    const Branch& br = sys.branches[k];
    if (part.region(br.from_bus) != part.region(br.to_bus)) {
      b.tie_lines.push_back(static_cast<int>(k));
      buses.insert(br.from_bus);
      buses.insert(br.to_bus);
    }
  }
  b.boundary_buses.assign(buses.begin(), buses.end());
  return b;
}

// ---------------------------------------------------------------------------
// Partition files: {"K": k, "region_of": {"<bus>": r, ...}}

inline nlohmann::json partition_to_json(const Partition& p) {
  nlohmann::json j;
  j["K"] = p.k;
  nlohmann::json r = nlohmann::json::object();
  for (std::size_t i = 0; i < p.region_of.size(); ++i) r[std::to_string(i + 1)] = p.region_of[i];
  j["region_of"] = r;
  return j;
}

/// Writes region_of keys in numeric bus order.
inline std::string serialize_partition(const Partition& p) {
  std::string out = "{\n  \"K\": " + std::to_string(p.k) + ",\n  \"region_of\": {";
  for (std::size_t i = 0; i < p.region_of.size(); ++i) {
    out += i ? ",\n    " : "\n    ";
    out += "\"" + std::to_string(i + 1) + "\": " + std::to_string(p.region_of[i]);
  }
  out += "\n  }\n}\n";
  return out;
}

inline Partition parse_partition(const std::string& text, std::size_t buses) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("partition syntax error at byte " + std::to_string(e.byte));
  }
  Partition p;
  if (!j.contains("K") || !j["K"].is_number_integer()) throw InputError("partition: missing integer 'K'");
  if (!j.contains("region_of") || !j["region_of"].is_object()) throw InputError("partition: missing 'region_of'");
  p.k = j["K"].get<int>();
  p.region_of.assign(buses, -1);
  for (const auto& [key, val] : j["region_of"].items()) {
    int bus = 0;
    try {
      bus = std::stoi(key);
    } catch (const std::exception&) {
      throw InputError("partition: bad bus key '" + key + "'");
    }
    if (bus < 1 || bus > static_cast<int>(buses)) throw InputError("partition: unknown bus " + key);
    if (!val.is_number_integer()) throw InputError("partition: region of bus " + key + " is not an integer");
    p.region_of[static_cast<std::size_t>(bus - 1)] = val.get<int>();
  }
  for (std::size_t i = 0; i < buses; ++i)
    if (p.region_of[i] < 0) throw InputError("partition: bus " + std::to_string(i + 1) + " unassigned");
  try {
    p.validate(buses);
  } catch (const PartitionError& e) {
    throw InputError(std::string("partition: ") + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Spectral clustering

struct SpectralSettings {
  int restarts = 50;
  int reseeds = 10;
  int max_lloyd_iterations = 300;
};

struct SpectralResult {
  Partition partition;
  double within_cluster_sum = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Uniform [0, 1) from 53 random bits; independent of the standard
/// library's distribution implementation.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct KMeansRun {
  std::vector<int> label;
  double inertia = std::numeric_limits<double>::infinity();
  bool has_empty = true;
};

inline KMeansRun kmeans_pp(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int max_iter) {
  const Eigen::Index n = x.rows();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = unit_uniform(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    }
    centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - centers.row(c)).squaredNorm());
  }

  KMeansRun run;
  run.label.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (run.label[static_cast<std::size_t>(i)] != best) {
        run.label[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(run.label[static_cast<std::size_t>(i)]) += x.row(i);
      ++count[static_cast<std::size_t>(run.label[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (count[static_cast<std::size_t>(c)] > 0) centers.row(c) = sum.row(c) / count[static_cast<std::size_t>(c)];
    if (!changed) break;
  }
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  run.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = run.label[static_cast<std::size_t>(i)];
    ++count[static_cast<std::size_t>(c)];
    run.inertia += (x.row(i) - centers.row(c)).squaredNorm();
  }
  run.has_empty = std::any_of(count.begin(), count.end(), [](int c) { return c == 0; });
  return run;
}

}  // namespace detail

/// Normalized spectral clustering: M = D^-1/2 A D^-1/2, eigenvectors of the
/// K largest eigenvalues, row-normalized, then k-means++ with restarts.
/// Buses with zero affinity row sum are clustered afterwards by their
/// strongest admittance neighbor (or region 0 when `ybus` is absent).
inline SpectralResult spectral_partition(const AffinityMatrix& aff, int k, std::uint64_t seed,
                                         const ComplexMatrix* ybus = nullptr, const SpectralSettings& ss = {}) {
  const Eigen::Index nb = aff.a.rows();
  if (k < 1 || k > nb) throw PartitionError("K must lie in [1, B]");
  SpectralResult res;
  if (k == 1) {
    res.partition = Partition::single(static_cast<std::size_t>(nb));
    return res;
  }
  if (k == nb) {
    res.partition.k = k;
    res.partition.region_of.resize(static_cast<std::size_t>(nb));
    std::iota(res.partition.region_of.begin(), res.partition.region_of.end(), 0);
    res.warnings.push_back("K equals the bus count: every region is a single bus");
    return res;
  }

  Eigen::MatrixXd a = aff.a;
  a.diagonal().setZero();
  const Eigen::VectorXd deg = a.rowwise().sum();
  std::vector<Eigen::Index> active, isolated;
  for (Eigen::Index i = 0; i < nb; ++i) (deg[i] > 0.0 ? active : isolated).push_back(i);
  const auto na = static_cast<Eigen::Index>(active.size());
  if (na < k) throw PartitionError("fewer connected buses than regions");

  Eigen::MatrixXd m(na, na);
  for (Eigen::Index r = 0; r < na; ++r)
    for (Eigen::Index c = 0; c < na; ++c)
      m(r, c) = a(active[r], active[c]) / std::sqrt(deg[active[r]] * deg[active[c]]);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw PartitionError("eigendecomposition failed");
  Eigen::MatrixXd emb = eig.eigenvectors().rightCols(k);
  for (Eigen::Index r = 0; r < na; ++r) {
    const double nr = emb.row(r).norm();
    if (nr > 0.0) emb.row(r) /= nr;
  }

  detail::KMeansRun best;
  for (int attempt = 0; attempt <= ss.reseeds; ++attempt) {
    for (int r = 0; r < ss.restarts; ++r) {
      const std::uint64_t s = seed * 1000003ULL + static_cast<std::uint64_t>(attempt * ss.restarts + r);
      detail::KMeansRun run = detail::kmeans_pp(emb, k, s, ss.max_lloyd_iterations);
      if (run.has_empty) continue;
      if (run.inertia < best.inertia) best = std::move(run);
    }
    if (!best.has_empty) break;
  }
  if (best.has_empty) throw PartitionError("k-means left a region empty after re-seeding");

  Partition& p = res.partition;
  p.k = k;
  p.region_of.assign(static_cast<std::size_t>(nb), -1);
  for (Eigen::Index r = 0; r < na; ++r)
    p.region_of[static_cast<std::size_t>(active[r])] = best.label[static_cast<std::size_t>(r)];
  for (Eigen::Index i : isolated) {
    int region = 0;
    double strongest = 0.0;
    if (ybus)
      for (Eigen::Index j = 0; j < nb; ++j) {
        const int rj = p.region_of[static_cast<std::size_t>(j)];
        if (j != i && rj >= 0 && std::abs((*ybus)(i, j)) > strongest) {
          strongest = std::abs((*ybus)(i, j));
          region = rj;
        }
      }
    p.region_of[static_cast<std::size_t>(i)] = region;
    res.warnings.push_back("bus " + std::to_string(i + 1) + " has zero affinity; assigned to region " +
                           std::to_string(region));
  }
  p.canonicalize();
  res.within_cluster_sum = best.inertia;
  return res;
}

}  // namespace mpcopf
