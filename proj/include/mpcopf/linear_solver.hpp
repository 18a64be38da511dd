#pragma once

// Sparse solves for KKT blocks. A matrix is split into the connected
// components of its sparsity graph and each component is factorized on its
// own, so a block-diagonal system gives bit-identical results whether it is
// solved whole or block by block.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "formulation.hpp"

namespace mpcopf {

class FactorizationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct RegularizationSettings {
  double delta_initial = 1e-8;
  double growth = 10.0;
  double delta_max = 1e-2;
};

/// Restriction of a square sparse matrix to `rows` x `cols` (sorted index lists).
inline SparseMatrix extract_block(const SparseMatrix& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  std::vector<int> row_pos(static_cast<std::size_t>(m.rows()), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) row_pos[static_cast<std::size_t>(rows[i])] = static_cast<int>(i);
  std::vector<Triplet> trip;
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (SparseMatrix::InnerIterator it(m, cols[c]); it; ++it) {
      const int r = row_pos[static_cast<std::size_t>(it.row())];
      if (r >= 0) trip.emplace_back(r, static_cast<int>(c), it.value());
    }
  SparseMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  out.setFromTriplets(trip.begin(), trip.end());
  out.makeCompressed();
  return out;
}

/// Connected components of the (structurally symmetric) pattern, each a
/// sorted index list; components ordered by smallest index.
inline std::vector<std::vector<int>> pattern_components(const SparseMatrix& m) {
  const auto n = static_cast<std::size_t>(m.cols());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int v) {
    while (parent[static_cast<std::size_t>(v)] != v) {
      parent[static_cast<std::size_t>(v)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
      v = parent[static_cast<std::size_t>(v)];
    }
    return v;
  };
  for (Eigen::Index c = 0; c < m.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
      int a = find(static_cast<int>(it.row())), b = find(static_cast<int>(c));
      if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
  std::vector<int> slot(n, -1);
  std::vector<std::vector<int>> comps;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(find(static_cast<int>(i)));
    if (slot[r] < 0) {
      slot[r] = static_cast<int>(comps.size());
      comps.emplace_back();
    }
    comps[static_cast<std::size_t>(slot[r])].push_back(static_cast<int>(i));
  }
  return comps;
}

/// Factorization of one square block, with diagonal regularization of the
/// primal rows when the plain matrix is singular. `work` counts the factor
/// nonzeros and serves as a deterministic cost measure.
class BlockFactor {
public:
  BlockFactor() = default;

  BlockFactor(const SparseMatrix& block, const std::vector<bool>& primal_mask, const RegularizationSettings& rs = {}) {
    const std::vector<std::vector<int>> comps = pattern_components(block);
    for (const auto& comp : comps) {
      Part p;
      p.indices = comp;
      SparseMatrix sub = comps.size() == 1 ? block : extract_block(block, comp, comp);
      std::vector<bool> mask;
      for (int i : comp) mask.push_back(primal_mask[static_cast<std::size_t>(i)]);
      factorize(sub, mask, rs, p);
      work_ += p.work;
      parts_.push_back(std::move(p));
    }
    size_ = block.rows();
  }

  /// Solves block * x = rhs.
  Vector solve(const Vector& rhs) const {
    if (parts_.size() == 1) return parts_[0].lu->solve(rhs);
    Vector x(size_);
    for (const auto& p : parts_) {
      Vector local(static_cast<Eigen::Index>(p.indices.size()));
      for (std::size_t i = 0; i < p.indices.size(); ++i) local[static_cast<Eigen::Index>(i)] = rhs[p.indices[i]];
      const Vector sol = p.lu->solve(local);
      for (std::size_t i = 0; i < p.indices.size(); ++i) x[p.indices[i]] = sol[static_cast<Eigen::Index>(i)];
    }
    return x;
  }

  double regularization() const {
    double d = 0.0;
    for (const auto& p : parts_) d = std::max(d, p.delta);
    return d;
  }
  double work() const { return work_; }

private:
  using LU = Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>;
  struct Part {
    std::vector<int> indices;
    std::shared_ptr<LU> lu;
    double delta = 0.0;
    double work = 0.0;
  };

  static bool usable(const LU& lu, const SparseMatrix& m) {
    if (lu.info() != Eigen::Success) return false;
    // Near-singular pivots show up as non-finite or wildly inaccurate solves.
    const Vector probe = Vector::Ones(m.rows());
    const Vector x = lu.solve(probe);
    if (!x.allFinite()) return false;
    const double res = (m * x - probe).lpNorm<Eigen::Infinity>();
    return res <= 1e-6 * (1.0 + x.lpNorm<Eigen::Infinity>());
  }

  static void factorize(const SparseMatrix& m, const std::vector<bool>& mask, const RegularizationSettings& rs,
                        Part& p) {
    p.lu = std::make_shared<LU>();
    p.lu->analyzePattern(m);
    p.lu->factorize(m);
    if (usable(*p.lu, m)) {
      p.work = static_cast<double>(p.lu->nnzL() + p.lu->nnzU());
      return;
    }
    for (double delta = rs.delta_initial; delta <= rs.delta_max * (1.0 + 1e-12); delta *= rs.growth) {
      SparseMatrix reg = m;
      for (Eigen::Index i = 0; i < reg.rows(); ++i)
        if (mask[static_cast<std::size_t>(i)]) reg.coeffRef(i, i) += delta;
      reg.makeCompressed();
      p.lu = std::make_shared<LU>();
      p.lu->analyzePattern(reg);
      p.lu->factorize(reg);
      if (usable(*p.lu, reg)) {
        p.delta = delta;
        p.work = static_cast<double>(p.lu->nnzL() + p.lu->nnzU());
        return;
      }
    }
    throw FactorizationError("KKT block singular after regularization up to " + std::to_string(rs.delta_max));
  }

  std::vector<Part> parts_;
  Eigen::Index size_ = 0;
  double work_ = 0.0;
};

inline std::vector<bool> primal_mask(const VariableLayout& layout, const std::vector<int>& indices) {
  std::vector<bool> mask;
  mask.reserve(indices.size());
  for (int i : indices) mask.push_back(is_primal(layout.role[static_cast<std::size_t>(i)]));
  return mask;
}

inline std::vector<bool> primal_mask(const VariableLayout& layout) {
  std::vector<int> all(static_cast<std::size_t>(layout.size()));
  std::iota(all.begin(), all.end(), 0);
  return primal_mask(layout, all);
}

}  // namespace mpcopf
