#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "bayescal/errors.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::evalstats {

struct GridSpec {
  std::size_t resolution = 21;  ///< points per axis
  /// Fraction of the trajectory's projected range added on each side.
  double margin = 0.25;
  double tolerance = 1e-10;
  std::size_t max_iterations = 100000;
};

struct GridPoint {
  double a = 0.0;
  double b = 0.0;
  double loss = 0.0;
};

struct Landscape {
  std::vector<double> center;                       ///< mean of the snapshots
  std::array<std::vector<double>, 2> components;   ///< orthonormal directions, P entries each
  std::array<double, 2> explained{};               ///< fraction of total variance per component
  std::vector<std::array<double, 2>> projection;   ///< one row per snapshot
  std::vector<GridPoint> grid;                     ///< row-major, a varies fastest
  bool converged = false;

  [[nodiscard]] double captured() const { return explained[0] + explained[1]; }
};

namespace detail {

/// Orthonormalizes the columns of q in place; a column that vanishes (relative
/// to its length before projection) is replaced by a unit vector orthogonal to
/// the others.
inline void orthonormalize(Eigen::MatrixXd& q) {
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    const double before = q.col(c).norm();
    for (Eigen::Index prev = 0; prev < c; ++prev) q.col(c) -= q.col(prev).dot(q.col(c)) * q.col(prev);
    double n = q.col(c).norm();
    for (Eigen::Index e = 0; !(n > 1e-10 * before) && e < q.rows(); ++e) {
      q.col(c) = Eigen::VectorXd::Unit(q.rows(), e);
      for (Eigen::Index prev = 0; prev < c; ++prev) q.col(c) -= q.col(prev).dot(q.col(c)) * q.col(prev);
      n = q.col(c).norm();
    }
    q.col(c) /= n;
  }
}

/// Top-2 eigenpairs of a symmetric PSD matrix by subspace power iteration with
/// a final Rayleigh-Ritz rotation.
struct TopTwo {
  Eigen::MatrixXd vectors;  // m x 2
  std::array<double, 2> values{};
  bool converged = false;
};

inline TopTwo power_top_two(const Eigen::MatrixXd& k, double tol, std::size_t max_iter) {
  const Eigen::Index m = k.rows();
  Rng rng(derive_seed(0, stream::search, 99));
  std::normal_distribution<double> nd;
  Eigen::MatrixXd q(m, 2);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = nd(rng);
  orthonormalize(q);
  TopTwo out;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd z = k * q;
    orthonormalize(z);
    const double change = (z - q * (q.transpose() * z)).norm();
    q = std::move(z);
    if (change < tol) {
      out.converged = true;
      break;
    }
  }
  const Eigen::Matrix2d b = q.transpose() * k * q;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> small(b);
  // ascending order from the solver; largest first here
  out.vectors.resize(m, 2);
  out.vectors.col(0) = q * small.eigenvectors().col(1);
  out.vectors.col(1) = q * small.eigenvectors().col(0);
  out.values = {std::max(0.0, small.eigenvalues()(1)), std::max(0.0, small.eigenvalues()(0))};
  return out;
}

}  // namespace detail

/// Principal-component view of a parameter trajectory (snapshots x P) and
/// `loss` evaluated over a 2D grid spanned by the top two components.
inline Landscape pca_landscape(const std::vector<std::vector<double>>& trajectory,
                               const std::function<double(const std::vector<double>&)>& loss,
                               const GridSpec& grid = {}) {
  if (trajectory.size() < 3) throw ProtocolError("landscape needs at least 3 trajectory points");
  if (grid.resolution < 2) throw ConfigError("landscape grid needs at least 2 points per axis");
  const auto t = static_cast<Eigen::Index>(trajectory.size());
  const auto p = static_cast<Eigen::Index>(trajectory.front().size());
  Eigen::MatrixXd x(t, p);
  for (Eigen::Index r = 0; r < t; ++r) {
    if (static_cast<Eigen::Index>(trajectory[static_cast<std::size_t>(r)].size()) != p) {
      throw StructuralError("trajectory rows differ in length");
    }
    for (Eigen::Index c = 0; c < p; ++c) x(r, c) = trajectory[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const double total = x.squaredNorm();
  if (!(total > 0.0)) throw DegeneracyError("trajectory has zero variance");

  Landscape out;
  Eigen::MatrixXd dirs(p, 2);
  if (t <= p) {
    const auto top = detail::power_top_two(x * x.transpose(), grid.tolerance, grid.max_iterations);
    dirs = x.transpose() * top.vectors;
    out.converged = top.converged;
    out.explained = {top.values[0] / total, top.values[1] / total};
  } else {
    const auto top = detail::power_top_two(x.transpose() * x, grid.tolerance, grid.max_iterations);
    dirs = top.vectors;
    out.converged = top.converged;
    out.explained = {top.values[0] / total, top.values[1] / total};
  }
  detail::orthonormalize(dirs);

  out.center.assign(mean.data(), mean.data() + p);
  for (int c = 0; c < 2; ++c) out.components[static_cast<std::size_t>(c)].assign(dirs.col(c).data(), dirs.col(c).data() + p);
  const Eigen::MatrixXd proj = x * dirs;
  for (Eigen::Index r = 0; r < t; ++r) out.projection.push_back({proj(r, 0), proj(r, 1)});

  std::array<double, 2> lo{}, hi{};
  for (int c = 0; c < 2; ++c) {
    lo[static_cast<std::size_t>(c)] = proj.col(c).minCoeff();
    hi[static_cast<std::size_t>(c)] = proj.col(c).maxCoeff();
    double span = hi[static_cast<std::size_t>(c)] - lo[static_cast<std::size_t>(c)];
    if (span <= 0.0) span = std::sqrt(total / static_cast<double>(t));
    lo[static_cast<std::size_t>(c)] -= grid.margin * span;
    hi[static_cast<std::size_t>(c)] += grid.margin * span;
  }
  const double steps = static_cast<double>(grid.resolution - 1);
  std::vector<double> point(static_cast<std::size_t>(p));
  for (std::size_t j = 0; j < grid.resolution; ++j) {
    const double b = lo[1] + (hi[1] - lo[1]) * static_cast<double>(j) / steps;
    for (std::size_t i = 0; i < grid.resolution; ++i) {
      const double a = lo[0] + (hi[0] - lo[0]) * static_cast<double>(i) / steps;
      for (Eigen::Index c = 0; c < p; ++c) point[static_cast<std::size_t>(c)] = mean(c) + a * dirs(c, 0) + b * dirs(c, 1);
      out.grid.push_back({a, b, loss(point)});
    }
  }
  return out;
}

inline void write_landscape_grid_csv(std::ostream& out, const Landscape& l) {
  out << "pc1,pc2,loss\n";
  char buf[96];
  for (const auto& g : l.grid) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", g.a, g.b, g.loss);
    out << buf;
  }
}

inline void write_landscape_trajectory_csv(std::ostream& out, const Landscape& l) {
  out << "epoch,pc1,pc2\n";
  char buf[96];
  for (std::size_t e = 0; e < l.projection.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g\n", e, l.projection[e][0], l.projection[e][1]);
    out << buf;
  }
}

}  // namespace bayescal::evalstats
