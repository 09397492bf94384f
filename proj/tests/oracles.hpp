#pragma once

// Independent reference computations used by the tests. Nothing here goes
// through the tape or the solvers.

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <vector>

#include "nde/graph.hpp"
#include "nde/tensor.hpp"

namespace nde::oracle {

/// Triple-loop matrix product.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

/// Dense L assembled entry by entry from the edge list.
inline Matrix laplacian_from_edges(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<double> deg(static_cast<std::size_t>(n), 1.0);
  for (const auto& e : g.edges()) deg[e.src] += 1.0;
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) l(i, i) = 1.0 - 1.0 / deg[static_cast<std::size_t>(i)];
  for (const auto& e : g.edges())
    l(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) = -1.0 / std::sqrt(deg[e.src] * deg[e.dst]);
  return l;
}

/// expm(-k t L) H0 through a dense symmetric eigendecomposition.
inline Matrix heat_kernel(const Matrix& lap, double k, double t, const Matrix& h0) {
  const Eigen::MatrixXd dense = lap;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  const Eigen::MatrixXd& v = es.eigenvectors();
  const Eigen::VectorXd decay = (-k * t * es.eigenvalues().array()).exp();
  Eigen::MatrixXd out = v * decay.asDiagonal() * v.transpose() * Eigen::MatrixXd(h0);
  return Matrix(out);
}

inline Eigen::VectorXd eigenvalues(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Central differences of a scalar function of a flat parameter vector.
inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

/// Erdos-Renyi style random undirected graph, used for property checks.
inline Graph random_graph(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) pairs.emplace_back(i, j);
  return Graph::undirected(n, pairs);
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace nde::oracle
