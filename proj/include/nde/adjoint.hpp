#pragma once

#include <vector>

#include "nde/ode.hpp"
#include "nde/params.hpp"

namespace nde {

struct AdjointResult {
  Tensor state_t1;     // forward solution
  Tensor grad_state0;  // dL/dz(t0)
  SolverStats forward;
  SolverStats backward;
};

struct AdjointSweep {
  Matrix state_t0;  // z(t0) reconstructed by the reverse solve
  Matrix grad_t0;   // dL/dz(t0)
  SolverStats stats;
};

/// Reverse-time solve of the augmented system [z, a, g] from t1 down to t0:
///   dz/ds = -f(z, t),  da/ds = a^T df/dz,  dg/ds = a^T df/dtheta,  t = t1 - s.
/// The vector-Jacobian products come from a throwaway tape per evaluation, so
/// memory does not grow with the number of solver steps. dL/dtheta is added
/// to the gradient accumulators of `params`.
inline AdjointSweep adjoint_sweep(const Dynamics& f, const Matrix& state_t1, double t0, double t1,
                                  const SolverConfig& cfg, const Matrix& grad_t1, ParameterStore& params) {
  if (grad_t1.rows() != state_t1.rows() || grad_t1.cols() != state_t1.cols())
    throw InvalidArgument("adjoint: loss gradient shape does not match the state shape");

  const Eigen::Index rows = state_t1.rows();
  const Eigen::Index cols = state_t1.cols();
  const Eigen::Index n = state_t1.size();
  std::vector<Eigen::Index> offset(params.size());
  Eigen::Index p = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    offset[i] = p;
    p += static_cast<Eigen::Index>(params.at(i).value.size());
  }

  Dynamics augmented = [&](Tape& outer, double s, Var aug) -> Var {
    const Matrix& v = aug.value();
    const ConstMatrixMap z(v.data(), rows, cols);
    const ConstMatrixMap a(v.data() + n, rows, cols);
    Tape local;
    Var zv = local.constant(Matrix(z));
    Var out = f(local, t1 - s, zv);
    local.backward_from(out, Matrix(a));

    Matrix d = Matrix::Zero(1, 2 * n + p);
    MatrixMap(d.data(), rows, cols) = -local.value(out);
    if (local.has_grad(zv.id)) MatrixMap(d.data() + n, rows, cols) = local.grad(zv);
    for (const auto& leaf : local.param_leaves()) {
      if (leaf.store != &params || !local.has_grad(leaf.node)) continue;
      const Matrix& g = local.grad(leaf.node);
      MatrixMap(d.data() + 2 * n + offset[leaf.index], g.rows(), g.cols()) += g;
    }
    return outer.constant(std::move(d));
  };

  Matrix init = Matrix::Zero(1, 2 * n + p);
  MatrixMap(init.data(), rows, cols) = state_t1;
  MatrixMap(init.data() + n, rows, cols) = grad_t1;

  AdjointSweep result;
  Tape tape;
  Var end = integrate(augmented, tape.constant(std::move(init)), 0.0, t1 - t0, cfg, false, &result.stats);
  const Matrix& v = end.value();
  result.state_t0 = ConstMatrixMap(v.data(), rows, cols);
  result.grad_t0 = ConstMatrixMap(v.data() + n, rows, cols);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& g = params.at(i).grad;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += v(0, 2 * n + offset[i] + static_cast<Eigen::Index>(j));
  }
  return result;
}

/// Forward solve followed by the adjoint sweep. Returns dL/dz(t0) given
/// dL/dz(t1) and accumulates dL/dtheta into `params`.
inline AdjointResult integrate_adjoint(const Dynamics& f, const Tensor& state0, double t0, double t1,
                                       const SolverConfig& cfg, const Tensor& loss_grad_at_t1,
                                       ParameterStore& params) {
  if (loss_grad_at_t1.shape() != state0.shape())
    throw InvalidArgument("adjoint: loss gradient shape " + shape_string(loss_grad_at_t1.shape()) +
                          " does not match state shape " + shape_string(state0.shape()));
  AdjointResult r;
  r.state_t1 = integrate(f, state0, t0, t1, cfg, &r.forward);
  auto sweep = adjoint_sweep(f, Matrix(r.state_t1.matrix()), t0, t1, cfg, Matrix(loss_grad_at_t1.matrix()), params);
  r.backward = sweep.stats;
  r.grad_state0 = Tensor(state0.shape());
  r.grad_state0.matrix() = sweep.grad_t0;
  return r;
}

}  // namespace nde
