#pragma once

#include <cmath>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nde/tape.hpp"

namespace nde {

namespace detail {

inline std::string dims(const Matrix& m) { return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")"; }

inline void same_shape(const char* op, Var a, Var b) {
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + dims(x) + " vs " + dims(y));
}

inline Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidArgument("operands recorded on different tapes");
  return *a.tape;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_shape("add", a, b);
  Tape& t = detail::tape_of(a, b);
  return t.push("add", a.value() + b.value(), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    t.grad_acc(a) += t.grad(self);
    t.grad_acc(b) += t.grad(self);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape("sub", a, b);
  Tape& t = detail::tape_of(a, b);
  return t.push("sub", a.value() - b.value(), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    t.grad_acc(a) += t.grad(self);
    t.grad_acc(b) -= t.grad(self);
  });
}

inline Var scale(Var a, double c) {
  return a.tape->push("scale", c * a.value(), [a = a.id, c](Tape& t, std::size_t self) {
    t.grad_acc(a) += c * t.grad(self);
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

/// sum_i coeff_i * x_i with constant coefficients. Terms with a zero
/// coefficient are skipped entirely.
inline Var lincomb(std::span<const std::pair<double, Var>> terms) {
  if (terms.empty()) throw InvalidArgument("lincomb: no terms");
  Tape& t = *terms.front().second.tape;
  Matrix out = Matrix::Zero(terms.front().second.rows(), terms.front().second.cols());
  std::vector<std::pair<double, std::size_t>> used;
  for (const auto& [c, v] : terms) {
    detail::same_shape("lincomb", terms.front().second, v);
    if (c == 0.0) continue;
    out.noalias() += c * v.value();
    used.emplace_back(c, v.id);
  }
  return t.push("lincomb", std::move(out), [used = std::move(used)](Tape& t, std::size_t self) {
    for (const auto& [c, id] : used) t.grad_acc(id) += c * t.grad(self);
  });
}

inline Var lincomb(std::initializer_list<std::pair<double, Var>> terms) {
  return lincomb(std::span<const std::pair<double, Var>>(terms.begin(), terms.size()));
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  if (a.cols() != b.rows())
    throw InvalidArgument("matmul: inner dimensions differ " + detail::dims(a.value()) + " * " +
                          detail::dims(b.value()));
  Matrix out = a.value() * b.value();
  return t.push("matmul", std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad_acc(a).noalias() += g * t.value(b).transpose();
    t.grad_acc(b).noalias() += t.value(a).transpose() * g;
  });
}

/// Fully-connected layer: x * weight + bias, bias broadcast over rows.
inline Var fc(Var x, Var weight, Var bias) {
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols())
    throw InvalidArgument("fc: incompatible shapes x" + detail::dims(xv) + " weight" + detail::dims(wv) + " bias" +
                          detail::dims(bv));
  Matrix out = xv * wv;
  out.rowwise() += bv.row(0);
  return x.tape->push("fc", std::move(out), [x = x.id, w = weight.id, b = bias.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad_acc(x).noalias() += g * t.value(w).transpose();
    t.grad_acc(w).noalias() += t.value(x).transpose() * g;
    t.grad_acc(b) += g.colwise().sum();
  });
}

/// max(0, x); the subgradient at 0 is 0.
inline Var relu(Var x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape->push("relu", std::move(out), [x = x.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    t.grad_acc(x).array() += t.grad(self).array() * (y.array() > 0.0).cast<double>();
  });
}

inline Var softplus(Var x) {
  Matrix out = x.value().unaryExpr([](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
  return x.tape->push("softplus", std::move(out), [x = x.id](Tape& t, std::size_t self) {
    const Matrix sig = t.value(x).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    t.grad_acc(x) += t.grad(self).cwiseProduct(sig);
  });
}

inline Var hadamard(Var a, Var b) {
  detail::same_shape("hadamard", a, b);
  Tape& t = detail::tape_of(a, b);
  return t.push("hadamard", a.value().cwiseProduct(b.value()), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad_acc(a) += g.cwiseProduct(t.value(b));
    t.grad_acc(b) += g.cwiseProduct(t.value(a));
  });
}

/// s * x for a 1x1 variable s.
inline Var scale_by(Var s, Var x) {
  Tape& t = detail::tape_of(s, x);
  if (s.rows() != 1 || s.cols() != 1) throw InvalidArgument("scale_by: scale must be 1x1, got " + detail::dims(s.value()));
  return t.push("scale_by", s.value()(0, 0) * x.value(), [s = s.id, x = x.id](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad_acc(s)(0, 0) += g.cwiseProduct(t.value(x)).sum();
    t.grad_acc(x) += t.value(s)(0, 0) * g;
  });
}

inline Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->push("sum", std::move(out), [x = x.id](Tape& t, std::size_t self) {
    t.grad_acc(x).array() += t.grad(self)(0, 0);
  });
}

/// Mean squared error against a constant target, averaged over all entries.
inline Var mse(Var prediction, const Matrix& target) {
  const Matrix& p = prediction.value();
  if (p.rows() != target.rows() || p.cols() != target.cols())
    throw InvalidArgument("mse: prediction" + detail::dims(p) + " vs target" + detail::dims(target));
  if (p.size() == 0) throw InvalidArgument("mse: empty input");
  Matrix diff = p - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
  return prediction.tape->push(
      "mse", std::move(out), [x = prediction.id, diff = std::move(diff)](Tape& t, std::size_t self) {
        const double scale = 2.0 * t.grad(self)(0, 0) / static_cast<double>(diff.size());
        t.grad_acc(x) += scale * diff;
      });
}

/// Average of 1x1 variables.
inline Var mean_of(std::span<const Var> scalars) {
  std::vector<std::pair<double, Var>> terms;
  const double w = 1.0 / static_cast<double>(scalars.size());
  for (Var v : scalars) terms.emplace_back(w, v);
  return lincomb(terms);
}

}  // namespace nde
