#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>

#include "nde/error.hpp"
#include "nde/ops.hpp"
#include "nde/tape.hpp"

namespace nde {

enum class Method { euler, rk4, dopri5 };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "euler") return Method::euler;
  if (s == "rk4") return Method::rk4;
  if (s == "dopri5") return Method::dopri5;
  throw InvalidArgument("unknown solver '" + s + "' (expected euler, rk4 or dopri5)");
}

/// Integrator settings. euler/rk4 read fixed_step; dopri5 reads rtol/atol and min_step.
struct SolverConfig {
  Method method = Method::rk4;
  double fixed_step = 0.1;
  double rtol = 1e-6;
  double atol = 1e-6;
  std::size_t max_steps = 100000;
  double min_step = 1e-10;

  static SolverConfig euler(double h) { return {Method::euler, h}; }
  static SolverConfig rk4(double h) { return {Method::rk4, h}; }
  static SolverConfig dopri5(double rtol, double atol) {
    SolverConfig c;
    c.method = Method::dopri5;
    c.rtol = rtol;
    c.atol = atol;
    return c;
  }

  void validate() const {
    if (method != Method::dopri5 && !(fixed_step > 0.0)) throw InvalidArgument("solver: fixed_step must be > 0");
    if (method == Method::dopri5 && !(rtol > 0.0 && atol > 0.0)) throw InvalidArgument("solver: rtol and atol must be > 0");
    if (method == Method::dopri5 && !(min_step > 0.0)) throw InvalidArgument("solver: min_step must be > 0");
    if (max_steps == 0) throw InvalidArgument("solver: max_steps must be positive");
  }
};

struct SolverStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;

  SolverStats& operator+=(const SolverStats& o) {
    accepted += o.accepted;
    rejected += o.rejected;
    evaluations += o.evaluations;
    return *this;
  }

  std::string str() const {
    std::ostringstream os;
    os << "accepted=" << accepted << " rejected=" << rejected << " evaluations=" << evaluations;
    return os.str();
  }
};

/// Right-hand side dz/dt = f(t, z). Implementations record their work on the
/// given tape and must return a value shaped like `state`.
using Dynamics = std::function<Var(Tape&, double t, Var state)>;

namespace detail {

// Dormand-Prince 5(4) tableau.
struct DP5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
};

constexpr double kSafety = 0.9;
constexpr double kAlpha = 0.7 / 5.0;
constexpr double kBeta = 0.4 / 5.0;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

inline double rms(const Matrix& m) { return std::sqrt(m.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, m.size()))); }

class Integrator {
 public:
  Integrator(const Dynamics& f, Tape& tape, const SolverConfig& cfg, bool record, SolverStats& stats)
      : f_(f), tape_(tape), cfg_(cfg), record_(record), stats_(stats) {}

  Var run(Var y, double t0, double t1) {
    cfg_.validate();
    if (!(t1 > t0)) throw InvalidArgument("integrate: t1 must be greater than t0");
    base_ = tape_.size();
    try {
      switch (cfg_.method) {
        case Method::euler:
        case Method::rk4: return fixed(y, t0, t1);
        case Method::dopri5: return dopri5(y, t0, t1);
      }
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (at t=" + fmt(t_) + ", " + stats_.str() + ")");
    }
    return y;
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  }

  Var eval(double t, Var y) {
    ++stats_.evaluations;
    Var out = f_(tape_, t, y);
    if (out.rows() != y.rows() || out.cols() != y.cols())
      throw InvalidArgument("dynamics returned a value shaped differently from the state");
    return out;
  }

  // Without recording, only the carried values survive a step.
  Var settle(Var y) {
    if (record_) return y;
    Matrix v = y.value();
    tape_.truncate(base_);
    return tape_.constant(std::move(v));
  }

  Var fixed(Var y, double t0, double t1) {
    const double span = t1 - t0;
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(span / cfg_.fixed_step - 1e-9)));
    if (n > cfg_.max_steps)
      throw NumericalError("fixed-step integration needs " + std::to_string(n) + " steps, above max_steps=" +
                           std::to_string(cfg_.max_steps));
    const double h = span / static_cast<double>(n);
    y = settle(y);
    for (std::size_t i = 0; i < n; ++i) {
      t_ = t0 + static_cast<double>(i) * h;
      if (cfg_.method == Method::euler) {
        Var k1 = eval(t_, y);
        y = lincomb({{1.0, y}, {h, k1}});
      } else {
        Var k1 = eval(t_, y);
        Var k2 = eval(t_ + 0.5 * h, lincomb({{1.0, y}, {0.5 * h, k1}}));
        Var k3 = eval(t_ + 0.5 * h, lincomb({{1.0, y}, {0.5 * h, k2}}));
        Var k4 = eval(t_ + h, lincomb({{1.0, y}, {h, k3}}));
        y = lincomb({{1.0, y}, {h / 6.0, k1}, {h / 3.0, k2}, {h / 3.0, k3}, {h / 6.0, k4}});
      }
      ++stats_.accepted;
      y = settle(y);
    }
    t_ = t1;
    return y;
  }

  Matrix scale_of(const Matrix& a, const Matrix& b) const {
    return (cfg_.atol + cfg_.rtol * a.cwiseAbs().cwiseMax(b.cwiseAbs()).array()).matrix();
  }

  double initial_step(double t0, Var y, Var k1, double span) {
    const Matrix& y0 = y.value();
    const Matrix& f0 = k1.value();
    const Matrix sc = scale_of(y0, y0);
    const double d0 = rms(y0.cwiseQuotient(sc));
    const double d1 = rms(f0.cwiseQuotient(sc));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    const std::size_t mark = tape_.size();
    Var y1 = tape_.constant(Matrix(y0 + h0 * f0));
    Matrix f1 = eval(t0 + h0, y1).value();
    tape_.truncate(mark);
    const double d2 = rms((f1 - f0).cwiseQuotient(sc)) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    return std::min({100.0 * h0, h1, span});
  }

  Var dopri5(Var y, double t0, double t1) {
    using T = DP5;
    t_ = t0;
    y = settle(y);
    Var k1 = eval(t_, y);
    if (!record_) {
      Matrix yv = y.value();
      Matrix kv = k1.value();
      tape_.truncate(base_);
      y = tape_.constant(std::move(yv));
      k1 = tape_.constant(std::move(kv));
    }
    double h = initial_step(t0, y, k1, t1 - t0);
    double err_prev = 1e-4;
    bool last_rejected = false;

    while (t_ < t1) {
      if (stats_.accepted + stats_.rejected >= cfg_.max_steps)
        throw NumericalError("dopri5 exceeded max_steps=" + std::to_string(cfg_.max_steps));
      const double remaining = t1 - t_;
      const bool last = h >= remaining;
      if (last) h = remaining;
      const std::size_t mark = tape_.size();

      Var k2 = eval(t_ + T::c2 * h, lincomb({{1.0, y}, {h * T::a21, k1}}));
      Var k3 = eval(t_ + T::c3 * h, lincomb({{1.0, y}, {h * T::a31, k1}, {h * T::a32, k2}}));
      Var k4 = eval(t_ + T::c4 * h, lincomb({{1.0, y}, {h * T::a41, k1}, {h * T::a42, k2}, {h * T::a43, k3}}));
      Var k5 = eval(t_ + T::c5 * h,
                    lincomb({{1.0, y}, {h * T::a51, k1}, {h * T::a52, k2}, {h * T::a53, k3}, {h * T::a54, k4}}));
      Var k6 = eval(t_ + h, lincomb({{1.0, y},
                                     {h * T::a61, k1},
                                     {h * T::a62, k2},
                                     {h * T::a63, k3},
                                     {h * T::a64, k4},
                                     {h * T::a65, k5}}));
      Var y_new = lincomb({{1.0, y}, {h * T::b1, k1}, {h * T::b3, k3}, {h * T::b4, k4}, {h * T::b5, k5}, {h * T::b6, k6}});
      const double t_new = last ? t1 : t_ + h;
      Var k7 = eval(t_new, y_new);

      const Matrix err = h * (T::e1 * k1.value() + T::e3 * k3.value() + T::e4 * k4.value() + T::e5 * k5.value() +
                              T::e6 * k6.value() + T::e7 * k7.value());
      const double err_norm = rms(err.cwiseQuotient(scale_of(y.value(), y_new.value())));
      if (!std::isfinite(err_norm)) throw NumericalError("dopri5 error estimate is not finite");

      double factor;
      if (err_norm <= 1.0) {
        ++stats_.accepted;
        t_ = t_new;
        if (record_) {
          y = y_new;
          k1 = k7;
        } else {
          Matrix yv = y_new.value();
          Matrix kv = k7.value();
          tape_.truncate(base_);
          y = tape_.constant(std::move(yv));
          k1 = tape_.constant(std::move(kv));
        }
        factor = err_norm == 0.0 ? kMaxFactor
                                 : kSafety * std::pow(err_norm, -kAlpha) * std::pow(err_prev, kBeta);
        factor = std::clamp(factor, kMinFactor, kMaxFactor);
        if (last_rejected) factor = std::min(factor, 1.0);
        err_prev = std::max(err_norm, 1e-4);
        last_rejected = false;
      } else {
        ++stats_.rejected;
        tape_.truncate(mark);
        factor = std::max(kMinFactor, kSafety * std::pow(err_norm, -kAlpha));
        last_rejected = true;
      }
      const double h_next = h * factor;
      if (t_ < t1 && h_next < cfg_.min_step && (t1 - t_) > cfg_.min_step)
        throw NumericalError("dopri5 step size " + fmt(h_next) + " fell below min_step=" + fmt(cfg_.min_step));
      h = h_next;
    }
    return y;
  }

  const Dynamics& f_;
  Tape& tape_;
  SolverConfig cfg_;
  bool record_;
  SolverStats& stats_;
  std::size_t base_ = 0;
  double t_ = 0.0;
};

}  // namespace detail

/// Integrate dz/dt = f(t, z) from t0 to t1 starting at `state0`, on the tape
/// that owns `state0`. With `record`, every accepted stage stays on the tape so
/// a later backward pass differentiates through the solver; otherwise only
/// the result is kept.
inline Var integrate(const Dynamics& f, Var state0, double t0, double t1, const SolverConfig& cfg,
                     bool record = true, SolverStats* stats = nullptr) {
  SolverStats local;
  detail::Integrator integrator(f, *state0.tape, cfg, record, stats ? *stats : local);
  return integrator.run(state0, t0, t1);
}

/// Gradient-free integration.
inline Tensor integrate(const Dynamics& f, const Tensor& state0, double t0, double t1, const SolverConfig& cfg,
                        SolverStats* stats = nullptr) {
  require_finite(state0, "initial state");
  Tape tape;
  Var y0 = tape.constant(Matrix(state0.matrix()));
  Var y1 = integrate(f, y0, t0, t1, cfg, false, stats);
  Tensor out(state0.shape());
  out.matrix() = y1.value();
  return out;
}

}  // namespace nde
