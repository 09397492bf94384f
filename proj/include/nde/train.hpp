#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "nde/adjoint.hpp"
#include "nde/data.hpp"
#include "nde/model.hpp"
#include "nde/optim.hpp"

namespace nde {

enum class GradientMode { unrolled, adjoint };

inline std::string to_string(GradientMode g) { return g == GradientMode::unrolled ? "unrolled" : "adjoint"; }

inline GradientMode parse_gradient_mode(const std::string& s) {
  if (s == "unrolled") return GradientMode::unrolled;
  if (s == "adjoint") return GradientMode::adjoint;
  throw InvalidArgument("unknown gradient mode '" + s + "' (expected unrolled or adjoint)");
}

/// A set of windows stacked node-major: row i * B + b is node i of window b.
struct Batch {
  std::size_t num_nodes = 0;
  std::size_t size = 0;
  std::vector<std::size_t> anchors;
  Matrix x;               // |V| B x features
  std::vector<Matrix> y;  // per step, |V| B x 1

  std::size_t steps() const { return y.size(); }
  bool empty() const { return size == 0; }
};

inline Batch make_batch(const std::vector<Window>& windows, std::size_t num_nodes) {
  Batch b;
  b.num_nodes = num_nodes;
  b.size = windows.size();
  if (windows.empty()) return b;
  const auto n = static_cast<Eigen::Index>(num_nodes);
  const auto bs = static_cast<Eigen::Index>(windows.size());
  const std::size_t steps = windows.front().y.dim(0);
  b.x = Matrix(n * bs, windows.front().x.cols());
  b.y.assign(steps, Matrix(n * bs, 1));
  for (Eigen::Index w = 0; w < bs; ++w) {
    const Window& win = windows[static_cast<std::size_t>(w)];
    if (win.x.rows() != n || win.x.cols() != b.x.cols() || win.y.dim(0) != steps)
      throw InvalidArgument("windows in one batch must share their shapes");
    b.anchors.push_back(win.anchor);
    for (Eigen::Index i = 0; i < n; ++i) {
      b.x.row(i * bs + w) = win.x.row(i);
      for (std::size_t s = 0; s < steps; ++s) b.y[s](i * bs + w, 0) = win.y[s * num_nodes + static_cast<std::size_t>(i)];
    }
  }
  return b;
}

/// Mean squared error between predictions and targets of equal shape.
inline Var mse_loss(Var prediction, const Matrix& target) { return mse(prediction, target); }

/// Mean over forecast steps of the per-step MSE.
inline Var rollout_loss(const std::vector<Var>& predictions, const std::vector<Matrix>& targets) {
  if (predictions.size() != targets.size()) throw InvalidArgument("prediction and target step counts differ");
  std::vector<Var> terms;
  for (std::size_t s = 0; s < predictions.size(); ++s) terms.push_back(mse_loss(predictions[s], targets[s]));
  return mean_of(terms);
}

/// Predictions of every step for a batch, without gradients.
inline std::vector<Matrix> predict(NdeModel& model, const Batch& batch, const SolverConfig& solver,
                                   SolverStats* stats = nullptr) {
  Tape tape;
  auto tr = forecast(tape, model, tape.constant(batch.x), batch.steps(), solver, false);
  if (stats) *stats += tr.stats;
  std::vector<Matrix> out;
  for (Var p : tr.predictions) out.push_back(p.value());
  return out;
}

inline double batch_loss(NdeModel& model, const Batch& batch, const SolverConfig& solver, SolverStats* stats = nullptr) {
  const auto preds = predict(model, batch, solver, stats);
  double total = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s)
    total += (preds[s] - batch.y[s]).squaredNorm() / static_cast<double>(preds[s].size());
  return total / static_cast<double>(preds.size());
}

namespace detail {

inline double unrolled_gradient(NdeModel& model, const Batch& batch, const SolverConfig& solver, SolverStats* stats) {
  Tape tape;
  auto tr = forecast(tape, model, tape.constant(batch.x), batch.steps(), solver, true);
  Var loss = rollout_loss(tr.predictions, batch.y);
  tape.backward(loss, model.params());
  if (stats) *stats += tr.stats;
  return loss.value()(0, 0);
}

/// Hidden states are stored at the step boundaries only; within each unit
/// interval the gradient comes from the reverse-time augmented solve.
inline double adjoint_gradient(NdeModel& model, const Batch& batch, const SolverConfig& solver, SolverStats* stats) {
  ParameterStore& params = model.params();
  params.zero_grad();
  const std::size_t steps = batch.steps();

  Tape enc;
  Var h0 = encode(enc, model, enc.constant(batch.x));
  std::vector<Matrix> hs{h0.value()};
  const Dynamics dyn = make_dynamics(model);
  for (std::size_t s = 1; s <= steps; ++s) {
    Tape t;
    bind(t, model);
    try {
      hs.push_back(integrate(dyn, t.constant(hs.back()), static_cast<double>(s - 1), static_cast<double>(s), solver,
                             false, stats)
                       .value());
    } catch (const NumericalError& e) {
      throw NumericalError("forecast step " + std::to_string(s) + ": " + e.what());
    }
  }

  double loss = 0.0;
  std::vector<Matrix> direct(steps + 1);
  for (std::size_t s = 1; s <= steps; ++s) {
    Tape t;
    Var h = t.constant(hs[s]);
    Var l = scale(mse_loss(decode(t, model, h), batch.y[s - 1]), 1.0 / static_cast<double>(steps));
    loss += l.value()(0, 0);
    t.backward_from(l, Matrix::Ones(1, 1));
    t.accumulate_param_grads(params);
    direct[s] = t.has_grad(h.id) ? t.grad(h) : Matrix::Zero(hs[s].rows(), hs[s].cols());
  }

  Matrix a = direct[steps];
  for (std::size_t s = steps; s >= 1; --s) {
    AdjointSweep sweep;
    try {
      sweep = adjoint_sweep(dyn, hs[s], static_cast<double>(s - 1), static_cast<double>(s), solver, a, params);
    } catch (const NumericalError& e) {
      throw NumericalError("adjoint step " + std::to_string(s) + ": " + e.what());
    }
    if (stats) *stats += sweep.stats;
    a = sweep.grad_t0;
    if (s > 1) a += direct[s - 1];
  }
  enc.backward_from(h0, a);
  enc.accumulate_param_grads(params);
  return loss;
}

}  // namespace detail

/// Loss of the batch at the current parameters; the gradient is written to
/// the parameter accumulators.
inline double loss_and_gradient(NdeModel& model, const Batch& batch, const SolverConfig& solver, GradientMode mode,
                                SolverStats* stats = nullptr) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  return mode == GradientMode::unrolled ? detail::unrolled_gradient(model, batch, solver, stats)
                                        : detail::adjoint_gradient(model, batch, solver, stats);
}

struct TrainConfig {
  double learning_rate = 1e-2;
  double weight_decay = 1e-3;
  std::size_t max_iter = 2000;
  std::uint64_t seed = 0;
  GradientMode gradient_mode = GradientMode::unrolled;
  std::optional<std::size_t> patience;
  SolverConfig solver = SolverConfig::rk4(0.1);
  std::unordered_set<std::string> frozen;
};

/// Losses at the parameters reached after `iteration` optimizer steps.
struct IterationRecord {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct TrainResult {
  ParameterStore best_params;
  std::size_t best_iteration = 0;
  double best_valid_loss = 0.0;
  std::vector<IterationRecord> history;
  SolverStats stats;
  bool stopped_early = false;
};

/// Full-batch AdamW. Validation runs after every step and the snapshot with
/// the lowest validation loss (the initial parameters included) is returned.
/// The model keeps the final parameters.
inline TrainResult train(NdeModel& model, const Batch& train_batch, const Batch& valid_batch, const TrainConfig& cfg,
                         const std::function<void(const IterationRecord&)>& on_iteration = {}) {
  if (train_batch.empty() || valid_batch.empty()) throw InvalidArgument("training needs non-empty train and validation windows");
  cfg.solver.validate();
  for (const auto& name : cfg.frozen) (void)model.params().index(name);

  AdamW opt({cfg.learning_rate, cfg.weight_decay});
  TrainResult r;
  double valid;
  try {
    valid = batch_loss(model, valid_batch, cfg.solver, &r.stats);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("initial validation: ") + e.what());
  }
  r.best_params = model.params();
  r.best_valid_loss = valid;
  std::size_t since_best = 0;

  auto record = [&](std::size_t it, double train_loss) {
    IterationRecord rec{it, train_loss, valid};
    r.history.push_back(rec);
    if (on_iteration) on_iteration(rec);
  };

  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    double loss;
    try {
      loss = loss_and_gradient(model, train_batch, cfg.solver, cfg.gradient_mode, &r.stats);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(it + 1) + ": " + e.what());
    }
    if (!std::isfinite(loss)) throw NumericalError("iteration " + std::to_string(it + 1) + ": non-finite training loss");
    record(it, loss);
    try {
      opt.step(model.params(), cfg.frozen);
      valid = batch_loss(model, valid_batch, cfg.solver, &r.stats);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(it + 1) + ": " + e.what());
    }
    if (valid < r.best_valid_loss) {
      r.best_valid_loss = valid;
      r.best_params = model.params();
      r.best_iteration = it + 1;
      since_best = 0;
    } else if (cfg.patience && ++since_best >= *cfg.patience) {
      r.stopped_early = true;
      record(it + 1, batch_loss(model, train_batch, cfg.solver, &r.stats));
      return r;
    }
  }
  record(cfg.max_iter, batch_loss(model, train_batch, cfg.solver, &r.stats));
  return r;
}

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  std::size_t count = 0;
};

/// Denormalized forecasts next to their targets, one entry per step.
struct EvaluatedBatch {
  std::vector<Matrix> predictions;
  std::vector<Matrix> targets;
  Metrics metrics;
  SolverStats stats;
};

/// MAE and MSE over paired prediction and target matrices.
inline Metrics metrics_of(const std::vector<Matrix>& predictions, const std::vector<Matrix>& targets) {
  if (predictions.size() != targets.size()) throw InvalidArgument("prediction and target step counts differ");
  Metrics m;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const Matrix& p = predictions[s];
    const Matrix& y = targets[s];
    if (p.rows() != y.rows() || p.cols() != y.cols()) throw InvalidArgument("prediction and target shapes differ");
    abs_sum += (p - y).cwiseAbs().sum();
    sq_sum += (p - y).squaredNorm();
    m.count += static_cast<std::size_t>(p.size());
  }
  if (m.count == 0) throw InvalidArgument("no values to score");
  m.mae = abs_sum / static_cast<double>(m.count);
  m.mse = sq_sum / static_cast<double>(m.count);
  return m;
}

/// MAE and MSE in original units over all predicted values.
inline EvaluatedBatch evaluate(NdeModel& model, const Batch& batch, const Normalizer& norm, std::size_t target_feature,
                               const SolverConfig& solver) {
  if (batch.empty()) throw InvalidArgument("evaluation needs at least one window");
  EvaluatedBatch out;
  out.predictions = predict(model, batch, solver, &out.stats);
  auto restore = [&](Matrix& m) { m = m.unaryExpr([&](double v) { return norm.invert(v, target_feature); }); };
  for (auto& p : out.predictions) restore(p);
  out.targets = batch.y;
  for (auto& y : out.targets) restore(y);
  out.metrics = metrics_of(out.predictions, out.targets);
  return out;
}

}  // namespace nde
