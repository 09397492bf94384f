#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nde/graph.hpp"
#include "nde/ode.hpp"
#include "nde/ops.hpp"
#include "nde/params.hpp"

namespace nde {

enum class HeatMode { ec, hm, sc, fc };
enum class Ablation { full, without_f, only_f };

inline std::string to_string(HeatMode m) {
  switch (m) {
    case HeatMode::ec: return "ec";
    case HeatMode::hm: return "hm";
    case HeatMode::sc: return "sc";
    case HeatMode::fc: return "fc";
  }
  return "?";
}

inline HeatMode parse_heat_mode(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "ec") return HeatMode::ec;
  if (s == "hm") return HeatMode::hm;
  if (s == "sc") return HeatMode::sc;
  if (s == "fc") return HeatMode::fc;
  throw InvalidArgument("unknown heat mode '" + s + "' (expected ec, hm, sc or fc)");
}

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::without_f: return "without-f";
    case Ablation::only_f: return "only-f";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "without-f" || s == "without_f") return Ablation::without_f;
  if (s == "only-f" || s == "only_f") return Ablation::only_f;
  throw InvalidArgument("unknown ablation '" + s + "' (expected full, without-f or only-f)");
}

/// How heat capacity coefficients are parameterized.
///   ec: one learnable coefficient per edge class
///   hm: a learnable |V| x |V| matrix
///   sc: one learnable scalar shared by all edges
///   fc: the constant 1
struct HeatCapacitySpec {
  HeatMode mode = HeatMode::sc;
  std::size_t num_classes = 0;  // ec only
  bool softplus = false;        // learned raw values pass through softplus
};

struct NdeConfig {
  std::size_t input_dim = 1;   // M
  std::size_t hidden_dim = 20; // D
  int f_layers = 2;
  HeatCapacitySpec heat;
  Ablation ablation = Ablation::full;
  double heat_init = 1.0;
  double f_init_scale = 1.0;  // multiplies the fan-uniform bound of the f weights

  bool has_diffusion() const { return ablation != Ablation::only_f; }
  bool has_f() const { return ablation != Ablation::without_f; }
};

/// Nonzero pattern of the Laplacian (every edge plus the diagonal) in CSR form.
struct DiffusionPattern {
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col;
  std::vector<double> lap;                      // L at each entry
  std::vector<std::optional<std::size_t>> cls;  // edge class, empty on the diagonal
  std::vector<std::vector<std::size_t>> incident_classes;  // per node

  std::size_t nnz() const { return col.size(); }
  std::size_t num_nodes() const { return row_ptr.size() - 1; }
};

inline DiffusionPattern make_pattern(const Graph& g, const Laplacian& lap) {
  const std::size_t n = g.num_nodes();
  if (static_cast<std::size_t>(lap.size()) != n) throw InvalidArgument("Laplacian size does not match graph");
  std::vector<std::vector<std::pair<std::size_t, std::optional<std::size_t>>>> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i].emplace_back(i, std::nullopt);
  DiffusionPattern p;
  p.incident_classes.resize(n);
  for (const auto& e : g.edges()) {
    rows[e.src].emplace_back(e.dst, e.class_id);
    if (e.class_id) p.incident_classes[e.src].push_back(*e.class_id);
  }
  p.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(rows[i].begin(), rows[i].end());
    for (const auto& [j, c] : rows[i]) {
      p.col.push_back(j);
      p.lap.push_back(lap.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      p.cls.push_back(c);
    }
    p.row_ptr.push_back(p.col.size());
  }
  return p;
}

/// Architecture plus parameters: encoder FC1 (M->D), uncertainty net f
/// (f_layers x FC D->D), decoder FC4 (D->D) and FC5 (D->1), and the heat
/// capacity parameters of the chosen mode.
class NdeModel {
 public:
  NdeModel(NdeConfig cfg, std::shared_ptr<const Graph> graph, std::uint64_t seed = 0)
      : cfg_(cfg), graph_(std::move(graph)) {
    if (!graph_) throw InvalidArgument("model needs a graph");
    if (cfg_.input_dim == 0 || cfg_.hidden_dim == 0) throw InvalidArgument("input and hidden dimensions must be positive");
    if (cfg_.f_layers < 1) throw InvalidArgument("f needs at least one layer");
    laplacian_ = std::make_shared<Laplacian>(build_laplacian(*graph_));
    pattern_ = std::make_shared<DiffusionPattern>(make_pattern(*graph_, *laplacian_));
    if (cfg_.heat.mode == HeatMode::ec) {
      for (const auto& e : graph_->edges()) {
        if (!e.class_id)
          throw InvalidArgument("EC heat capacity: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                                ") has no class id");
      }
      cfg_.heat.num_classes = std::max(cfg_.heat.num_classes, graph_->num_edge_classes());
    }
    init_params(seed);
  }

  const NdeConfig& config() const { return cfg_; }
  const Graph& graph() const { return *graph_; }
  std::shared_ptr<const Graph> graph_ptr() const { return graph_; }
  const Laplacian& laplacian() const { return *laplacian_; }
  const DiffusionPattern& pattern() const { return *pattern_; }
  std::size_t num_nodes() const { return graph_->num_nodes(); }

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }

  /// Re-draw all parameters from `seed`.
  void init_params(std::uint64_t seed) {
    params_ = ParameterStore();
    std::mt19937_64 rng(seed);
    const std::size_t m = cfg_.input_dim;
    const std::size_t d = cfg_.hidden_dim;
    params_.add("encoder.weight", fan_uniform(m, d, rng));
    params_.add("encoder.bias", Tensor({d}));
    if (cfg_.has_f()) {
      for (int l = 0; l < cfg_.f_layers; ++l) {
        const auto p = "f." + std::to_string(l);
        Tensor w = fan_uniform(d, d, rng);
        for (auto& v : w.values()) v *= cfg_.f_init_scale;
        params_.add(p + ".weight", std::move(w));
        params_.add(p + ".bias", Tensor({d}));
      }
    }
    params_.add("decoder.0.weight", fan_uniform(d, d, rng));
    params_.add("decoder.0.bias", Tensor({d}));
    params_.add("decoder.1.weight", fan_uniform(d, 1, rng));
    params_.add("decoder.1.bias", Tensor({1}));
    if (cfg_.has_diffusion()) {
      const double raw = cfg_.heat.softplus ? std::log(std::expm1(cfg_.heat_init)) : cfg_.heat_init;
      const std::size_t n = num_nodes();
      switch (cfg_.heat.mode) {
        case HeatMode::sc: params_.add("heat.k", Tensor::scalar(raw)); break;
        case HeatMode::ec: params_.add("heat.classes", Tensor({cfg_.heat.num_classes}, raw)); break;
        case HeatMode::hm: params_.add("heat.matrix", Tensor({n, n}, raw)); break;
        case HeatMode::fc: break;
      }
    }
  }

  /// Names of the uncertainty-net parameters.
  std::vector<std::string> f_parameter_names() const {
    std::vector<std::string> out;
    for (const auto& e : params_)
      if (e.name.starts_with("f.")) out.push_back(e.name);
    return out;
  }

 private:
  NdeConfig cfg_;
  std::shared_ptr<const Graph> graph_;
  std::shared_ptr<const Laplacian> laplacian_;
  std::shared_ptr<const DiffusionPattern> pattern_;
  ParameterStore params_;
};

/// Mean of `count` coefficients written as first + sum(c - first) / count,
/// which is exactly `first` when all of them coincide.
inline double incident_mean(double first, double extra, std::size_t count) {
  return first + extra / static_cast<double>(count);
}

/// Heat capacity without a tape: a scalar (sc, fc) or the |V| x |V| matrix K
/// (ec, hm). For ec, K[i][j] = k_class(i,j) on edges, K[i][i] = mean of the
/// coefficients of edges leaving i (1 for isolated nodes), 0 elsewhere.
inline Tensor materialize_heat(const HeatCapacitySpec& heat, const ParameterStore& params, const Graph& g) {
  auto act = [&](double v) { return heat.softplus ? (v > 30.0 ? v : std::log1p(std::exp(v))) : v; };
  const std::size_t n = g.num_nodes();
  switch (heat.mode) {
    case HeatMode::fc: return Tensor::scalar(1.0);
    case HeatMode::sc: return Tensor::scalar(act(params.value("heat.k")[0]));
    case HeatMode::hm: {
      Tensor k = params.value("heat.matrix");
      for (auto& v : k.values()) v = act(v);
      return k;
    }
    case HeatMode::ec: {
      const Tensor& coef = params.value("heat.classes");
      Tensor k({n, n});
      std::vector<double> first(n, 0.0), extra(n, 0.0);
      std::vector<std::size_t> count(n, 0);
      for (const auto& e : g.edges()) {
        if (!e.class_id)
          throw InvalidArgument("EC heat capacity: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                                ") has no class id");
        if (*e.class_id >= coef.size()) throw InvalidArgument("EC heat capacity: class id out of range");
        const double c = act(coef[*e.class_id]);
        k[e.src * n + e.dst] = c;
        if (count[e.src]++ == 0)
          first[e.src] = c;
        else
          extra[e.src] += c - first[e.src];
      }
      for (std::size_t i = 0; i < n; ++i) k[i * n + i] = count[i] ? incident_mean(first[i], extra[i], count[i]) : 1.0;
      return k;
    }
  }
  return {};
}

namespace detail {

/// Values of (K ⊙ L) on the pattern entries (or k * L for scalar modes), as a 1 x nnz row.
inline Var heat_operator(Tape& tape, NdeModel& model) {
  const auto key = "heat-operator:" + std::to_string(reinterpret_cast<std::uintptr_t>(&model.params()));
  return tape.memo(key, [&]() -> Var {
    const DiffusionPattern& p = model.pattern();
    const auto nnz = static_cast<Eigen::Index>(p.nnz());
    Matrix lap(1, nnz);
    for (Eigen::Index e = 0; e < nnz; ++e) lap(0, e) = p.lap[static_cast<std::size_t>(e)];
    const HeatCapacitySpec& heat = model.config().heat;
    auto activated = [&](Var raw) { return heat.softplus ? softplus(raw) : raw; };

    switch (heat.mode) {
      case HeatMode::fc: return tape.constant(std::move(lap));
      case HeatMode::sc: return scale_by(activated(tape.param(model.params(), "heat.k")), tape.constant(std::move(lap)));
      case HeatMode::hm: {
        Var k = activated(tape.param(model.params(), "heat.matrix"));
        const auto n = static_cast<Eigen::Index>(p.num_nodes());
        Matrix out(1, nnz);
        const Matrix& kv = k.value();
        for (std::size_t i = 0; i < p.num_nodes(); ++i)
          for (std::size_t e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e)
            out(0, static_cast<Eigen::Index>(e)) = kv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p.col[e])) * p.lap[e];
        (void)n;
        return tape.push("heat-matrix", std::move(out), [k = k.id, &p](Tape& t, std::size_t self) {
          const Matrix& g = t.grad(self);
          Matrix& gk = t.grad_acc(k);
          for (std::size_t i = 0; i < p.num_nodes(); ++i)
            for (std::size_t e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e)
              gk(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p.col[e])) += g(0, static_cast<Eigen::Index>(e)) * p.lap[e];
        });
      }
      case HeatMode::ec: {
        Var c = activated(tape.param(model.params(), "heat.classes"));
        const Matrix& cv = c.value();
        Matrix out(1, nnz);
        for (std::size_t i = 0; i < p.num_nodes(); ++i) {
          const auto& inc = p.incident_classes[i];
          for (std::size_t e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) {
            double k;
            if (p.cls[e]) {
              k = cv(0, static_cast<Eigen::Index>(*p.cls[e]));
            } else if (inc.empty()) {
              k = 1.0;
            } else {
              const double first = cv(0, static_cast<Eigen::Index>(inc.front()));
              double extra = 0.0;
              for (std::size_t q = 1; q < inc.size(); ++q) extra += cv(0, static_cast<Eigen::Index>(inc[q])) - first;
              k = incident_mean(first, extra, inc.size());
            }
            out(0, static_cast<Eigen::Index>(e)) = k * p.lap[e];
          }
        }
        return tape.push("heat-classes", std::move(out), [c = c.id, &p](Tape& t, std::size_t self) {
          const Matrix& g = t.grad(self);
          Matrix& gc = t.grad_acc(c);
          for (std::size_t i = 0; i < p.num_nodes(); ++i) {
            const auto& inc = p.incident_classes[i];
            for (std::size_t e = p.row_ptr[i]; e < p.row_ptr[i + 1]; ++e) {
              const double ge = g(0, static_cast<Eigen::Index>(e)) * p.lap[e];
              if (p.cls[e]) {
                gc(0, static_cast<Eigen::Index>(*p.cls[e])) += ge;
              } else if (!inc.empty()) {
                const double w = ge / static_cast<double>(inc.size());
                for (auto ci : inc) gc(0, static_cast<Eigen::Index>(ci)) += w;
              }
            }
          }
        });
      }
    }
    throw InvalidArgument("unhandled heat mode");
  });
}

/// (K ⊙ L) * H for a node-major batch: H has |V| * B rows (row i * B + b is
/// node i of batch item b), so it is viewed as |V| x (B * D).
inline Var propagate(const DiffusionPattern& p, Var values, Var h) {
  const auto n = static_cast<Eigen::Index>(p.num_nodes());
  const Matrix& hv = h.value();
  if (hv.rows() % n != 0)
    throw InvalidArgument("hidden state has " + std::to_string(hv.rows()) + " rows, not a multiple of |V|=" +
                          std::to_string(n));
  const Eigen::Index width = hv.size() / n;
  const ConstMatrixMap hview(hv.data(), n, width);
  const Matrix& val = values.value();
  Matrix out(hv.rows(), hv.cols());
  MatrixMap oview(out.data(), n, width);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = oview.row(i);
    row.setZero();
    for (std::size_t e = p.row_ptr[static_cast<std::size_t>(i)]; e < p.row_ptr[static_cast<std::size_t>(i) + 1]; ++e)
      row.noalias() += val(0, static_cast<Eigen::Index>(e)) * hview.row(static_cast<Eigen::Index>(p.col[e]));
  }
  return h.tape->push("propagate", std::move(out), [&p, v = values.id, h = h.id, n, width](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const ConstMatrixMap gview(g.data(), n, width);
    const Matrix& val = t.value(v);
    const Matrix& hv = t.value(h);
    const ConstMatrixMap hview(hv.data(), n, width);
    Matrix& gh = t.grad_acc(h);
    MatrixMap ghview(gh.data(), n, width);
    Matrix& gv = t.grad_acc(v);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t e = p.row_ptr[static_cast<std::size_t>(i)]; e < p.row_ptr[static_cast<std::size_t>(i) + 1]; ++e) {
        const auto j = static_cast<Eigen::Index>(p.col[e]);
        ghview.row(j).noalias() += val(0, static_cast<Eigen::Index>(e)) * gview.row(i);
        gv(0, static_cast<Eigen::Index>(e)) += gview.row(i).dot(hview.row(j));
      }
    }
  });
}

inline Var layer(Tape& tape, NdeModel& model, const std::string& prefix, Var x) {
  return fc(x, tape.param(model.params(), prefix + ".weight"), tape.param(model.params(), prefix + ".bias"));
}

}  // namespace detail

/// H0 = ReLU(FC1(x)); x has |V| * B rows and M columns.
inline Var encode(Tape& tape, NdeModel& model, Var x) {
  if (static_cast<std::size_t>(x.cols()) != model.config().input_dim)
    throw InvalidArgument("encode: input has " + std::to_string(x.cols()) + " features, model expects " +
                          std::to_string(model.config().input_dim));
  return relu(detail::layer(tape, model, "encoder", x));
}

/// f(H) = ReLU(FC(...ReLU(FC(H)))) with f_layers layers.
inline Var uncertainty(Tape& tape, NdeModel& model, Var h) {
  Var out = h;
  for (int l = 0; l < model.config().f_layers; ++l) out = relu(detail::layer(tape, model, "f." + std::to_string(l), out));
  return out;
}

/// dH/dt = -(K ⊙ L) H + f(H), with either term removed under the ablations.
inline Var nde_dynamics(Tape& tape, NdeModel& model, Var h) {
  const auto& cfg = model.config();
  if (static_cast<std::size_t>(h.cols()) != cfg.hidden_dim)
    throw InvalidArgument("nde_dynamics: hidden state has " + std::to_string(h.cols()) + " columns, expected " +
                          std::to_string(cfg.hidden_dim));
  if (cfg.has_diffusion() && cfg.has_f())
    return sub(uncertainty(tape, model, h), detail::propagate(model.pattern(), detail::heat_operator(tape, model), h));
  if (cfg.has_diffusion()) return neg(detail::propagate(model.pattern(), detail::heat_operator(tape, model), h));
  return uncertainty(tape, model, h);
}

inline Dynamics make_dynamics(NdeModel& model) {
  return [&model](Tape& tape, double, Var h) { return nde_dynamics(tape, model, h); };
}

/// y = FC5(ReLU(FC4(H))), shared across forecast steps.
inline Var decode(Tape& tape, NdeModel& model, Var h) {
  return detail::layer(tape, model, "decoder.1", relu(detail::layer(tape, model, "decoder.0", h)));
}

/// Puts every parameter and the heat operator on the tape once. Non-recording
/// integration reuses these nodes at every step.
inline void bind(Tape& tape, NdeModel& model) {
  for (const auto& e : model.params()) tape.param(model.params(), e.name);
  if (model.config().has_diffusion()) detail::heat_operator(tape, model);
}

struct ForecastTrace {
  Var hidden0;
  std::vector<Var> hidden;       // H(s), s = 1..S
  std::vector<Var> predictions;  // decoder output per step, |V| * B x 1
  SolverStats stats;
};

/// Encode, then evolve H over [s-1, s] for s = 1..S and decode after every
/// interval. `record` keeps the solver stages for backward.
inline ForecastTrace forecast(Tape& tape, NdeModel& model, Var x, std::size_t steps, const SolverConfig& cfg,
                              bool record = true) {
  if (steps == 0) throw InvalidArgument("forecast: steps must be >= 1");
  bind(tape, model);
  ForecastTrace tr;
  tr.hidden0 = encode(tape, model, x);
  const Dynamics dyn = make_dynamics(model);
  Var h = tr.hidden0;
  for (std::size_t s = 1; s <= steps; ++s) {
    try {
      h = integrate(dyn, h, static_cast<double>(s - 1), static_cast<double>(s), cfg, record, &tr.stats);
    } catch (const NumericalError& e) {
      throw NumericalError("forecast step " + std::to_string(s) + ": " + e.what());
    }
    tr.hidden.push_back(h);
    tr.predictions.push_back(decode(tape, model, h));
  }
  return tr;
}

struct ForecastOutput {
  Tensor predictions;                  // S x |V| x 1
  std::optional<Tensor> hidden_states; // S x |V| x D
  SolverStats stats;
};

/// Gradient-free forecast for a single |V| x M input.
inline ForecastOutput forecast(NdeModel& model, const Tensor& x, std::size_t steps, const SolverConfig& cfg,
                               bool keep_hidden = false) {
  const std::size_t n = model.num_nodes();
  if (x.rows() != static_cast<Eigen::Index>(n))
    throw InvalidArgument("forecast: input has " + std::to_string(x.rows()) + " rows, graph has " + std::to_string(n) + " nodes");
  require_finite(x, "forecast input");
  Tape tape;
  const auto tr = forecast(tape, model, tape.constant(x), steps, cfg, false);
  ForecastOutput out;
  out.predictions = Tensor({steps, n, 1});
  if (keep_hidden) out.hidden_states = Tensor({steps, n, model.config().hidden_dim});
  for (std::size_t s = 0; s < steps; ++s) {
    out.predictions.slice(s) = tr.predictions[s].value();
    if (keep_hidden) out.hidden_states->slice(s) = tr.hidden[s].value();
  }
  out.stats = tr.stats;
  return out;
}

}  // namespace nde
