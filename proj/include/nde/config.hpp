#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nde/data.hpp"
#include "nde/io.hpp"
#include "nde/model.hpp"
#include "nde/ode.hpp"
#include "nde/train.hpp"

namespace nde {

struct GraphSpec {
  std::string type = "grid";  // grid | watts_strogatz | file | stations
  std::size_t rows = 20;
  std::size_t cols = 20;
  std::size_t nodes = 400;
  std::size_t ring_degree = 4;
  double rewire_prob = 0.1;
  std::string path;       // file
  std::size_t k_nn = 4;   // stations
};

struct DataSpec {
  std::string source = "synthetic";  // synthetic | csv
  // synthetic
  double k = 1.0;
  std::size_t hotspots = 3;
  double hotspot_value = 25.0;
  double horizon = 5.0;
  std::size_t snapshots = 100;
  double noise = 0.0;
  std::optional<std::uint64_t> data_seed;
  // csv
  std::string csv_path;
  CsvSchema csv;
  // dataset directory written by `generate`; overrides source when set
  std::string dataset;
  // windows
  std::string target;               // empty: first feature
  std::vector<std::string> inputs;  // empty: every feature
  std::size_t history = 1;
  std::size_t train_steps = 20;
  std::size_t train_stride = 10;
  std::size_t eval_steps = 20;
  std::size_t eval_stride = 1;
  SplitSpec split;
  std::string normalize = "zscore";  // zscore | none
};

struct ModelSpec {
  std::size_t hidden_dim = 20;
  int f_layers = 2;
  HeatMode heat_mode = HeatMode::sc;
  Ablation ablation = Ablation::full;
  double heat_init = 0.1;
  double f_init_scale = 0.1;
  bool softplus = false;
};

/// Everything a command needs, read from one JSON file plus flag overrides.
struct RunConfig {
  GraphSpec graph;
  DataSpec data;
  ModelSpec model;
  SolverConfig solver = SolverConfig::rk4(1.0);
  SolverConfig eval_solver = SolverConfig::dopri5(1e-6, 1e-6);
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "runs/default";

  RunConfig() { train.max_iter = 400; }

  NdeConfig model_config(std::size_t input_dim) const {
    NdeConfig c;
    c.input_dim = input_dim;
    c.hidden_dim = model.hidden_dim;
    c.f_layers = model.f_layers;
    c.heat.mode = model.heat_mode;
    c.heat.softplus = model.softplus;
    c.ablation = model.ablation;
    c.heat_init = model.heat_init;
    c.f_init_scale = model.f_init_scale;
    return c;
  }

  void validate() const;
};

namespace detail {

/// Reads keys from one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const io::Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw InvalidArgument("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const io::Json::exception& e) {
      throw InvalidArgument("config key '" + name_ + "." + key + "': " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v;
    get(key, v);
    out = v;
  }

  template <typename Parse, typename T>
  void parse(const char* key, T& out, Parse p) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, s);
    out = p(s);
  }

  const io::Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw InvalidArgument("unknown config key '" + (name_.empty() ? k : name_ + "." + k) + "'");
  }

 private:
  const io::Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline void read_solver(const io::Json& j, const std::string& name, SolverConfig& s) {
  Section r(j, name);
  r.parse("method", s.method, parse_method);
  r.get("fixed_step", s.fixed_step);
  r.get("rtol", s.rtol);
  r.get("atol", s.atol);
  r.get("max_steps", s.max_steps);
  r.get("min_step", s.min_step);
  r.finish();
}

inline io::Json solver_json(const SolverConfig& s) {
  return io::Json{{"method", to_string(s.method)}, {"fixed_step", s.fixed_step}, {"rtol", s.rtol},
                  {"atol", s.atol},                {"max_steps", s.max_steps},   {"min_step", s.min_step}};
}

}  // namespace detail

inline void RunConfig::validate() const {
  solver.validate();
  eval_solver.validate();
  if (seeds.empty()) throw InvalidArgument("at least one seed is required");
  if (model.hidden_dim == 0) throw InvalidArgument("model.hidden_dim must be positive");
  if (model.f_layers < 1) throw InvalidArgument("model.f_layers must be at least 1");
  if (!(model.f_init_scale >= 0.0) || !std::isfinite(model.f_init_scale))
    throw InvalidArgument("model.f_init_scale must be finite and >= 0");
  if (data.history == 0 || data.train_steps == 0 || data.eval_steps == 0 || data.train_stride == 0 || data.eval_stride == 0)
    throw InvalidArgument("data.history, train_steps, eval_steps and strides must be >= 1");
  if (data.normalize != "zscore" && data.normalize != "none")
    throw InvalidArgument("data.normalize must be 'zscore' or 'none'");
  if (data.source != "synthetic" && data.source != "csv") throw InvalidArgument("data.source must be 'synthetic' or 'csv'");
  if (!(data.noise >= 0.0)) throw InvalidArgument("data.noise must be >= 0");
  if (!(train.learning_rate > 0.0) || !(train.weight_decay >= 0.0))
    throw InvalidArgument("train.learning_rate must be > 0 and train.weight_decay >= 0");
  const std::set<std::string> graph_types{"grid", "watts_strogatz", "file", "stations"};
  if (!graph_types.contains(graph.type))
    throw InvalidArgument("graph.type must be grid, watts_strogatz, file or stations, got '" + graph.type + "'");
  if ((graph.type == "stations") != (data.source == "csv") && data.dataset.empty())
    throw InvalidArgument("graph.type 'stations' goes together with data.source 'csv'");
}

inline RunConfig config_from_json(const io::Json& j) {
  RunConfig c;
  detail::Section top(j, "");
  if (const auto* g = top.child("graph")) {
    detail::Section r(*g, "graph");
    r.get("type", c.graph.type);
    r.get("rows", c.graph.rows);
    r.get("cols", c.graph.cols);
    r.get("nodes", c.graph.nodes);
    r.get("ring_degree", c.graph.ring_degree);
    r.get("rewire_prob", c.graph.rewire_prob);
    r.get("path", c.graph.path);
    r.get("k_nn", c.graph.k_nn);
    r.finish();
  }
  if (const auto* d = top.child("data")) {
    detail::Section r(*d, "data");
    r.get("source", c.data.source);
    r.get("k", c.data.k);
    r.get("hotspots", c.data.hotspots);
    r.get("hotspot_value", c.data.hotspot_value);
    r.get("horizon", c.data.horizon);
    r.get("snapshots", c.data.snapshots);
    r.get("noise", c.data.noise);
    r.get("data_seed", c.data.data_seed);
    r.get("csv_path", c.data.csv_path);
    if (const auto* cs = r.child("csv_columns")) {
      detail::Section s(*cs, "data.csv_columns");
      s.get("id", c.data.csv.id);
      s.get("lat", c.data.csv.lat);
      s.get("lon", c.data.csv.lon);
      s.get("time", c.data.csv.time);
      s.get("values", c.data.csv.values);
      s.finish();
    }
    r.get("dataset", c.data.dataset);
    r.get("target", c.data.target);
    r.get("inputs", c.data.inputs);
    r.get("history", c.data.history);
    r.get("train_steps", c.data.train_steps);
    r.get("train_stride", c.data.train_stride);
    r.get("eval_steps", c.data.eval_steps);
    r.get("eval_stride", c.data.eval_stride);
    if (const auto* sp = r.child("split")) {
      detail::Section s(*sp, "data.split");
      s.get("train", c.data.split.train_fraction);
      s.get("valid", c.data.split.valid_fraction);
      s.finish();
    }
    r.get("normalize", c.data.normalize);
    r.finish();
  }
  if (const auto* m = top.child("model")) {
    detail::Section r(*m, "model");
    r.get("hidden_dim", c.model.hidden_dim);
    r.get("f_layers", c.model.f_layers);
    r.parse("heat_mode", c.model.heat_mode, parse_heat_mode);
    r.parse("ablation", c.model.ablation, parse_ablation);
    r.get("heat_init", c.model.heat_init);
    r.get("f_init_scale", c.model.f_init_scale);
    r.get("softplus", c.model.softplus);
    r.finish();
  }
  if (const auto* s = top.child("solver")) detail::read_solver(*s, "solver", c.solver);
  if (const auto* s = top.child("eval_solver")) detail::read_solver(*s, "eval_solver", c.eval_solver);
  if (const auto* t = top.child("train")) {
    detail::Section r(*t, "train");
    r.get("learning_rate", c.train.learning_rate);
    r.get("weight_decay", c.train.weight_decay);
    r.get("max_iter", c.train.max_iter);
    r.parse("gradient_mode", c.train.gradient_mode, parse_gradient_mode);
    r.get("patience", c.train.patience);
    std::vector<std::string> frozen;
    r.get("frozen", frozen);
    c.train.frozen = {frozen.begin(), frozen.end()};
    r.finish();
  }
  top.get("seeds", c.seeds);
  top.get("out", c.out);
  top.finish();
  return c;
}

/// Relative file paths inside the configuration are taken relative to the file itself.
inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c = config_from_json(io::read_json(path));
  const auto base = std::filesystem::absolute(path).parent_path();
  for (std::string* p : {&c.data.csv_path, &c.data.dataset, &c.graph.path})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return c;
}

inline io::Json config_to_json(const RunConfig& c) {
  io::Json j;
  j["graph"] = {{"type", c.graph.type},
                {"rows", c.graph.rows},
                {"cols", c.graph.cols},
                {"nodes", c.graph.nodes},
                {"ring_degree", c.graph.ring_degree},
                {"rewire_prob", c.graph.rewire_prob},
                {"path", c.graph.path},
                {"k_nn", c.graph.k_nn}};
  io::Json d;
  d["source"] = c.data.source;
  d["k"] = c.data.k;
  d["hotspots"] = c.data.hotspots;
  d["hotspot_value"] = c.data.hotspot_value;
  d["horizon"] = c.data.horizon;
  d["snapshots"] = c.data.snapshots;
  d["noise"] = c.data.noise;
  d["data_seed"] = c.data.data_seed ? io::Json(*c.data.data_seed) : io::Json(nullptr);
  d["csv_path"] = c.data.csv_path;
  d["csv_columns"] = {{"id", c.data.csv.id},
                      {"lat", c.data.csv.lat},
                      {"lon", c.data.csv.lon},
                      {"time", c.data.csv.time},
                      {"values", c.data.csv.values}};
  d["dataset"] = c.data.dataset;
  d["target"] = c.data.target;
  d["inputs"] = c.data.inputs;
  d["history"] = c.data.history;
  d["train_steps"] = c.data.train_steps;
  d["train_stride"] = c.data.train_stride;
  d["eval_steps"] = c.data.eval_steps;
  d["eval_stride"] = c.data.eval_stride;
  d["split"] = {{"train", c.data.split.train_fraction}, {"valid", c.data.split.valid_fraction}};
  d["normalize"] = c.data.normalize;
  j["data"] = std::move(d);
  j["model"] = {{"hidden_dim", c.model.hidden_dim},
                {"f_layers", c.model.f_layers},
                {"heat_mode", to_string(c.model.heat_mode)},
                {"ablation", to_string(c.model.ablation)},
                {"heat_init", c.model.heat_init},
                {"f_init_scale", c.model.f_init_scale},
                {"softplus", c.model.softplus}};
  j["solver"] = detail::solver_json(c.solver);
  j["eval_solver"] = detail::solver_json(c.eval_solver);
  std::vector<std::string> frozen(c.train.frozen.begin(), c.train.frozen.end());
  std::sort(frozen.begin(), frozen.end());
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"max_iter", c.train.max_iter},
                {"gradient_mode", to_string(c.train.gradient_mode)},
                {"patience", c.train.patience ? io::Json(*c.train.patience) : io::Json(nullptr)},
                {"frozen", frozen}};
  j["seeds"] = c.seeds;
  j["out"] = c.out;
  return j;
}

/// "3" -> {3}; "0..9" -> {0, ..., 9} (inclusive).
inline std::vector<std::uint64_t> parse_seed_range(const std::string& s) {
  auto number = [&](const std::string& part) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size() || part.front() == '-') throw InvalidArgument("bad seed value '" + s + "'");
    return v;
  };
  const auto dots = s.find("..");
  if (dots == std::string::npos) return {number(s)};
  const auto lo = number(s.substr(0, dots)), hi = number(s.substr(dots + 2));
  if (hi < lo) throw InvalidArgument("seed range '" + s + "' is empty");
  std::vector<std::uint64_t> out;
  for (auto v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

}  // namespace nde
