#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "nde/config.hpp"
#include "nde/data.hpp"
#include "nde/graph.hpp"
#include "nde/model.hpp"
#include "nde/train.hpp"

namespace nde {

/// A graph with its observations. `clean` is kept for synthetic data.
struct Dataset {
  std::shared_ptr<const Graph> graph;
  NodeSeries series;
  std::optional<NodeSeries> clean;
  std::vector<std::string> station_ids;
};

/// Seed for the generated data: data_seed when given, else the run seed.
inline std::uint64_t data_seed_for(const RunConfig& cfg, std::uint64_t seed) { return cfg.data.data_seed.value_or(seed); }

inline std::uint64_t noise_seed(std::uint64_t data_seed) { return data_seed ^ 0x9e3779b97f4a7c15ULL; }

inline Graph build_graph(const GraphSpec& g, std::uint64_t seed) {
  if (g.type == "grid") return generate_grid(g.rows, g.cols);
  if (g.type == "watts_strogatz") return generate_watts_strogatz(g.nodes, g.ring_degree, g.rewire_prob, seed);
  if (g.type == "file") {
    if (g.path.empty()) throw InvalidArgument("graph.path is required for graph.type 'file'");
    return load_graph(g.path);
  }
  throw InvalidArgument("graph.type '" + g.type + "' cannot be built on its own");
}

/// Builds the dataset of one seed from the config (synthetic generation or
/// CSV ingestion). Dataset directories are handled by load_dataset.
inline Dataset build_dataset(const RunConfig& cfg, std::uint64_t seed) {
  const std::uint64_t ds = data_seed_for(cfg, seed);
  Dataset d;
  if (cfg.data.source == "csv") {
    if (cfg.data.csv_path.empty()) throw InvalidArgument("data.csv_path is required for data.source 'csv'");
    auto st = ingest_station_csv(cfg.data.csv_path, cfg.data.csv, cfg.graph.k_nn);
    d.graph = std::make_shared<Graph>(std::move(st.graph));
    d.series = std::move(st.series);
    d.station_ids = std::move(st.station_ids);
    return d;
  }
  d.graph = std::make_shared<Graph>(build_graph(cfg.graph, ds));
  NodeSeries clean = generate_diffusion_series(*d.graph, cfg.data.k, {cfg.data.hotspots, cfg.data.hotspot_value},
                                               cfg.data.horizon, cfg.data.snapshots, ds);
  d.series = inject_noise(clean, cfg.data.noise, noise_seed(ds));
  d.clean = std::move(clean);
  return d;
}

// Dataset directory layout: graph.json, clean.{json,bin}, noisy.{json,bin}
// when noise > 0, stations.json for ingested data, and manifest.json with
// the content hash of every file.

inline io::Json write_dataset(const Dataset& d, const std::filesystem::path& dir, const io::Json& extra = {}) {
  save_graph(*d.graph, dir / "graph.json");
  const NodeSeries& clean = d.clean ? *d.clean : d.series;
  save_series(clean, dir / "clean");
  const bool noisy = d.clean && !(d.series.values == d.clean->values);
  if (noisy) save_series(d.series, dir / "noisy");
  if (!d.station_ids.empty()) io::write_json(dir / "stations.json", io::Json(d.station_ids));

  io::Json files = io::Json::object();
  std::vector<std::string> names{"graph.json", "clean.json", "clean.bin"};
  if (noisy) {
    names.push_back("noisy.json");
    names.push_back("noisy.bin");
  }
  if (!d.station_ids.empty()) names.push_back("stations.json");
  for (const auto& n : names) files[n] = io::hex64(io::fnv1a(io::read_file(dir / n)));
  io::Json m;
  m["format"] = "nde-dataset-v1";
  m["graph_hash"] = d.graph->hash();
  m["num_nodes"] = d.graph->num_nodes();
  m["snapshots"] = clean.num_times();
  m["features"] = clean.feature_names;
  m["series"] = noisy ? "noisy" : "clean";
  m["files"] = files;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  io::write_json(dir / "manifest.json", m);
  return m;
}

/// Loads a dataset directory and checks every hash against the manifest.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw InvalidArgument("dataset manifest not found: " + mpath.string());
  const auto m = io::read_json(mpath);
  if (m.value("format", "") != "nde-dataset-v1") throw InvalidArgument(mpath.string() + ": not a dataset manifest");
  for (const auto& [name, hash] : m.at("files").items()) {
    if (!std::filesystem::exists(dir / name)) throw InvalidArgument("dataset file missing: " + (dir / name).string());
    if (io::hex64(io::fnv1a(io::read_file(dir / name))) != hash.get<std::string>())
      throw InvalidArgument("dataset file " + (dir / name).string() + " does not match its manifest hash");
  }
  Dataset d;
  d.graph = std::make_shared<Graph>(load_graph(dir / "graph.json"));
  if (d.graph->hash() != m.at("graph_hash").get<std::string>())
    throw InvalidArgument("dataset graph hash mismatch: manifest " + m.at("graph_hash").get<std::string>() + ", graph " +
                          d.graph->hash());
  NodeSeries clean = load_series(dir / "clean");
  const bool noisy = m.at("series").get<std::string>() == "noisy";
  d.series = noisy ? load_series(dir / "noisy") : clean;
  for (const NodeSeries* s : {&clean, &d.series}) {
    if (s->graph_ref != d.graph->hash())
      throw InvalidArgument("dataset series refers to graph " + s->graph_ref + ", not " + d.graph->hash());
    if (s->num_nodes() != d.graph->num_nodes()) throw InvalidArgument("dataset series and graph disagree on |V|");
  }
  d.clean = std::move(clean);
  if (std::filesystem::exists(dir / "stations.json"))
    d.station_ids = io::read_json(dir / "stations.json").get<std::vector<std::string>>();
  return d;
}

/// Normalized windows of the three chronological parts.
struct PreparedData {
  std::size_t target = 0;
  std::vector<std::size_t> inputs;
  Normalizer norm;
  SplitRanges split;
  Batch train, valid, test;
  std::vector<std::string> warnings;
};

/// Every `stride`-th window counted back from the latest one.
inline std::vector<Window> strided(const std::vector<Window>& ws, std::size_t stride) {
  std::vector<Window> out;
  for (std::size_t i = 0; i < ws.size(); ++i)
    if ((ws.size() - 1 - i) % stride == 0) out.push_back(ws[i]);
  return out;
}

inline PreparedData prepare_data(const RunConfig& cfg, const NodeSeries& series) {
  PreparedData p;
  p.target = cfg.data.target.empty() ? 0 : series.feature_index(cfg.data.target);
  if (cfg.data.inputs.empty()) {
    p.inputs.resize(series.num_features());
    std::iota(p.inputs.begin(), p.inputs.end(), std::size_t{0});
  } else {
    for (const auto& f : cfg.data.inputs) p.inputs.push_back(series.feature_index(f));
  }
  p.split = chronological_split(series.num_times(), cfg.data.split);
  p.norm = cfg.data.normalize == "zscore" ? fit_normalizer(series, 0, p.split.train_end, &p.warnings)
                                          : Normalizer::identity(series.num_features());
  const NodeSeries ns = p.norm.apply(series);
  const std::size_t n = series.num_nodes();
  const auto& d = cfg.data;
  auto part = [&](std::size_t steps, std::size_t begin, std::size_t end, std::size_t stride, const char* name) {
    if (ns.num_times() < d.history + steps)
      throw InvalidArgument(std::string(name) + " windows need " + std::to_string(d.history + steps) + " snapshots");
    auto ws = strided(windows_in(make_windows(ns, d.history, steps, p.target, p.inputs), begin, end), stride);
    if (ws.empty())
      throw InvalidArgument(std::string("no ") + name + " window of " + std::to_string(steps) + " steps fits in snapshots [" +
                            std::to_string(begin) + ", " + std::to_string(end) + ")");
    return make_batch(ws, n);
  };
  p.train = part(d.train_steps, 0, p.split.train_end, d.train_stride, "training");
  p.valid = part(std::min(d.train_steps, p.split.valid_end - p.split.train_end), p.split.train_end, p.split.valid_end, 1,
                 "validation");
  p.test = part(d.eval_steps, p.split.valid_end, p.split.total, d.eval_stride, "test");
  return p;
}

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics train_metrics, valid_metrics, test_metrics;
  std::size_t parameter_count = 0;
  std::size_t best_iteration = 0;
  SolverStats train_stats, eval_stats;
  double seconds = 0.0;
  std::vector<IterationRecord> history;
  std::optional<ParameterStore> best_params;
  std::optional<EvaluatedBatch> test_eval;
  std::vector<std::size_t> test_anchors;
  std::vector<std::string> warnings;
  // What a checkpoint needs besides its parameters.
  std::string graph_hash;
  Normalizer norm;
  std::size_t target = 0;
  std::vector<std::size_t> inputs;
  std::vector<std::string> feature_names;
};

struct Summary {
  double mean = 0.0;
  std::optional<double> std;  // sample std, needs >= 2 values
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct ExperimentReport {
  RunConfig config;
  std::vector<SeedResult> seeds;
  Summary test_mae, test_mse;
  std::size_t parameter_count = 0;
  double seconds = 0.0;
  std::vector<std::string> warnings;

  std::size_t survivors() const {
    return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; }));
  }

  io::Json to_json() const {
    auto summary = [](const Summary& s) {
      io::Json j{{"mean", s.mean}};
      if (s.std) j["std"] = *s.std;
      return j;
    };
    auto metrics = [](const Metrics& m) { return io::Json{{"mae", m.mae}, {"mse", m.mse}, {"count", m.count}}; };
    auto stats = [](const SolverStats& s) {
      return io::Json{{"accepted", s.accepted}, {"rejected", s.rejected}, {"evaluations", s.evaluations}};
    };
    io::Json per_seed = io::Json::array();
    for (const auto& s : seeds) {
      io::Json j{{"seed", s.seed}, {"ok", s.ok}};
      if (!s.ok) {
        j["error"] = s.error;
      } else {
        j["test"] = metrics(s.test_metrics);
        j["train"] = metrics(s.train_metrics);
        j["valid"] = metrics(s.valid_metrics);
        j["best_iteration"] = s.best_iteration;
        j["iterations"] = s.history.empty() ? 0 : s.history.back().iteration;
        j["solver_stats"] = {{"train", stats(s.train_stats)}, {"eval", stats(s.eval_stats)}};
      }
      j["wall_clock_seconds"] = s.seconds;
      per_seed.push_back(std::move(j));
    }
    io::Json j;
    j["heat_mode"] = to_string(config.model.heat_mode);
    j["ablation"] = to_string(config.model.ablation);
    j["parameter_count"] = parameter_count;
    j["seeds_requested"] = seeds.size();
    j["seeds_succeeded"] = survivors();
    j["test_mae"] = summary(test_mae);
    j["test_mse"] = summary(test_mse);
    j["per_seed"] = std::move(per_seed);
    j["warnings"] = warnings;
    j["wall_clock_seconds"] = seconds;
    return j;
  }
};

/// Trains and evaluates one seed. Failures are captured in the result.
inline SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const Dataset* fixed = nullptr,
                           const std::function<void(const IterationRecord&)>& on_iteration = {}) {
  const auto start = std::chrono::steady_clock::now();
  SeedResult r;
  r.seed = seed;
  try {
    const Dataset d = fixed ? *fixed : build_dataset(cfg, seed);
    const PreparedData p = prepare_data(cfg, d.series);
    r.warnings = p.warnings;
    r.graph_hash = d.graph->hash();
    r.norm = p.norm;
    r.target = p.target;
    r.inputs = p.inputs;
    r.feature_names = d.series.feature_names;
    NdeModel model(cfg.model_config(p.inputs.size() * cfg.data.history), d.graph, seed);
    r.parameter_count = model.parameter_count();
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.solver = cfg.solver;
    TrainResult tr = train(model, p.train, p.valid, tc, on_iteration);
    model.params().assign(tr.best_params);
    r.best_iteration = tr.best_iteration;
    r.history = std::move(tr.history);
    r.train_stats = tr.stats;
    r.train_metrics = evaluate(model, p.train, p.norm, p.target, cfg.eval_solver).metrics;
    r.valid_metrics = evaluate(model, p.valid, p.norm, p.target, cfg.eval_solver).metrics;
    EvaluatedBatch ev = evaluate(model, p.test, p.norm, p.target, cfg.eval_solver);
    r.test_metrics = ev.metrics;
    r.eval_stats = ev.stats;
    r.test_anchors = p.test.anchors;
    r.test_eval = std::move(ev);
    r.best_params = std::move(tr.best_params);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Worker count from NDE_NUM_THREADS (default 1), capped by the seed count.
inline std::size_t seed_threads(std::size_t seeds) {
  std::size_t n = 1;
  if (const char* env = std::getenv("NDE_NUM_THREADS")) {
    try {
      n = std::max<std::size_t>(1, std::stoul(env));
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("NDE_NUM_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return std::min(n, std::max<std::size_t>(1, seeds));
}

/// Runs every seed (in parallel up to NDE_NUM_THREADS) and aggregates over
/// the seeds that finished.
inline ExperimentReport run_experiment(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                       const Dataset* fixed = nullptr,
                                       const std::function<void(const SeedResult&)>& on_seed = {}) {
  if (seeds.empty()) throw InvalidArgument("run_experiment needs at least one seed");
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.config = cfg;
  rep.seeds.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      rep.seeds[i] = run_seed(cfg, seeds[i], fixed);
      if (on_seed) {
        std::lock_guard lock(report_mutex);
        on_seed(rep.seeds[i]);
      }
    }
  };
  const std::size_t threads = seed_threads(seeds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<double> mae, mse;
  for (const auto& s : rep.seeds) {
    for (const auto& w : s.warnings)
      if (std::find(rep.warnings.begin(), rep.warnings.end(), w) == rep.warnings.end()) rep.warnings.push_back(w);
    if (!s.ok) {
      rep.warnings.push_back("seed " + std::to_string(s.seed) + " failed: " + s.error);
      continue;
    }
    mae.push_back(s.test_metrics.mae);
    mse.push_back(s.test_metrics.mse);
    rep.parameter_count = s.parameter_count;
  }
  if (mae.empty()) throw NumericalError("every seed failed; first error: " + rep.seeds.front().error);
  rep.test_mae = summarize(mae);
  rep.test_mse = summarize(mse);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace nde
