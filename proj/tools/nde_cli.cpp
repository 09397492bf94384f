// Command-line front end for the nde library.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "nde/experiment.hpp"

namespace fs = std::filesystem;
using namespace nde;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string heat_mode;
  std::string ablation;
  std::string solver;
  std::string grad;
  std::optional<double> noise;
  std::optional<std::size_t> max_iter;
  std::string data;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "single seed");
  cmd->add_option("--seeds", o.seeds, "seed or inclusive range N..M");
  cmd->add_option("--noise", o.noise, "noise standard deviation as a fraction of the series std");
  cmd->add_option("--data", o.data, "dataset directory written by 'generate'");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_flag("--force", o.force, "write into a non-empty output directory");
}

void add_model(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--heat-mode", o.heat_mode, "ec, hm, sc or fc");
  cmd->add_option("--ablation", o.ablation, "full, without-f or only-f");
  cmd->add_option("--solver", o.solver, "euler, rk4 or dopri5 for training");
  cmd->add_option("--grad", o.grad, "unrolled or adjoint");
  cmd->add_option("--max-iter", o.max_iter, "training iterations");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed && !o.seeds.empty()) throw InvalidArgument("--seed and --seeds are mutually exclusive");
  if (o.seed) c.seeds = {*o.seed};
  if (!o.seeds.empty()) c.seeds = parse_seed_range(o.seeds);
  if (!o.heat_mode.empty()) c.model.heat_mode = parse_heat_mode(o.heat_mode);
  if (!o.ablation.empty()) c.model.ablation = parse_ablation(o.ablation);
  if (!o.solver.empty()) c.solver.method = parse_method(o.solver);
  if (!o.grad.empty()) c.train.gradient_mode = parse_gradient_mode(o.grad);
  if (o.noise) c.data.noise = *o.noise;
  if (o.max_iter) c.train.max_iter = *o.max_iter;
  if (!o.data.empty()) c.data.dataset = o.data;
  if (!o.out.empty()) c.out = o.out;
  c.validate();
  return c;
}

void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw InvalidArgument("output path is not a directory: " + dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw InvalidArgument("output directory " + dir.string() + " is not empty; pass --force to overwrite");
  fs::create_directories(dir);
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

int cmd_generate(const Overrides& o) {
  const RunConfig c = resolve(o);
  if (c.seeds.size() != 1) throw InvalidArgument("generate takes one seed");
  const fs::path out = c.out;
  prepare_out(out, o.force);
  const Dataset d = build_dataset(c, c.seeds.front());
  io::Json extra{{"seed", c.seeds.front()}, {"noise", c.data.noise}};
  const auto m = write_dataset(d, out, extra);
  io::write_json(out / "config.json", config_to_json(c));
  std::cout << "wrote " << out.string() << ": " << d.graph->num_nodes() << " nodes, " << d.series.num_times()
            << " snapshots, graph " << m.at("graph_hash").get<std::string>() << "\n";
  return 0;
}

void write_loss_csv(const fs::path& path, const std::vector<IterationRecord>& history) {
  std::ostringstream s;
  s << std::setprecision(17) << "iteration,train_loss,valid_loss\n";
  for (const auto& h : history) s << h.iteration << ',' << h.train_loss << ',' << h.valid_loss << '\n';
  io::write_file(path, s.str());
}

void write_seed(const RunConfig& c, const fs::path& out, const SeedResult& r) {
  const fs::path dir = out / seed_dir(r.seed);
  fs::create_directories(dir);
  if (!r.ok) {
    io::write_json(dir / "error.json", io::Json{{"seed", r.seed}, {"error", r.error}});
    return;
  }
  save_checkpoint(*r.best_params, dir / "checkpoint");
  io::Json meta;
  meta["format"] = "nde-model-v1";
  meta["seed"] = r.seed;
  meta["graph_hash"] = r.graph_hash;
  meta["normalizer"] = r.norm.to_json();
  meta["target"] = r.target;
  meta["inputs"] = r.inputs;
  meta["feature_names"] = r.feature_names;
  meta["best_iteration"] = r.best_iteration;
  meta["config"] = config_to_json(c);
  io::write_json(dir / "model.json", meta);
  write_loss_csv(dir / "loss.csv", r.history);
}

int cmd_train(const Overrides& o) {
  const RunConfig c = resolve(o);
  const fs::path out = c.out;
  prepare_out(out, o.force);
  io::write_json(out / "config.json", config_to_json(c));

  std::optional<Dataset> fixed;
  if (!c.data.dataset.empty()) fixed = load_dataset(c.data.dataset);

  const auto rep = run_experiment(c, c.seeds, fixed ? &*fixed : nullptr, [&](const SeedResult& r) {
    write_seed(c, out, r);
    if (r.ok)
      std::cerr << "seed " << r.seed << ": test MAE " << r.test_metrics.mae << ", best iteration " << r.best_iteration
                << " (" << std::fixed << std::setprecision(1) << r.seconds << std::defaultfloat << std::setprecision(6)
                << " s)\n";
    else
      std::cerr << "seed " << r.seed << " failed: " << r.error << "\n";
  });
  io::write_json(out / "report.json", rep.to_json());
  std::cout << "test MAE " << rep.test_mae.mean;
  if (rep.test_mae.std) std::cout << " +- " << *rep.test_mae.std;
  std::cout << " over " << rep.survivors() << "/" << rep.seeds.size() << " seeds, " << rep.parameter_count
            << " parameters\n";
  return 0;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, const std::string& range) {
  const fs::path dir = checkpoint;
  const fs::path meta_path = dir / "model.json";
  if (!fs::exists(meta_path)) throw InvalidArgument("checkpoint not found: " + meta_path.string());
  const auto meta = io::read_json(meta_path);
  if (meta.value("format", "") != "nde-model-v1") throw InvalidArgument(meta_path.string() + ": not a model description");
  RunConfig c = config_from_json(meta.at("config"));
  if (!o.data.empty()) c.data.dataset = o.data;
  const auto seed = meta.at("seed").get<std::uint64_t>();

  const Dataset d = c.data.dataset.empty() ? build_dataset(c, seed) : load_dataset(c.data.dataset);
  const auto expected_hash = meta.at("graph_hash").get<std::string>();
  if (d.graph->hash() != expected_hash)
    throw InvalidArgument("dataset graph " + d.graph->hash() + " does not match the checkpoint's graph " + expected_hash);

  // Windows are rebuilt with the normalizer stored at training time.
  RunConfig raw = c;
  raw.data.normalize = "none";
  const Normalizer norm = Normalizer::from_json(meta.at("normalizer"));
  PreparedData p = prepare_data(raw, norm.apply(d.series));
  p.norm = norm;
  if (meta.at("target").get<std::size_t>() != p.target || meta.at("inputs").get<std::vector<std::size_t>>() != p.inputs)
    throw InvalidArgument("checkpoint target or input features do not match the dataset");

  NdeModel model(c.model_config(p.inputs.size() * c.data.history), d.graph, seed);
  const ParameterStore loaded = load_checkpoint(dir / "checkpoint");
  if (const auto diff = checkpoint_diff(model.params(), loaded); !diff.empty())
    throw InvalidArgument("checkpoint does not fit the configured model:\n" + diff);
  model.params().assign(loaded);

  const Batch* batch = nullptr;
  if (range == "train") batch = &p.train;
  else if (range == "valid") batch = &p.valid;
  else if (range == "test") batch = &p.test;
  else throw InvalidArgument("--range must be train, valid or test");

  const auto ev = evaluate(model, *batch, p.norm, p.target, c.eval_solver);
  const fs::path out = o.out.empty() ? dir / ("eval_" + range) : fs::path(o.out);
  prepare_out(out, o.force);
  io::write_json(out / "metrics.json", io::Json{{"range", range},
                                                {"mae", ev.metrics.mae},
                                                {"mse", ev.metrics.mse},
                                                {"count", ev.metrics.count},
                                                {"windows", batch->size},
                                                {"steps", batch->steps()}});
  std::ostringstream csv;
  csv << std::setprecision(17) << "window_anchor,step,time_index,node,predicted,actual\n";
  const std::size_t n = batch->num_nodes;
  for (std::size_t w = 0; w < batch->size; ++w)
    for (std::size_t s = 0; s < batch->steps(); ++s)
      for (std::size_t v = 0; v < n; ++v) {
        const auto row = static_cast<Eigen::Index>(v * batch->size + w);
        csv << batch->anchors[w] << ',' << s + 1 << ',' << batch->anchors[w] + s + 1 << ',' << v << ','
            << ev.predictions[s](row, 0) << ',' << ev.targets[s](row, 0) << '\n';
      }
  io::write_file(out / "trajectory.csv", csv.str());
  std::cout << range << " MAE " << ev.metrics.mae << ", MSE " << ev.metrics.mse << " (" << batch->size << " windows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural diffusion equation forecasting"};
  app.require_subcommand(1);
  Overrides o;
  std::string checkpoint, range = "test";

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset directory");
  add_common(gen, o);
  auto* tr = app.add_subcommand("train", "train and evaluate over seeds");
  add_common(tr, o);
  add_model(tr, o);
  auto* ev = app.add_subcommand("eval", "evaluate a trained checkpoint");
  ev->add_option("--checkpoint", checkpoint, "seed directory written by 'train'")->required();
  ev->add_option("--range", range, "train, valid or test");
  ev->add_option("--data", o.data, "dataset directory");
  ev->add_option("--out", o.out, "output directory");
  ev->add_flag("--force", o.force, "write into a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(o);
    if (tr->parsed()) return cmd_train(o);
    return cmd_eval(o, checkpoint, range);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
