#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "nde/experiment.hpp"

using namespace nde;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.graph.rows = 4;
  c.graph.cols = 4;
  c.data.snapshots = 30;
  c.data.horizon = 3.0;
  c.data.hotspots = 2;
  c.data.train_steps = 2;
  c.data.train_stride = 3;
  c.data.eval_steps = 3;
  c.model.hidden_dim = 4;
  c.train.max_iter = 4;
  c.solver = SolverConfig::rk4(0.5);
  c.eval_solver = SolverConfig::rk4(0.25);
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nde_experiment_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) setenv("NDE_NUM_THREADS", value, 1);
    else unsetenv("NDE_NUM_THREADS");
  }
  ~EnvGuard() { unsetenv("NDE_NUM_THREADS"); }
};

}  // namespace

TEST(Strided, KeepsTheLatestWindowAndSpacing) {
  std::vector<Window> ws(10);
  for (std::size_t i = 0; i < ws.size(); ++i) ws[i].anchor = i;
  const auto s = strided(ws, 4);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].anchor, 1u);
  EXPECT_EQ(s[1].anchor, 5u);
  EXPECT_EQ(s[2].anchor, 9u);
  EXPECT_EQ(strided(ws, 1).size(), 10u);
}

TEST(Dataset, SeedControlsTopologyHotspotsAndNoise) {
  RunConfig c = tiny_config();
  c.graph.type = "watts_strogatz";
  c.graph.nodes = 20;
  c.data.noise = 0.1;
  const auto a = build_dataset(c, 1), b = build_dataset(c, 1), other = build_dataset(c, 2);
  EXPECT_EQ(a.graph->hash(), b.graph->hash());
  EXPECT_EQ(a.series.values, b.series.values);
  EXPECT_NE(a.graph->hash(), other.graph->hash());
  ASSERT_TRUE(a.clean.has_value());
  EXPECT_NE(a.series.values, a.clean->values);

  c.data.data_seed = 7;
  EXPECT_EQ(build_dataset(c, 1).series.values, build_dataset(c, 2).series.values);
}

TEST(Dataset, NoiseFreeSeriesEqualsCleanSeries) {
  const auto d = build_dataset(tiny_config(), 0);
  ASSERT_TRUE(d.clean.has_value());
  EXPECT_EQ(d.series.values, d.clean->values);
}

TEST(Dataset, DirectoryRoundTripAndTamperDetection) {
  RunConfig c = tiny_config();
  c.data.noise = 0.1;
  const auto d = build_dataset(c, 3);
  const auto dir = scratch("roundtrip");
  const auto manifest = write_dataset(d, dir);
  EXPECT_EQ(manifest.at("graph_hash").get<std::string>(), d.graph->hash());
  EXPECT_TRUE(manifest.at("files").contains("noisy.bin"));

  const auto back = load_dataset(dir);
  EXPECT_EQ(back.graph->hash(), d.graph->hash());
  EXPECT_EQ(back.series.values, d.series.values);
  EXPECT_EQ(back.clean->values, d.clean->values);

  auto bytes = io::read_file(dir / "noisy.bin");
  bytes[8] ^= 1;
  io::write_file(dir / "noisy.bin", bytes);
  try {
    load_dataset(dir);
    FAIL() << "tampered file accepted";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("noisy.bin"), std::string::npos) << e.what();
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, MissingManifestIsReported) {
  EXPECT_THROW(load_dataset(scratch("empty")), InvalidArgument);
}

TEST(Prepare, SplitsWindowsAndFitsOnTrainingPart) {
  const RunConfig c = tiny_config();
  const auto d = build_dataset(c, 0);
  const auto p = prepare_data(c, d.series);
  EXPECT_EQ(p.split.train_end, 21u);
  EXPECT_EQ(p.split.valid_end, 24u);
  // Training targets must end before snapshot 21: anchors 0..18 with stride 3 counted back from 18.
  ASSERT_EQ(p.train.size, 7u);
  EXPECT_EQ(p.train.anchors.front(), 0u);
  EXPECT_EQ(p.train.anchors.back(), 18u);
  EXPECT_EQ(p.train.steps(), 2u);
  EXPECT_EQ(p.valid.steps(), 2u);
  EXPECT_EQ(p.test.steps(), 3u);
  for (auto a : p.test.anchors) EXPECT_GE(a + 1, p.split.valid_end);

  double mean = 0.0;
  for (std::size_t t = 0; t < p.split.train_end; ++t)
    for (std::size_t v = 0; v < d.series.num_nodes(); ++v) mean += d.series.values[(t * d.series.num_nodes() + v)];
  mean /= static_cast<double>(p.split.train_end * d.series.num_nodes());
  EXPECT_NEAR(p.norm.mean[0], mean, 1e-12);
}

TEST(Prepare, TooShortSeriesIsAnError) {
  RunConfig c = tiny_config();
  c.data.eval_steps = 25;
  const auto d = build_dataset(c, 0);
  EXPECT_THROW(prepare_data(c, d.series), InvalidArgument);
}

TEST(Summary, StdNeedsTwoValues) {
  EXPECT_FALSE(summarize({0.5}).std.has_value());
  const auto s = summarize({1.0, 3.0});
  EXPECT_EQ(s.mean, 2.0);
  ASSERT_TRUE(s.std.has_value());
  EXPECT_NEAR(*s.std, std::sqrt(2.0), 1e-15);
}

TEST(Threads, EnvironmentVariableCapsWorkers) {
  {
    EnvGuard g(nullptr);
    EXPECT_EQ(seed_threads(4), 1u);
  }
  {
    EnvGuard g("3");
    EXPECT_EQ(seed_threads(8), 3u);
    EXPECT_EQ(seed_threads(2), 2u);
  }
  {
    EnvGuard g("many");
    EXPECT_THROW(seed_threads(2), InvalidArgument);
  }
}

TEST(Experiment, ParallelRunMatchesSerialRun) {
  const RunConfig c = tiny_config();
  ExperimentReport serial, parallel;
  {
    EnvGuard g("1");
    serial = run_experiment(c, {0, 1, 2});
  }
  {
    EnvGuard g("3");
    parallel = run_experiment(c, {0, 1, 2});
  }
  ASSERT_EQ(serial.survivors(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(serial.seeds[i].seed, parallel.seeds[i].seed);
    EXPECT_EQ(serial.seeds[i].test_metrics.mae, parallel.seeds[i].test_metrics.mae);
  }
  const auto j = serial.to_json();
  EXPECT_EQ(j.at("per_seed").size(), 3u);
  EXPECT_TRUE(j.at("test_mae").contains("std"));
  EXPECT_EQ(j.at("parameter_count").get<std::size_t>(), serial.seeds[0].parameter_count);
}

TEST(Experiment, SingleSeedReportHasNoStd) {
  const auto r = run_experiment(tiny_config(), {5});
  EXPECT_FALSE(r.to_json().at("test_mae").contains("std"));
  EXPECT_GT(r.seeds[0].test_metrics.count, 0u);
}

TEST(Experiment, AllSeedsFailingIsNumericalError) {
  RunConfig c = tiny_config();
  c.model.heat_init = -1e200;
  c.solver = SolverConfig::euler(1.0);
  try {
    run_experiment(c, {0, 1});
    FAIL() << "expected failure";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("every seed failed"), std::string::npos);
  }
}
