#include <gtest/gtest.h>

#include <random>

#include "nde/graph.hpp"
#include "oracles.hpp"

using namespace nde;

TEST(Laplacian, TwoNodes) {
  const Graph g = Graph::undirected(2, {{0, 1}});
  const auto lap = build_laplacian(g);
  EXPECT_DOUBLE_EQ(lap.matrix(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(lap.matrix(0, 1), -0.5);
  EXPECT_DOUBLE_EQ(lap.matrix(1, 0), -0.5);
  EXPECT_DOUBLE_EQ(lap.matrix(1, 1), 0.5);
}

TEST(Laplacian, SingleNodeIsZero) {
  const auto lap = build_laplacian(Graph(1, {}));
  ASSERT_EQ(lap.matrix.rows(), 1);
  EXPECT_EQ(lap.matrix(0, 0), 0.0);
}

TEST(Laplacian, RejectsDirectedAndOutOfRange) {
  EXPECT_THROW(build_laplacian(Graph(2, {{0, 1, std::nullopt}}, true)), InvalidArgument);
  EXPECT_THROW(Graph(2, {{0, 2, std::nullopt}, {2, 0, std::nullopt}}), InvalidArgument);
  EXPECT_THROW(Graph(2, {{0, 1, std::nullopt}}), InvalidArgument);  // missing reverse edge
  EXPECT_THROW(Graph(2, {{0, 1, std::nullopt}, {0, 1, std::nullopt}, {1, 0, std::nullopt}}), InvalidArgument);
}

TEST(Laplacian, MooreGridSpectrum) {
  const auto lap = build_laplacian(generate_grid(20, 20));
  const auto ev = oracle::eigenvalues(lap.matrix);
  EXPECT_NEAR(ev.minCoeff(), 0.0, 1e-9);
  EXPECT_LE(ev.maxCoeff(), 2.0 + 1e-9);
}

TEST(Laplacian, MatchesEntrywiseOracle) {
  std::mt19937_64 rng(3);
  const Graph g = oracle::random_graph(30, 0.2, rng);
  const auto lap = build_laplacian(g);
  EXPECT_LT((lap.matrix - oracle::laplacian_from_edges(g)).cwiseAbs().maxCoeff(), 1e-15);
}

// Symmetric, PSD with spectrum in [0, 2], and D^1/2 1 in the null space, for
// random graphs of varying density.
TEST(Laplacian, SpectralInvariantsOnRandomGraphs) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  std::uniform_real_distribution<double> density(0.0, 0.6);
  for (int trial = 0; trial < 40; ++trial) {
    const Graph g = oracle::random_graph(size(rng), density(rng), rng);
    const auto lap = build_laplacian(g);
    EXPECT_LT((lap.matrix - lap.matrix.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const auto ev = oracle::eigenvalues(lap.matrix);
    EXPECT_GE(ev.minCoeff(), -1e-9);
    EXPECT_LE(ev.maxCoeff(), 2.0 + 1e-9);
    EXPECT_LT((lap.matrix * lap.null_vector).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Laplacian, NullVectorOnGeneratedGraphs) {
  for (const Graph& g : {generate_grid(20, 20), generate_watts_strogatz(400, 4, 0.1, 7)}) {
    const auto lap = build_laplacian(g);
    EXPECT_LT((lap.matrix * lap.null_vector).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Grid, Sizes) {
  EXPECT_EQ(generate_grid(20, 20).num_nodes(), 400u);
  const auto g2 = generate_grid(2, 2);
  EXPECT_EQ(g2.num_nodes(), 4u);
  for (auto d : g2.degrees()) EXPECT_EQ(d, 3u);
}

TEST(Grid, MooreDegrees) {
  const auto deg = generate_grid(3, 3).degrees();
  EXPECT_EQ(deg[4], 8u);
  for (std::size_t corner : {0u, 2u, 6u, 8u}) EXPECT_EQ(deg[corner], 3u);
  for (std::size_t side : {1u, 3u, 5u, 7u}) EXPECT_EQ(deg[side], 5u);
}

TEST(Grid, RejectsDegenerate) {
  EXPECT_THROW(generate_grid(1, 5), InvalidArgument);
  EXPECT_THROW(generate_grid(5, 1), InvalidArgument);
}

TEST(WattsStrogatz, EdgeCountConnectedDeterministic) {
  const auto a = generate_watts_strogatz(400, 4, 0.1, 42);
  const auto b = generate_watts_strogatz(400, 4, 0.1, 42);
  EXPECT_EQ(a.num_nodes(), 400u);
  EXPECT_EQ(a.num_undirected_edges(), 800u);
  EXPECT_TRUE(a.connected());
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_NE(a.hash(), generate_watts_strogatz(400, 4, 0.1, 43).hash());
}

TEST(WattsStrogatz, ZeroRewiringIsRingLattice) {
  const auto g = generate_watts_strogatz(10, 4, 0.0, 1);
  for (auto d : g.degrees()) EXPECT_EQ(d, 4u);
  const auto adj = g.adjacency_lists();
  EXPECT_EQ(adj[0], (std::vector<std::size_t>{1, 2, 8, 9}));
}

TEST(WattsStrogatz, RejectsBadParameters) {
  EXPECT_THROW(generate_watts_strogatz(10, 3, 0.1, 1), InvalidArgument);
  EXPECT_THROW(generate_watts_strogatz(4, 4, 0.1, 1), InvalidArgument);
  EXPECT_THROW(generate_watts_strogatz(10, 4, 1.5, 1), InvalidArgument);
}

TEST(Knn, CollinearPointsGivePath) {
  const auto g = build_knn_graph({{0.0, 0.0}, {0.0, 1.0}, {0.0, 2.0}}, 1);
  // Node 1 is equidistant from 0 and 2; the tie goes to node 0. Node 2 picks 1.
  EXPECT_EQ(g.num_undirected_edges(), 2u);
  const auto adj = g.adjacency_lists();
  EXPECT_EQ(adj[0], (std::vector<std::size_t>{1}));
  EXPECT_EQ(adj[1], (std::vector<std::size_t>{0, 2}));
}

TEST(Knn, CompleteWhenKIsNMinusOne) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lat(24.0, 44.0), lon(-87.0, -68.0);
  std::vector<GeoPoint> pts(5);
  for (auto& p : pts) p = {lat(rng), lon(rng)};
  const auto g = build_knn_graph(pts, 4);
  EXPECT_EQ(g.num_undirected_edges(), 10u);
}

TEST(Knn, StationRegionMinimumDegree) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> lat(23.886, 44.371), lon(-87.188, -67.605);
  std::vector<GeoPoint> pts(188);
  for (auto& p : pts) p = {lat(rng), lon(rng)};
  const auto g = build_knn_graph(pts, 4);
  EXPECT_EQ(g.num_nodes(), 188u);
  for (auto d : g.degrees()) EXPECT_GE(d, 4u);
}

TEST(Knn, DuplicateCoordinatesBreakTiesByIndex) {
  const auto g = build_knn_graph({{10.0, 10.0}, {10.0, 10.0}, {10.0, 10.0}, {20.0, 20.0}}, 1);
  const auto adj = g.adjacency_lists();
  EXPECT_EQ(adj[0], (std::vector<std::size_t>{1, 2, 3}));  // 0 picks 1; 2 and 3 pick 0
  EXPECT_EQ(adj[3], (std::vector<std::size_t>{0}));
}

TEST(Knn, RejectsKTooLarge) {
  EXPECT_THROW(build_knn_graph({{0, 0}, {1, 1}}, 2), InvalidArgument);
  EXPECT_THROW(build_knn_graph({{0, 0}, {std::nan(""), 1}}, 1), InvalidArgument);
}

TEST(Haversine, KnownDistance) {
  // One degree of latitude along a meridian.
  EXPECT_NEAR(haversine_km({0.0, 0.0}, {1.0, 0.0}), 111.195, 1e-2);
}

TEST(GraphJson, RoundTripWithClasses) {
  auto g = generate_grid(2, 3);
  std::vector<std::size_t> cls;
  for (std::size_t i = 0; i < g.edges().size(); ++i) cls.push_back(i % 3);
  g = g.with_edge_classes(cls);
  const auto j = g.to_json();
  EXPECT_EQ(j.at("edges")[0].size(), 3u);
  EXPECT_EQ(Graph::from_json(j), g);
  EXPECT_EQ(generate_grid(2, 2).to_json().at("edges")[0].size(), 2u);
  EXPECT_THROW(Graph::from_json(io::Json::parse(R"({"num_nodes":2,"edges":[],"extra":1})")), InvalidArgument);
}
