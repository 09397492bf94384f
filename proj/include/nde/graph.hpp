#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nde/error.hpp"
#include "nde/io.hpp"
#include "nde/tensor.hpp"

namespace nde {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::optional<std::size_t> class_id;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Node count plus an edge list. Undirected graphs store both directions of
/// every edge. Validated on construction and immutable afterwards.
class Graph {
 public:
  Graph() = default;

  Graph(std::size_t num_nodes, std::vector<Edge> edges, bool directed = false)
      : num_nodes_(num_nodes), edges_(std::move(edges)), directed_(directed) {
    validate();
  }

  /// Build an undirected graph from unordered pairs; both directions are stored.
  static Graph undirected(std::size_t num_nodes, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::vector<Edge> edges;
    for (auto [a, b] : pairs) {
      if (a == b) continue;
      if (!seen.insert({a, b}).second) continue;
      seen.insert({b, a});
      edges.push_back({a, b, std::nullopt});
      edges.push_back({b, a, std::nullopt});
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
      return std::pair(x.src, x.dst) < std::pair(y.src, y.dst);
    });
    return Graph(num_nodes, std::move(edges), false);
  }

  std::size_t num_nodes() const { return num_nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  bool directed() const { return directed_; }

  /// Undirected edge count (stored edges / 2 for undirected graphs).
  std::size_t num_undirected_edges() const { return directed_ ? edges_.size() : edges_.size() / 2; }

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> deg(num_nodes_, 0);
    for (const auto& e : edges_) ++deg[e.src];
    return deg;
  }

  std::vector<std::vector<std::size_t>> adjacency_lists() const {
    std::vector<std::vector<std::size_t>> adj(num_nodes_);
    for (const auto& e : edges_) adj[e.src].push_back(e.dst);
    for (auto& a : adj) std::sort(a.begin(), a.end());
    return adj;
  }

  bool connected() const {
    if (num_nodes_ == 0) return true;
    const auto adj = adjacency_lists();
    std::vector<char> seen(num_nodes_, 0);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = 1;
    std::size_t count = 1;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (auto v : adj[u]) {
        if (!seen[v]) {
          seen[v] = 1;
          ++count;
          q.push(v);
        }
      }
    }
    return count == num_nodes_;
  }

  /// Largest edge class id + 1, or 0 if no edge carries a class.
  std::size_t num_edge_classes() const {
    std::size_t n = 0;
    for (const auto& e : edges_)
      if (e.class_id) n = std::max(n, *e.class_id + 1);
    return n;
  }

  /// Same topology with class ids replaced.
  Graph with_edge_classes(const std::vector<std::size_t>& class_ids) const {
    if (class_ids.size() != edges_.size()) throw InvalidArgument("one class id per stored edge is required");
    auto edges = edges_;
    for (std::size_t i = 0; i < edges.size(); ++i) edges[i].class_id = class_ids[i];
    return Graph(num_nodes_, std::move(edges), directed_);
  }

  io::Json to_json() const {
    io::Json edges = io::Json::array();
    for (const auto& e : edges_) {
      io::Json row = io::Json::array({e.src, e.dst});
      if (e.class_id) row.push_back(*e.class_id);
      edges.push_back(std::move(row));
    }
    io::Json j;
    j["num_nodes"] = num_nodes_;
    if (directed_) j["directed"] = true;
    j["edges"] = std::move(edges);
    return j;
  }

  static Graph from_json(const io::Json& j) {
    for (const auto& [key, _] : j.items()) {
      if (key != "num_nodes" && key != "edges" && key != "directed")
        throw InvalidArgument("graph JSON: unknown key '" + key + "'");
    }
    const auto n = j.at("num_nodes").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& row : j.at("edges")) {
      if (!row.is_array() || row.size() < 2 || row.size() > 3)
        throw InvalidArgument("graph JSON: edge entries must be [src, dst] or [src, dst, class_id]");
      Edge e{row[0].get<std::size_t>(), row[1].get<std::size_t>(), std::nullopt};
      if (row.size() == 3) e.class_id = row[2].get<std::size_t>();
      edges.push_back(e);
    }
    return Graph(n, std::move(edges), j.value("directed", false));
  }

  /// Stable content hash over node count, direction flag and edges.
  std::string hash() const { return io::hex64(io::fnv1a(to_json().dump())); }

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  void validate() const {
    if (num_nodes_ == 0) throw InvalidArgument("graph must have at least one node");
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& e : edges_) {
      if (e.src >= num_nodes_ || e.dst >= num_nodes_)
        throw InvalidArgument("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                              ") references a node outside [0, " + std::to_string(num_nodes_) + ")");
      if (!pairs.insert({e.src, e.dst}).second)
        throw InvalidArgument("duplicate edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ")");
    }
    if (!directed_) {
      for (const auto& [a, b] : pairs) {
        if (!pairs.contains({b, a}))
          throw InvalidArgument("undirected graph is missing reverse edge (" + std::to_string(b) + ", " +
                                std::to_string(a) + ")");
      }
    }
  }

  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  bool directed_ = false;
};

inline void save_graph(const Graph& g, const std::filesystem::path& path) { io::write_json(path, g.to_json()); }
inline Graph load_graph(const std::filesystem::path& path) { return Graph::from_json(io::read_json(path)); }

/// Symmetrically normalized augmented Laplacian I - D^-1/2 (A + I) D^-1/2,
/// with D the row sums of A + I.
struct Laplacian {
  Matrix matrix;
  std::string source_graph_hash;
  /// sqrt of augmented degrees; L * null_vector = 0.
  Eigen::VectorXd null_vector;

  Eigen::Index size() const { return matrix.rows(); }
};

inline Laplacian build_laplacian(const Graph& g) {
  if (g.directed()) throw InvalidArgument("build_laplacian: graph is directed; the normalized Laplacian needs an undirected graph");
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Matrix a = Matrix::Identity(n, n);
  for (const auto& e : g.edges()) a(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) = 1.0;
  const Eigen::VectorXd deg = a.rowwise().sum();
  const Eigen::VectorXd inv_sqrt = deg.cwiseSqrt().cwiseInverse();
  Laplacian lap;
  lap.matrix = Matrix::Identity(n, n) - inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
  // The diagonal is 1 - 1/d exactly; write it directly so isolated nodes give an exact 0.
  for (Eigen::Index i = 0; i < n; ++i) lap.matrix(i, i) = 1.0 - 1.0 / deg(i);
  lap.source_graph_hash = g.hash();
  lap.null_vector = deg.cwiseSqrt();
  return lap;
}

/// rows x cols lattice with Moore (8-neighbor) connectivity, no wraparound.
/// Node (r, c) has index r * cols + c.
inline Graph generate_grid(std::size_t rows, std::size_t cols) {
  if (rows < 2 || cols < 2) throw InvalidArgument("generate_grid: rows and cols must both be >= 2");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const auto rr = static_cast<long>(r) + dr;
          const auto cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(rows) || cc >= static_cast<long>(cols)) continue;
          pairs.emplace_back(r * cols + c, static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc));
        }
      }
    }
  }
  return Graph::undirected(rows * cols, pairs);
}

/// Watts-Strogatz small world graph: a ring lattice where every node links to
/// ring_degree/2 neighbors on each side, then each lattice edge (u, u+j) is
/// rewired to (u, w) with probability rewire_prob, w uniform over nodes that
/// keep the graph simple. A disconnected result is retried with seed + 1, up
/// to `max_attempts` times.
inline Graph generate_watts_strogatz(std::size_t n, std::size_t ring_degree, double rewire_prob, std::uint64_t seed,
                                     int max_attempts = 100) {
  if (ring_degree == 0 || ring_degree % 2 != 0) throw InvalidArgument("generate_watts_strogatz: ring_degree must be even and positive");
  if (ring_degree >= n) throw InvalidArgument("generate_watts_strogatz: ring_degree must be < n");
  if (!(rewire_prob >= 0.0 && rewire_prob <= 1.0)) throw InvalidArgument("generate_watts_strogatz: rewire_prob must lie in [0, 1]");

  const std::size_t half = ring_degree / 2;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);

    std::vector<std::set<std::size_t>> adj(n);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t j = 1; j <= half; ++j) {
        const std::size_t v = (u + j) % n;
        adj[u].insert(v);
        adj[v].insert(u);
      }
    }
    for (std::size_t j = 1; j <= half; ++j) {
      for (std::size_t u = 0; u < n; ++u) {
        if (coin(rng) >= rewire_prob) continue;
        const std::size_t v = (u + j) % n;
        if (!adj[u].contains(v)) continue;
        if (adj[u].size() >= n - 1) continue;
        std::size_t w = pick(rng);
        while (w == u || adj[u].contains(w)) w = pick(rng);
        adj[u].erase(v);
        adj[v].erase(u);
        adj[u].insert(w);
        adj[w].insert(u);
      }
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t u = 0; u < n; ++u)
      for (auto v : adj[u])
        if (u < v) pairs.emplace_back(u, v);
    Graph g = Graph::undirected(n, pairs);
    if (g.connected()) return g;
  }
  throw InvalidArgument("generate_watts_strogatz: no connected graph after " + std::to_string(max_attempts) + " attempts");
}

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

/// Great-circle distance in kilometres.
inline double haversine_km(GeoPoint a, GeoPoint b) {
  constexpr double radius = 6371.0088;
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * deg;
  const double dlon = (b.lon - a.lon) * deg;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * deg) * std::cos(b.lat * deg) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * radius * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Links every node to its k nearest neighbours by haversine distance (ties
/// to the lower index), then symmetrizes: an edge exists if either direction
/// was selected.
inline Graph build_knn_graph(const std::vector<GeoPoint>& coords, std::size_t k) {
  const std::size_t n = coords.size();
  if (k == 0) throw InvalidArgument("build_knn_graph: k must be positive");
  if (k >= n) throw InvalidArgument("build_knn_graph: k = " + std::to_string(k) + " needs more than k nodes, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(coords[i].lat) || !std::isfinite(coords[i].lon))
      throw InvalidArgument("build_knn_graph: non-finite coordinate for node " + std::to_string(i));
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(haversine_km(coords[i], coords[j]), j);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t m = 0; m < k; ++m) pairs.emplace_back(i, cand[m].second);
  }
  return Graph::undirected(n, pairs);
}

}  // namespace nde
