#pragma once

#include <boost/tokenizer.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nde/graph.hpp"
#include "nde/io.hpp"
#include "nde/ode.hpp"
#include "nde/ops.hpp"

namespace nde {

/// Time-indexed node features: values is T x |V| x M.
struct NodeSeries {
  std::vector<double> times;
  Tensor values;
  std::vector<std::string> feature_names;
  std::string graph_ref;

  std::size_t num_times() const { return times.size(); }
  std::size_t num_nodes() const { return values.rank() == 3 ? values.dim(1) : 0; }
  std::size_t num_features() const { return values.rank() == 3 ? values.dim(2) : 0; }

  /// Snapshot t as a |V| x M matrix.
  Matrix snapshot(std::size_t t) const { return values.slice(t); }

  std::size_t feature_index(const std::string& name) const {
    auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end()) throw InvalidArgument("unknown feature '" + name + "'");
    return static_cast<std::size_t>(it - feature_names.begin());
  }

  void validate() const {
    if (values.rank() != 3) throw InvalidArgument("series values must be T x |V| x M, got " + shape_string(values.shape()));
    if (values.dim(0) != times.size())
      throw InvalidArgument("series has " + std::to_string(times.size()) + " times but " + std::to_string(values.dim(0)) +
                            " snapshots");
    if (feature_names.size() != values.dim(2))
      throw InvalidArgument("series has " + std::to_string(feature_names.size()) + " feature names for " +
                            std::to_string(values.dim(2)) + " features");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw InvalidArgument("series times must be strictly increasing");
    require_finite(values, "series values");
  }
};

// Series file: <prefix>.json header {format, times, shape, feature_names,
// graph_ref, blob, blob_fnv1a} plus <prefix>.bin with the values as
// little-endian float64.

inline void save_series(const NodeSeries& s, const std::filesystem::path& prefix) {
  s.validate();
  std::vector<double> flat(s.values.values().begin(), s.values.values().end());
  const std::string blob = io::encode_f64({&flat});
  auto bin_path = prefix;
  bin_path += ".bin";
  auto json_path = prefix;
  json_path += ".json";
  io::Json h;
  h["format"] = "nde-series-v1";
  h["shape"] = s.values.shape();
  h["feature_names"] = s.feature_names;
  h["graph_ref"] = s.graph_ref;
  h["times"] = s.times;
  h["blob"] = bin_path.filename().string();
  h["blob_fnv1a"] = io::hex64(io::fnv1a(blob));
  io::write_file(bin_path, blob);
  io::write_json(json_path, h);
}

inline NodeSeries load_series(const std::filesystem::path& prefix) {
  auto json_path = prefix;
  json_path += ".json";
  if (!std::filesystem::exists(json_path)) throw InvalidArgument("series not found: " + json_path.string());
  const auto h = io::read_json(json_path);
  if (h.value("format", "") != "nde-series-v1") throw InvalidArgument(json_path.string() + ": not an nde series header");
  const std::string blob = io::read_file(json_path.parent_path() / h.at("blob").get<std::string>());
  if (io::hex64(io::fnv1a(blob)) != h.at("blob_fnv1a").get<std::string>())
    throw InvalidArgument(json_path.string() + ": value blob does not match its checksum");
  NodeSeries s;
  s.times = h.at("times").get<std::vector<double>>();
  s.feature_names = h.at("feature_names").get<std::vector<std::string>>();
  s.graph_ref = h.at("graph_ref").get<std::string>();
  s.values = Tensor(h.at("shape").get<Shape>(), io::decode_f64(blob));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic diffusion data

/// Initial temperatures: `hotspots` nodes drawn by seed start at `value`,
/// every other node at 0.
struct InitialCondition {
  std::size_t hotspots = 3;
  double value = 25.0;
};

inline Matrix initial_state(std::size_t num_nodes, const InitialCondition& init, std::uint64_t seed) {
  if (init.hotspots > num_nodes) throw InvalidArgument("more hotspots than nodes");
  std::vector<std::size_t> order(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix h0 = Matrix::Zero(static_cast<Eigen::Index>(num_nodes), 1);
  for (std::size_t i = 0; i < init.hotspots; ++i) h0(static_cast<Eigen::Index>(order[i]), 0) = init.value;
  return h0;
}

/// Samples dH/dt = -k L H at `snapshots` equally spaced times over [0, horizon].
inline NodeSeries generate_diffusion_series(const Graph& g, double k, const InitialCondition& init, double horizon,
                                            std::size_t snapshots, std::uint64_t seed) {
  if (snapshots < 2) throw InvalidArgument("need at least 2 snapshots");
  if (!(horizon > 0.0)) throw InvalidArgument("horizon must be positive");
  if (!std::isfinite(k)) throw InvalidArgument("diffusion coefficient must be finite");
  const Laplacian lap = build_laplacian(g);
  const std::size_t n = g.num_nodes();
  const Matrix kl = k * lap.matrix;
  const Dynamics dyn = [&kl](Tape& tape, double, Var h) { return neg(matmul(tape.constant(kl), h)); };
  const SolverConfig cfg = SolverConfig::dopri5(1e-9, 1e-9);

  NodeSeries s;
  s.feature_names = {"value"};
  s.graph_ref = lap.source_graph_hash;
  s.values = Tensor({snapshots, n, 1});
  Tensor h = Tensor::from_matrix(initial_state(n, init, seed));
  const double dt = horizon / static_cast<double>(snapshots - 1);
  for (std::size_t i = 0; i < snapshots; ++i) {
    const double t = dt * static_cast<double>(i);
    if (i > 0) h = integrate(dyn, h, dt * static_cast<double>(i - 1), t, cfg);
    s.times.push_back(t);
    s.values.slice(i) = h.matrix();
  }
  return s;
}

/// Population standard deviation over every value of the series.
inline double series_std(const NodeSeries& s) {
  const auto v = s.values.values();
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

/// Adds i.i.d. N(0, (fraction * series_std)^2) noise to every value.
inline NodeSeries inject_noise(const NodeSeries& series, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0) || !std::isfinite(fraction)) throw InvalidArgument("noise fraction must be a finite value >= 0");
  require_finite(series.values, "series values");
  NodeSeries out = series;
  if (fraction == 0.0) return out;
  const double sigma = fraction * series_std(series);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.values.values()) v += noise(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Station CSV ingestion

/// Column names of a station CSV. Empty `values` means every column that is
/// not one of the four key columns.
struct CsvSchema {
  std::string id = "station";
  std::string lat = "lat";
  std::string lon = "lon";
  std::string time = "time";
  std::vector<std::string> values;
};

struct StationData {
  Graph graph;
  NodeSeries series;
  std::vector<std::string> station_ids;
  std::vector<GeoPoint> coords;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
  std::vector<std::string> out;
  for (const auto& field : tok) {
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  return out;
}

/// Hours since 1970-01-01T00:00 UTC, truncated to the hour. Accepts
/// "YYYY-MM-DD HH[:MM[:SS]]" with a space or 'T' separator and an optional 'Z'.
inline std::optional<std::int64_t> parse_hour(std::string text) {
  std::replace(text.begin(), text.end(), 'T', ' ');
  if (!text.empty() && text.back() == 'Z') text.pop_back();
  std::tm tm{};
  std::istringstream in(text);
  in >> std::get_time(&tm, "%Y-%m-%d %H");
  if (in.fail()) return std::nullopt;
  int minute = 0, second = 0;
  if (in.peek() == ':') {
    in.get();
    if (!(in >> minute)) return std::nullopt;
    if (in.peek() == ':') {
      in.get();
      if (!(in >> second)) return std::nullopt;
    }
  }
  in >> std::ws;
  if (!in.eof() || minute < 0 || minute > 59 || second < 0 || second > 60) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{tm.tm_year + 1900}, month{static_cast<unsigned>(tm.tm_mon + 1)},
                           day{static_cast<unsigned>(tm.tm_mday)}};
  if (!ymd.ok()) return std::nullopt;
  return static_cast<std::int64_t>(sys_days(ymd).time_since_epoch().count()) * 24 + tm.tm_hour;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (used != s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Fills every missing cell of one station's feature column with the mean of
/// the nearest earlier and nearest later present values; cells before the
/// first or after the last present value copy that value.
/// Returns false when the column has no present value at all.
inline bool impute_two_neighbor(std::vector<std::optional<double>>& column) {
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < column.size(); ++i)
    if (column[i]) present.push_back(i);
  if (present.empty()) return false;
  std::size_t next = 0;  // index into present of the first present cell > i
  for (std::size_t i = 0; i < column.size(); ++i) {
    while (next < present.size() && present[next] <= i) ++next;
    if (column[i]) continue;
    const bool has_prev = next > 0;
    const bool has_next = next < present.size();
    if (has_prev && has_next)
      column[i] = 0.5 * (*column[present[next - 1]] + *column[present[next]]);
    else
      column[i] = has_prev ? *column[present[next - 1]] : *column[present[next]];
  }
  return true;
}

/// Reads station rows, builds the k-NN graph of the stations and assembles
/// the series on the union of observed hours.
inline StationData ingest_station_csv(const std::filesystem::path& path, const CsvSchema& schema, std::size_t k_nn) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path.string() + ": empty CSV");
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidArgument(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column(schema.id), c_lat = column(schema.lat), c_lon = column(schema.lon),
                    c_time = column(schema.time);
  std::vector<std::string> features = schema.values;
  if (features.empty())
    for (const auto& h : header)
      if (h != schema.id && h != schema.lat && h != schema.lon && h != schema.time) features.push_back(h);
  if (features.empty()) throw InvalidArgument(path.string() + ": no value columns");
  std::vector<std::size_t> c_val;
  for (const auto& f : features) c_val.push_back(column(f));

  std::vector<std::string> ids;
  std::map<std::string, std::size_t> station_index;
  std::vector<GeoPoint> coords;
  // (station, hour) -> per-feature sum and count
  std::map<std::pair<std::size_t, std::int64_t>, std::vector<std::pair<double, std::size_t>>> cells;

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw InvalidArgument(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                            " fields, header has " + std::to_string(header.size()));
    const auto hour = detail::parse_hour(fields[c_time]);
    if (!hour) throw InvalidArgument(path.string() + ": row " + std::to_string(row) + ": unparseable timestamp '" + fields[c_time] + "'");
    const auto lat = detail::parse_number(fields[c_lat]);
    const auto lon = detail::parse_number(fields[c_lon]);
    if (!lat || !lon) throw InvalidArgument(path.string() + ": row " + std::to_string(row) + ": bad coordinates");
    const std::string& id = fields[c_id];
    auto [it, inserted] = station_index.emplace(id, ids.size());
    if (inserted) {
      ids.push_back(id);
      coords.push_back(GeoPoint{*lat, *lon});
    } else if (coords[it->second].lat != *lat || coords[it->second].lon != *lon) {
      throw InvalidArgument(path.string() + ": row " + std::to_string(row) + ": station '" + id +
                            "' changes coordinates");
    }
    auto& cell = cells[{it->second, *hour}];
    cell.resize(features.size(), {0.0, 0});
    for (std::size_t f = 0; f < features.size(); ++f) {
      const std::string& raw = fields[c_val[f]];
      if (raw.empty() || raw == "NA" || raw == "NaN" || raw == "nan") continue;
      const auto v = detail::parse_number(raw);
      if (!v) throw InvalidArgument(path.string() + ": row " + std::to_string(row) + ": bad value '" + raw + "' for " + features[f]);
      cell[f].first += *v;
      ++cell[f].second;
    }
  }
  if (ids.empty()) throw InvalidArgument(path.string() + ": no data rows");

  std::vector<std::int64_t> hours;
  for (const auto& [key, _] : cells) hours.push_back(key.second);
  std::sort(hours.begin(), hours.end());
  hours.erase(std::unique(hours.begin(), hours.end()), hours.end());
  std::map<std::int64_t, std::size_t> hour_index;
  for (std::size_t i = 0; i < hours.size(); ++i) hour_index[hours[i]] = i;

  const std::size_t n = ids.size(), m = features.size(), t_count = hours.size();
  StationData out;
  out.station_ids = ids;
  out.coords = coords;
  out.graph = build_knn_graph(coords, k_nn);
  out.series.feature_names = features;
  out.series.graph_ref = out.graph.hash();
  for (auto h : hours) out.series.times.push_back(static_cast<double>(h));
  out.series.values = Tensor({t_count, n, m});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t f = 0; f < m; ++f) {
      std::vector<std::optional<double>> col(t_count);
      for (std::size_t t = 0; t < t_count; ++t) {
        auto it = cells.find({s, hours[t]});
        if (it != cells.end() && it->second[f].second > 0)
          col[t] = it->second[f].first / static_cast<double>(it->second[f].second);
      }
      if (!impute_two_neighbor(col))
        throw InvalidArgument(path.string() + ": station '" + ids[s] + "' has no values for feature '" + features[f] + "'");
      for (std::size_t t = 0; t < t_count; ++t) out.series.values[(t * n + s) * m + f] = *col[t];
    }
  }
  out.series.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

/// One supervised example: P past snapshots of the input features and the S
/// following values of the target feature.
struct Window {
  std::size_t anchor = 0;  // index of the last input snapshot
  Matrix x;                // |V| x (P * |inputs|), oldest snapshot first
  Tensor y;                // S x |V| x 1
};

inline std::vector<Window> make_windows(const NodeSeries& series, std::size_t history, std::size_t horizon,
                                        std::size_t target, const std::vector<std::size_t>& inputs) {
  if (history == 0 || horizon == 0) throw InvalidArgument("history and horizon must be >= 1");
  if (inputs.empty()) throw InvalidArgument("at least one input feature is required");
  const std::size_t t_count = series.num_times(), n = series.num_nodes(), m = series.num_features();
  if (target >= m) throw InvalidArgument("target feature index out of range");
  for (auto f : inputs)
    if (f >= m) throw InvalidArgument("input feature index out of range");
  if (t_count < history + horizon)
    throw InvalidArgument("series has " + std::to_string(t_count) + " snapshots, fewer than history + horizon = " +
                          std::to_string(history + horizon));
  const auto& v = series.values;
  std::vector<Window> out;
  for (std::size_t a = history - 1; a + horizon < t_count; ++a) {
    Window w;
    w.anchor = a;
    w.x = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(history * inputs.size()));
    for (std::size_t p = 0; p < history; ++p) {
      const std::size_t t = a + 1 - history + p;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < inputs.size(); ++q)
          w.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p * inputs.size() + q)) = v[(t * n + i) * m + inputs[q]];
    }
    w.y = Tensor({horizon, n, 1});
    for (std::size_t s = 0; s < horizon; ++s)
      for (std::size_t i = 0; i < n; ++i) w.y[s * n + i] = v[((a + 1 + s) * n + i) * m + target];
    out.push_back(std::move(w));
  }
  return out;
}

/// Per-feature affine scaling x -> (x - mean) / std.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  static Normalizer identity(std::size_t features) { return {std::vector<double>(features, 0.0), std::vector<double>(features, 1.0)}; }

  double apply(double x, std::size_t f) const { return (x - mean[f]) / std[f]; }
  double invert(double z, std::size_t f) const { return z * std[f] + mean[f]; }

  NodeSeries apply(const NodeSeries& s) const { return map(s, false); }
  NodeSeries invert(const NodeSeries& s) const { return map(s, true); }

  io::Json to_json() const { return io::Json{{"mean", mean}, {"std", std}}; }
  static Normalizer from_json(const io::Json& j) {
    return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  }

 private:
  NodeSeries map(const NodeSeries& s, bool inverse) const {
    if (s.num_features() != mean.size()) throw InvalidArgument("normalizer feature count does not match the series");
    NodeSeries out = s;
    const std::size_t m = mean.size();
    auto vals = out.values.values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = inverse ? invert(vals[i], i % m) : apply(vals[i], i % m);
    return out;
  }
};

/// Z-score statistics over snapshots [begin, end). A feature with zero
/// variance keeps std 1 and gets a message in `warnings`.
inline Normalizer fit_normalizer(const NodeSeries& s, std::size_t begin, std::size_t end,
                                 std::vector<std::string>* warnings = nullptr) {
  if (begin >= end || end > s.num_times()) throw InvalidArgument("normalization range is empty or out of bounds");
  const std::size_t n = s.num_nodes(), m = s.num_features();
  Normalizer z{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  const double count = static_cast<double>((end - begin) * n);
  for (std::size_t t = begin; t < end; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < m; ++f) z.mean[f] += s.values[(t * n + i) * m + f];
  for (auto& v : z.mean) v /= count;
  for (std::size_t t = begin; t < end; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < m; ++f) {
        const double d = s.values[(t * n + i) * m + f] - z.mean[f];
        z.std[f] += d * d;
      }
  for (std::size_t f = 0; f < m; ++f) {
    z.std[f] = std::sqrt(z.std[f] / count);
    if (!(z.std[f] > 0.0)) {
      z.std[f] = 1.0;
      if (warnings) warnings->push_back("feature '" + s.feature_names[f] + "' is constant on the training range; std clamped to 1");
    }
  }
  return z;
}

struct SplitSpec {
  double train_fraction = 0.7;
  double valid_fraction = 0.1;
};

/// Chronological index ranges [0, train_end), [train_end, valid_end), [valid_end, T).
struct SplitRanges {
  std::size_t train_end = 0;
  std::size_t valid_end = 0;
  std::size_t total = 0;
};

inline SplitRanges chronological_split(std::size_t total, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) || !(spec.valid_fraction > 0.0 && spec.valid_fraction < 1.0) ||
      !(spec.train_fraction + spec.valid_fraction < 1.0))
    throw InvalidArgument("split fractions must lie in (0, 1) with a sum below 1");
  SplitRanges r;
  r.total = total;
  r.train_end = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(total)));
  r.valid_end = static_cast<std::size_t>(std::llround((spec.train_fraction + spec.valid_fraction) * static_cast<double>(total)));
  if (r.train_end == 0 || r.valid_end <= r.train_end || r.valid_end >= total)
    throw InvalidArgument("split of " + std::to_string(total) + " snapshots leaves an empty part");
  return r;
}

/// Windows whose every target index lies in [begin, end).
inline std::vector<Window> windows_in(const std::vector<Window>& all, std::size_t begin, std::size_t end) {
  std::vector<Window> out;
  for (const auto& w : all) {
    const std::size_t first = w.anchor + 1, last = w.anchor + w.y.dim(0);
    if (first >= begin && last < end) out.push_back(w);
  }
  return out;
}

}  // namespace nde
