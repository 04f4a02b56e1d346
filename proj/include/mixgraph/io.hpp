#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mixgraph/dense.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/pipeline.hpp"

namespace mixgraph {

/// A uniformly sampled multivariate series: values is time x station.
struct SignalTable {
  std::vector<std::int64_t> timestamps;  // seconds, strictly increasing, uniform step
  DenseMatrix values;

  std::size_t steps() const { return values.rows(); }
  std::size_t stations() const { return values.cols(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "null";
}

inline double parse_real(std::string_view cell, const std::string& file, std::size_t line, std::size_t col) {
  if (is_missing(cell)) throw ParseError(file, line, col, "missing value (gaps are not supported)");
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw ParseError(file, line, col, "not a finite number: '" + std::string(cell) + "'");
  return v;
}

template <class Int>
Int parse_integer(std::string_view cell, const std::string& file, std::size_t line, std::size_t col) {
  if (is_missing(cell)) throw ParseError(file, line, col, "missing value");
  Int v{};
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw ParseError(file, line, col, "not an integer: '" + std::string(cell) + "'");
  return v;
}

inline std::string format_real(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

/// Non-empty lines of `in` with 1-based line numbers; the first is the header.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!trim(line).empty()) lines.emplace_back(number, line);
  }
  return lines;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, 0, "cannot open file");
  return in;
}

}  // namespace detail

/// Parses `timestamp,s0,s1,...`. Station columns may be named `sK` or `K`
/// and must appear in order 0..N-1.
inline SignalTable read_signal_csv(std::istream& in, const std::string& name = "<signal>") {
  const auto lines = detail::read_lines(in);
  if (lines.empty()) throw ParseError(name, 0, 0, "empty file (header row required)");
  const auto header = detail::split_csv(lines[0].second);
  if (header.size() < 2 || header[0] != "timestamp")
    throw ParseError(name, lines[0].first, 1, "header must be 'timestamp,s0,s1,...'");
  const std::size_t n = header.size() - 1;
  for (std::size_t c = 1; c < header.size(); ++c) {
    std::string_view h = header[c];
    if (!h.empty() && h.front() == 's') h.remove_prefix(1);
    std::size_t id = 0;
    const auto [ptr, ec] = std::from_chars(h.data(), h.data() + h.size(), id);
    if (ec != std::errc() || ptr != h.data() + h.size() || id != c - 1)
      throw ParseError(name, lines[0].first, c + 1,
                       "station column '" + std::string(header[c]) + "' should be s" + std::to_string(c - 1));
  }
  SignalTable t;
  t.values = DenseMatrix(lines.size() - 1, n);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto& [ln, text] = lines[r];
    const auto cells = detail::split_csv(text);
    if (cells.size() != n + 1)
      throw ParseError(name, ln, 0,
                       "ragged row: " + std::to_string(cells.size()) + " cells, expected " + std::to_string(n + 1));
    const auto ts = detail::parse_integer<std::int64_t>(cells[0], name, ln, 1);
    if (!t.timestamps.empty()) {
      const std::int64_t prev = t.timestamps.back();
      if (ts <= prev) throw ParseError(name, ln, 1, "timestamps must be strictly increasing");
      if (t.timestamps.size() >= 2 && ts - prev != t.timestamps[1] - t.timestamps[0])
        throw ParseError(name, ln, 1, "non-uniform sampling interval");
    }
    t.timestamps.push_back(ts);
    for (std::size_t c = 0; c < n; ++c) t.values(r - 1, c) = detail::parse_real(cells[c + 1], name, ln, c + 2);
  }
  if (t.steps() == 0) throw ParseError(name, 0, 0, "no data rows");
  return t;
}

inline SignalTable read_signal_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return read_signal_csv(in, path);
}

/// Writes values in shortest round-trip form, so reading back is bit-exact.
inline void write_signal_csv(std::ostream& out, const SignalTable& t) {
  detail::require_same_size(t.timestamps.size(), t.steps(), "signal table timestamps");
  out << "timestamp";
  for (std::size_t c = 0; c < t.stations(); ++c) out << ",s" << c;
  out << '\n';
  for (std::size_t r = 0; r < t.steps(); ++r) {
    out << t.timestamps[r];
    for (std::size_t c = 0; c < t.stations(); ++c) out << ',' << detail::format_real(t.values(r, c));
    out << '\n';
  }
}

/// Parses `from,to,cost`. Ids must be below `station_count`.
inline PhysicalGraph read_edge_csv(std::istream& in, std::size_t station_count, const std::string& name = "<edges>") {
  const auto lines = detail::read_lines(in);
  if (lines.empty()) throw ParseError(name, 0, 0, "empty file (header row required)");
  const auto header = detail::split_csv(lines[0].second);
  if (header.size() != 3 || header[0] != "from" || header[1] != "to" || header[2] != "cost")
    throw ParseError(name, lines[0].first, 1, "header must be 'from,to,cost'");
  PhysicalGraph g;
  g.station_count = station_count;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto& [ln, text] = lines[r];
    const auto cells = detail::split_csv(text);
    if (cells.size() != 3) throw ParseError(name, ln, 0, "ragged row: expected 3 cells");
    const auto a = detail::parse_integer<std::size_t>(cells[0], name, ln, 1);
    const auto b = detail::parse_integer<std::size_t>(cells[1], name, ln, 2);
    const double cost = detail::parse_real(cells[2], name, ln, 3);
    if (a >= station_count) throw ParseError(name, ln, 1, "unknown station id " + std::to_string(a));
    if (b >= station_count) throw ParseError(name, ln, 2, "unknown station id " + std::to_string(b));
    g.edges.push_back({a, b, cost});
  }
  try {
    g.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(name, 0, 0, e.what());
  }
  return g;
}

inline PhysicalGraph read_edge_csv(const std::string& path, std::size_t station_count) {
  auto in = detail::open_input(path);
  return read_edge_csv(in, station_count, path);
}

inline void write_edge_csv(std::ostream& out, const PhysicalGraph& g) {
  out << "from,to,cost\n";
  for (const auto& e : g.edges) out << e.from << ',' << e.to << ',' << detail::format_real(e.cost) << '\n';
}

/// Windowing and split options of a dataset.
struct DatasetOptions {
  std::size_t history = 12;  // T+1
  std::size_t horizon = 12;  // S
  std::size_t stride = 3;
  std::array<double, 3> split{0.6, 0.2, 0.2};

  std::size_t window() const { return history + horizon; }

  void validate() const {
    detail::require(history >= 1 && horizon >= 1, "history and horizon must be >= 1");
    detail::require(stride >= 1, "stride must be >= 1");
    double s = 0.0;
    for (double r : split) {
      detail::require(r >= 0.0, "split ratios must be nonnegative");
      s += r;
    }
    detail::require(std::abs(s - 1.0) <= 1e-9, "split ratios must sum to 1");
  }
};

struct DatasetSpec {
  std::string signal_path;
  std::string edge_path;
  DatasetOptions options;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Number of windows of length `window` starting every `stride` steps.
inline std::size_t window_count(std::size_t steps, std::size_t window, std::size_t stride) {
  detail::require(stride >= 1, "stride must be >= 1");
  return steps < window ? 0 : (steps - window) / stride + 1;
}

/// Chronological split: validation and test take their rounded shares, the
/// training set the rest.
inline SplitCounts split_counts(std::size_t windows, const std::array<double, 3>& ratios) {
  const double n = static_cast<double>(windows);
  SplitCounts c;
  c.train = std::min(windows, static_cast<std::size_t>(std::llround(ratios[0] * n)));
  c.val = std::min(windows - c.train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
  c.test = windows - c.train - c.val;
  return c;
}

struct Dataset {
  SignalTable table;
  PhysicalGraph graph;
  Standardizer standardizer;
  std::vector<Sample> train, val, test;
  std::vector<std::size_t> train_starts, val_starts, test_starts;  // first series row of each window
};

inline Sample cut_window(const SignalTable& t, std::size_t start, std::size_t history, std::size_t horizon) {
  Sample s;
  const std::size_t n = t.stations();
  s.observed = DenseMatrix(n, history);
  s.target = DenseMatrix(n, horizon);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t k = 0; k < history; ++k) s.observed(c, k) = t.values(start + k, c);
    for (std::size_t k = 0; k < horizon; ++k) s.target(c, k) = t.values(start + history + k, c);
  }
  for (std::size_t k = 0; k < history + horizon; ++k) s.steps.push_back(static_cast<double>(start + k));
  return s;
}

/// Cuts windows, splits them chronologically and fits the standardizer on
/// the series rows covered by training windows.
inline Dataset make_dataset(SignalTable table, PhysicalGraph graph, const DatasetOptions& opt) {
  opt.validate();
  detail::require_same_size(table.stations(), graph.station_count, "signal stations vs road network");
  graph.validate();
  const std::size_t windows = window_count(table.steps(), opt.window(), opt.stride);
  detail::require(windows >= 1, "series has " + std::to_string(table.steps()) + " steps, fewer than one window of " +
                                    std::to_string(opt.window()));
  const SplitCounts counts = split_counts(windows, opt.split);
  detail::require(counts.train >= 1, "split leaves no training windows");
  Dataset d;
  for (std::size_t w = 0; w < windows; ++w) {
    const std::size_t start = w * opt.stride;
    Sample s = cut_window(table, start, opt.history, opt.horizon);
    if (w < counts.train) {
      d.train.push_back(std::move(s));
      d.train_starts.push_back(start);
    } else if (w < counts.train + counts.val) {
      d.val.push_back(std::move(s));
      d.val_starts.push_back(start);
    } else {
      d.test.push_back(std::move(s));
      d.test_starts.push_back(start);
    }
  }
  const std::size_t train_rows = d.train_starts.back() + opt.window();
  DenseMatrix rows(train_rows, table.stations());
  for (std::size_t r = 0; r < train_rows; ++r)
    for (std::size_t c = 0; c < table.stations(); ++c) rows(r, c) = table.values(r, c);
  d.standardizer = Standardizer::fit(rows);
  d.table = std::move(table);
  d.graph = std::move(graph);
  return d;
}

inline Dataset load_dataset(const DatasetSpec& spec) {
  SignalTable t = read_signal_csv(spec.signal_path);
  PhysicalGraph g = read_edge_csv(spec.edge_path, t.stations());
  return make_dataset(std::move(t), std::move(g), spec.options);
}

/// Shape of the synthetic traffic-like series.
struct SynthOptions {
  double period = 288;     // steps per day at 5-minute sampling
  double base = 60.0;
  double amplitude = 15.0;
  double noise = 5.0;      // marginal standard deviation of the noise
  double diffusion = 0.5;  // kappa in (I + kappa L)^-1 white noise
  double phase_gradient = 0.1;  // phase cycles per unit distance across the map
  double persistence = 0.0;  // AR(1) coefficient of the noise in time
  std::size_t neighbors = 3;
  std::int64_t interval = 300;

  void validate() const {
    detail::require(period > 0.0, "synthetic period must be positive");
    detail::require(noise >= 0.0 && amplitude >= 0.0 && diffusion >= 0.0, "synthetic amplitudes must be nonnegative");
    detail::require(persistence >= 0.0 && persistence < 1.0, "synthetic persistence must be in [0, 1)");
    detail::require(interval > 0, "synthetic interval must be positive");
  }
};

struct SyntheticData {
  SignalTable table;
  PhysicalGraph graph;
  std::vector<std::array<double, 2>> positions;
};

/// Random geometric road network (k nearest neighbours plus a minimum
/// spanning tree, cost = distance) carrying station-phase sinusoids plus
/// spatially diffused noise. Deterministic in `seed`.
inline SyntheticData generate_synthetic(std::size_t n, std::size_t steps, std::uint64_t seed,
                                        const SynthOptions& opt = {}) {
  detail::require(n >= 2, "synthetic data needs at least two stations");
  detail::require(steps >= 1, "synthetic data needs at least one step");
  opt.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SyntheticData out;
  out.positions.resize(n);
  for (auto& p : out.positions) p = {unit(rng), unit(rng)};
  auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(out.positions[a][0] - out.positions[b][0], out.positions[a][1] - out.positions[b][1]);
  };

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  auto add = [&](std::size_t a, std::size_t b) { pairs.emplace_back(std::min(a, b), std::max(a, b)); };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = dist(i, a), db = dist(i, b);
      return da != db ? da < db : a < b;
    });
    for (std::size_t k = 0; k < std::min(opt.neighbors, order.size()); ++k) add(i, order[k]);
  }
  // Prim's tree guarantees connectivity.
  std::vector<std::uint8_t> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(n, 0);
  best[0] = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t u = n;
    for (std::size_t v = 0; v < n; ++v)
      if (!in_tree[v] && (u == n || best[v] < best[u])) u = v;
    in_tree[u] = 1;
    if (it > 0) add(parent[u], u);
    for (std::size_t v = 0; v < n; ++v)
      if (!in_tree[v] && dist(u, v) < best[v]) {
        best[v] = dist(u, v);
        parent[v] = u;
      }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  out.graph.station_count = n;
  for (const auto& [a, b] : pairs) out.graph.edges.push_back({a, b, dist(a, b)});

  // Diffusion operator D = (I + kappa L)^-1 on the unit-weight road graph,
  // scaled so diffused unit white noise has unit mean variance.
  DenseMatrix sys = DenseMatrix::identity(n);
  for (const auto& [a, b] : pairs) {
    sys(a, a) += opt.diffusion;
    sys(b, b) += opt.diffusion;
    sys(a, b) -= opt.diffusion;
    sys(b, a) -= opt.diffusion;
  }
  DenseMatrix diffuse(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vector e(n, 0.0);
    e[c] = 1.0;
    const Vector col = dense_solve(sys, e);
    for (std::size_t r = 0; r < n; ++r) diffuse(r, c) = col[r];
  }
  const double gain = std::sqrt(static_cast<double>(n)) / diffuse.frobenius();

  Vector phase(n), level(n);
  for (std::size_t i = 0; i < n; ++i) {
    phase[i] = 2.0 * std::numbers::pi * opt.phase_gradient * (out.positions[i][0] + out.positions[i][1]);
    level[i] = opt.base + 10.0 * (out.positions[i][0] - 0.5);
  }
  out.table.values = DenseMatrix(steps, n);
  Vector white(n), state(n, 0.0);
  const double innovation = std::sqrt(1.0 - opt.persistence * opt.persistence);
  for (std::size_t t = 0; t < steps; ++t) {
    for (double& w : white) w = gauss(rng);
    const Vector d = diffuse.multiply(white);
    for (std::size_t i = 0; i < n; ++i) {
      state[i] = t == 0 ? d[i] * gain : opt.persistence * state[i] + innovation * d[i] * gain;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / opt.period + phase[i];
      out.table.values(t, i) = level[i] + opt.amplitude * std::sin(angle) + opt.noise * state[i];
    }
    out.table.timestamps.push_back(static_cast<std::int64_t>(t) * opt.interval);
  }
  return out;
}

}  // namespace mixgraph
