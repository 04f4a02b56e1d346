#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "oracles.hpp"

using namespace mixgraph;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("mixgraph_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "mixgraph");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Expects a ParseError at the given line and column.
void expect_parse_error(const std::string& csv, std::size_t line, std::size_t col) {
  std::istringstream in(csv);
  try {
    read_signal_csv(in, "sig.csv");
    ADD_FAILURE() << "no error for:\n" << csv;
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_EQ(e.column(), col) << e.what();
    EXPECT_NE(std::string(e.what()).find("sig.csv:" + std::to_string(line)), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(SignalCsv, RoundTripIsBitExact) {
  std::mt19937_64 rng(21);
  SignalTable t;
  t.values = DenseMatrix(40, 5);
  for (std::size_t r = 0; r < 40; ++r) {
    t.timestamps.push_back(1'600'000'000 + 300 * static_cast<std::int64_t>(r));
    for (std::size_t c = 0; c < 5; ++c) {
      std::uint64_t bits = rng();
      double v;
      std::memcpy(&v, &bits, sizeof v);
      if (!std::isfinite(v)) v = std::ldexp(static_cast<double>(bits >> 11), -40);
      t.values(r, c) = v;
    }
  }
  t.values(0, 0) = 0.1;
  t.values(1, 1) = -0.0;
  t.values(2, 2) = 5e-324;
  std::stringstream ss;
  write_signal_csv(ss, t);
  const auto back = read_signal_csv(ss);
  EXPECT_EQ(back.timestamps, t.timestamps);
  ASSERT_EQ(back.steps(), t.steps());
  ASSERT_EQ(back.stations(), t.stations());
  for (std::size_t i = 0; i < t.values.data().size(); ++i)
    EXPECT_EQ(std::memcmp(&back.values.data()[i], &t.values.data()[i], sizeof(double)), 0) << i;
}

TEST(SignalCsv, ErrorsNameLineAndColumn) {
  expect_parse_error("timestamp,s0,s1\n0,1,2\n300,1,x\n", 3, 3);
  expect_parse_error("timestamp,s0,s1\n0,1,2\n300,1\n", 3, 0);
  expect_parse_error("timestamp,s0,s1\n0,1,2\n300,1,2\n300,1,2\n", 4, 1);
  expect_parse_error("timestamp,s0,s1\n0,1,2\n300,1,2\n900,1,2\n", 4, 1);
  expect_parse_error("timestamp,s0,s1\n0,1,NA\n", 2, 3);
  expect_parse_error("timestamp,s0,s2\n0,1,2\n", 1, 3);
}

TEST(EdgeCsv, UnknownStationIdNamesLine) {
  std::istringstream in("from,to,cost\n0,1,1.5\n1,7,2\n");
  try {
    read_edge_csv(in, 3, "edges.csv");
    ADD_FAILURE();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 2u);
    EXPECT_NE(std::string(e.what()).find("edges.csv:3"), std::string::npos);
  }
  std::istringstream ok("from,to,cost\n0,1,1.5\n2,1,0.25\n");
  const auto g = read_edge_csv(ok, 3);
  ASSERT_EQ(g.edges.size(), 2u);
  EXPECT_EQ(g.edges[1].from, 2u);
  EXPECT_EQ(g.edges[1].cost, 0.25);
}

TEST(Dataset, WindowCountAndSplit) {
  EXPECT_EQ(window_count(100, 18, 3), (100 - 18) / 3 + 1);
  const auto c = split_counts(28, {0.6, 0.2, 0.2});
  EXPECT_EQ(c.train, 17u);
  EXPECT_EQ(c.val, 6u);
  EXPECT_EQ(c.test, 5u);

  const auto d = generate_synthetic(3, 100, 2);
  DatasetOptions o;
  o.history = 10;
  o.horizon = 8;
  o.stride = 3;
  const auto ds = make_dataset(d.table, d.graph, o);
  EXPECT_EQ(ds.train.size(), 17u);
  EXPECT_EQ(ds.val.size(), 6u);
  EXPECT_EQ(ds.test.size(), 5u);
  // chronological, stride apart
  std::vector<std::size_t> all = ds.train_starts;
  all.insert(all.end(), ds.val_starts.begin(), ds.val_starts.end());
  all.insert(all.end(), ds.test_starts.begin(), ds.test_starts.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], 3 * i);
  // window contents come from the table
  const auto& s = ds.val[2];
  const std::size_t st = ds.val_starts[2];
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_EQ(s.observed(n, 0), d.table.values(st, n));
    EXPECT_EQ(s.target(n, 7), d.table.values(st + 17, n));
  }
}

TEST(Dataset, StandardizerUsesTrainingRowsOnly) {
  auto d = generate_synthetic(3, 100, 2);
  DatasetOptions o;
  o.history = 10;
  o.horizon = 8;
  const auto a = make_dataset(d.table, d.graph, o);
  for (std::size_t r = 80; r < 100; ++r)
    for (std::size_t c = 0; c < 3; ++c) d.table.values(r, c) += 1000.0;
  const auto b = make_dataset(d.table, d.graph, o);
  EXPECT_EQ(a.standardizer.mean, b.standardizer.mean);
  EXPECT_EQ(a.standardizer.stddev, b.standardizer.stddev);
}

TEST(Dataset, SingleWindowGoesToTrain) {
  const auto d = generate_synthetic(3, 18, 2);
  DatasetOptions o;
  o.history = 10;
  o.horizon = 8;
  o.stride = 1;
  const auto ds = make_dataset(d.table, d.graph, o);
  EXPECT_EQ(ds.train.size(), 1u);
  EXPECT_TRUE(ds.val.empty());
  EXPECT_TRUE(ds.test.empty());
}

TEST(Synthetic, SameSeedSameBytes) {
  auto bytes = [](std::uint64_t seed) {
    const auto d = generate_synthetic(7, 300, seed);
    std::ostringstream s;
    write_signal_csv(s, d.table);
    write_edge_csv(s, d.graph);
    return s.str();
  };
  EXPECT_EQ(bytes(4), bytes(4));
  EXPECT_NE(bytes(4), bytes(5));
}

TEST(Synthetic, NoiseFreeIsPeriodic) {
  SynthOptions o;
  o.noise = 0.0;
  o.period = 12;
  const auto d = generate_synthetic(6, 240, 8, o);
  double se = 0;
  std::size_t n = 0;
  for (std::size_t t = 12; t < 240; ++t)
    for (std::size_t i = 0; i < 6; ++i, ++n) se += std::pow(d.table.values(t, i) - d.table.values(t - 12, i), 2);
  EXPECT_LT(std::sqrt(se / static_cast<double>(n)), 1e-9);
}

TEST(Synthetic, SmootherThanShuffled) {
  const std::size_t n = 12, steps = 600;
  const auto d = generate_synthetic(n, steps, 11);
  ASSERT_TRUE(d.graph.connected());
  // spatial: unit-weight road Laplacian at each instant
  std::vector<SparseMatrix::Triplet> trip;
  for (const auto& e : d.graph.edges) {
    trip.push_back({e.from, e.from, 1.0});
    trip.push_back({e.to, e.to, 1.0});
    trip.push_back({e.from, e.to, -1.0});
    trip.push_back({e.to, e.from, -1.0});
  }
  const auto lu = SparseMatrix::from_triplets(n, n, trip, SparseMatrix::Duplicates::kSum);
  // directed: each node at t receives from itself and its road neighbours at t-1
  const std::size_t span = 24;
  Digraph dag{n * span, {}};
  for (std::size_t t = 1; t < span; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      dag.edges.push_back({(t - 1) * n + i, t * n + i, 1.0});
      for (const auto& e : d.graph.edges) {
        if (e.from == i) dag.edges.push_back({(t - 1) * n + e.to, t * n + i, 1.0});
        if (e.to == i) dag.edges.push_back({(t - 1) * n + e.from, t * n + i, 1.0});
      }
    }
  const auto ld = assemble_random_walk_digraph(dag).laplacian;

  auto measure = [&](const DenseMatrix& v) {
    double g = 0, dg = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      Vector x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = v(t, i);
      g += glr(x, lu);
    }
    for (std::size_t t0 = 0; t0 + span <= steps; t0 += span) {
      Vector x(n * span);
      for (std::size_t t = 0; t < span; ++t)
        for (std::size_t i = 0; i < n; ++i) x[t * n + i] = v(t0 + t, i);
      dg += dglr(x, ld);
    }
    return std::pair{g, dg};
  };
  const auto [g0, d0] = measure(d.table.values);
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    DenseMatrix s = d.table.values;
    std::shuffle(s.data().begin(), s.data().end(), rng);
    const auto [g1, d1] = measure(s);
    EXPECT_LT(g0, g1);
    EXPECT_LT(d0, d1);
  }
}

TEST(Config, RoundTripAndUnknownKeys) {
  RunConfig rc;
  rc.pipeline.layers = 4;
  rc.pipeline.heads = 3;
  rc.data.stride = 2;
  rc.pipeline.resolve(5);
  const auto j = config_to_json(rc);
  EXPECT_EQ(config_to_json(parse_config(j)), j);

  const fs::path dir = scratch("config");
  save_config(rc, (dir / "c.json").string());
  EXPECT_EQ(config_to_json(load_config((dir / "c.json").string())), j);

  auto message = [](const nlohmann::json& doc) -> std::string {
    try {
      parse_config(doc);
    } catch (const InvalidArgument& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message({{"grpah", 1}}).find("'grpah'"), std::string::npos);
  EXPECT_NE(message({{"graph", {{"kk", 3}}}}).find("'graph.kk'"), std::string::npos);
  EXPECT_NE(message({{"solver", {{"cg", {{"mode", "exact"}, {"tol", 1e-3}}}}}}).find("'solver.cg.tol'"),
            std::string::npos);
  EXPECT_NE(message({{"graph", {{"k", "two"}}}}).find("'graph.k'"), std::string::npos);

  std::ofstream(dir / "bad.json") << R"({"layers": {"default": {"mu_u": 1, "sigma": 2}}})";
  try {
    load_config((dir / "bad.json").string());
    ADD_FAILURE();
  } catch (const ParseError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("bad.json"), std::string::npos);
    EXPECT_NE(w.find("layers.default.sigma"), std::string::npos);
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"verify", "--bogus"}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"forecast", "--signals", "/nonexistent.csv", "--edges", "/nonexistent.csv"}), 2);
}

TEST(Cli, VerifyPasses) { EXPECT_EQ(run({"verify"}), 0); }

TEST(Cli, InputErrorExitsOne) {
  const fs::path dir = scratch("bad_input");
  std::ofstream(dir / "signals.csv") << "timestamp,s0,s1\n0,1,2\n300,1,oops\n";
  std::ofstream(dir / "edges.csv") << "from,to,cost\n0,1,1\n";
  EXPECT_EQ(run({"forecast", "--signals", (dir / "signals.csv").string(), "--edges", (dir / "edges.csv").string(),
                 "--out-dir", (dir / "out").string()}),
            1);
}

TEST(Cli, ForecastBeatsPersistenceAndIsDeterministic) {
  const fs::path dir = scratch("forecast");
  ASSERT_EQ(run({"synth", "--stations", "8", "--steps", "900", "--seed", "3", "--out-dir", dir.string()}), 0);
  const auto sig = (dir / "signals.csv").string(), edg = (dir / "edges.csv").string();
  ASSERT_EQ(run({"forecast", "--signals", sig, "--edges", edg, "--out-dir", (dir / "a").string()}), 0);
  ASSERT_EQ(run({"forecast", "--signals", sig, "--edges", edg, "--out-dir", (dir / "b").string(), "--threads", "3"}),
            0);
  const auto m = read_rows(dir / "a" / "metrics.csv");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0][0], "pipeline");
  EXPECT_EQ(m[1][0], "persistence");
  EXPECT_LT(std::stod(m[0][1]), std::stod(m[1][1]));
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "predictions.csv"), slurp(dir / "b" / "predictions.csv"));

  // persistence row agrees with an independent recomputation from the predictions file
  const auto ds = load_dataset(DatasetSpec{sig, edg, DatasetOptions{}});
  double se = 0;
  std::size_t n = 0;
  for (const auto& s : ds.test)
    for (std::size_t i = 0; i < s.stations(); ++i)
      for (std::size_t h = 0; h < s.horizon(); ++h, ++n)
        se += std::pow(s.observed(i, s.history() - 1) - s.target(i, h), 2);
  EXPECT_NEAR(std::stod(m[1][1]), std::sqrt(se / static_cast<double>(n)), 1e-9);
  EXPECT_EQ(read_rows(dir / "a" / "predictions.csv").size(), n);
}

TEST(Cli, SolveTraceDecaysOnTinySmoothInstance) {
  const fs::path dir = scratch("solve");
  ASSERT_EQ(run({"synth", "--stations", "4", "--steps", "120", "--seed", "3", "--period", "24", "--out-dir",
                 dir.string()}),
            0);
  std::ofstream(dir / "smooth.json") << R"({
    "graph": {"k": 2, "window": 2, "feature_dim": 3, "spatial_dim": 2},
    "solver": {"variant": "no_dgtv", "blocks": 1, "layers": 40,
               "cg": {"mode": "exact", "iterations": 200, "tolerance": 1e-12}},
    "layers": {"default": {"mu_u": 0.5, "mu_d2": 0.5, "mu_d1": 0, "rho": 1, "rho_u": 0.5, "rho_d": 0.5}},
    "heads": {"count": 1},
    "data": {"history": 4, "horizon": 2, "stride": 3}})";
  auto solve = [&](const std::string& out) {
    return run({"solve", "--signals", (dir / "signals.csv").string(), "--edges", (dir / "edges.csv").string(),
                "--config", (dir / "smooth.json").string(), "--trace", (dir / out).string()});
  };
  ASSERT_EQ(solve("t1.csv"), 0);
  ASSERT_EQ(solve("t2.csv"), 0);
  EXPECT_EQ(slurp(dir / "t1.csv"), slurp(dir / "t2.csv"));
  std::ifstream in(dir / "t1.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "layer,objective,res_phi,res_zu,res_zd");
  const auto rows = read_rows(dir / "t1.csv");
  ASSERT_EQ(rows.size(), 40u);
  for (std::size_t k = 1; k < rows.size(); ++k)
    for (std::size_t c = 1; c <= 4; ++c) EXPECT_LE(std::stod(rows[k][c]), std::stod(rows[k - 1][c])) << k << "," << c;
  // decay, not just stalling
  for (std::size_t c = 3; c <= 4; ++c) EXPECT_LT(std::stod(rows.back()[c]), 1e-3 * std::stod(rows.front()[c]));
}

TEST(Cli, GraphDumpWritesOperators) {
  const fs::path dir = scratch("dump");
  ASSERT_EQ(run({"synth", "--stations", "5", "--steps", "200", "--seed", "2", "--out-dir", dir.string()}), 0);
  ASSERT_EQ(run({"graph-dump", "--signals", (dir / "signals.csv").string(), "--edges", (dir / "edges.csv").string(),
                 "--out-dir", (dir / "g").string()}),
            0);
  for (const char* f : {"adjacency_u.csv", "laplacian_u.csv", "walk_adjacency.csv", "walk_laplacian.csv",
                        "dglr_matrix.csv", "perron.csv"})
    EXPECT_TRUE(fs::exists(dir / "g" / f)) << f;
  // walk adjacency rows sum to one
  std::map<std::size_t, double> sums;
  for (const auto& r : read_rows(dir / "g" / "walk_adjacency.csv")) sums[std::stoul(r[0])] += std::stod(r[2]);
  for (const auto& [row, s] : sums) EXPECT_NEAR(s, 1.0, 1e-12) << row;
  for (const auto& r : read_rows(dir / "g" / "perron.csv")) EXPECT_GT(std::stod(r[2]), 0.0);
}

TEST(Cli, SynthAndTuneAreDeterministic) {
  const fs::path dir = scratch("tune");
  ASSERT_EQ(run({"synth", "--stations", "4", "--steps", "160", "--seed", "5", "--out-dir", (dir / "a").string()}), 0);
  ASSERT_EQ(run({"synth", "--stations", "4", "--steps", "160", "--seed", "5", "--out-dir", (dir / "b").string()}), 0);
  EXPECT_EQ(slurp(dir / "a" / "signals.csv"), slurp(dir / "b" / "signals.csv"));
  EXPECT_EQ(slurp(dir / "a" / "edges.csv"), slurp(dir / "b" / "edges.csv"));
  std::ofstream(dir / "tiny.json") << R"({
    "graph": {"k": 2, "window": 2, "feature_dim": 3, "spatial_dim": 2},
    "solver": {"blocks": 1, "layers": 3}, "heads": {"count": 2},
    "data": {"history": 4, "horizon": 2, "stride": 3}})";
  auto tune = [&](const std::string& out) {
    return run({"tune", "--signals", (dir / "a" / "signals.csv").string(), "--edges",
                (dir / "a" / "edges.csv").string(), "--config", (dir / "tiny.json").string(), "--iterations", "5",
                "--samples", "2", "--out", (dir / (out + ".json")).string(), "--trace",
                (dir / (out + ".csv")).string()});
  };
  ASSERT_EQ(tune("t1"), 0);
  ASSERT_EQ(tune("t2"), 0);
  EXPECT_EQ(slurp(dir / "t1.json"), slurp(dir / "t2.json"));
  EXPECT_EQ(slurp(dir / "t1.csv"), slurp(dir / "t2.csv"));
  EXPECT_EQ(read_rows(dir / "t1.csv").size(), 5u);
  EXPECT_NO_THROW(load_config((dir / "t1.json").string()));
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  RunConfig shipped = load_config(std::string(MIXGRAPH_SOURCE_DIR) + "/configs/default.json");
  RunConfig built;
  shipped.pipeline.resolve(20);
  built.pipeline.resolve(20);
  EXPECT_EQ(config_to_json(shipped), config_to_json(built));
}
