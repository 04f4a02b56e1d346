#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mixgraph/mixgraph.hpp"

namespace mixgraph::cli {

namespace fs = std::filesystem;

struct DataArgs {
  std::string signals;
  std::string edges;
  std::string config;
};

inline void add_data_args(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--signals", a.signals, "signal CSV (timestamp,s0,s1,...)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--edges", a.edges, "road network CSV (from,to,cost)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--config", a.config, "JSON config; defaults apply to missing keys")->check(CLI::ExistingFile);
}

inline RunConfig load_run_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

inline Dataset load(const DataArgs& a, const RunConfig& rc) {
  return load_dataset(DatasetSpec{a.signals, a.edges, rc.data});
}

inline std::ofstream open_output(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ParseError(p.string(), 0, 0, "cannot write file");
  return out;
}

inline const std::vector<Sample>& pick_split(const Dataset& d, const std::string& split,
                                             const std::vector<std::size_t>** starts) {
  if (split == "train") {
    *starts = &d.train_starts;
    return d.train;
  }
  if (split == "val") {
    *starts = &d.val_starts;
    return d.val;
  }
  *starts = &d.test_starts;
  return d.test;
}

inline void write_sparse(const fs::path& p, const SparseMatrix& m) {
  auto out = open_output(p);
  out << "row,col,value\n" << std::setprecision(17);
  m.for_each([&](std::size_t r, std::size_t c, double v) { out << r << ',' << c << ',' << v << '\n'; });
}

inline int run_synth(std::size_t stations, std::size_t steps, std::uint64_t seed, const SynthOptions& opt,
                     const std::string& out_dir) {
  const SyntheticData d = generate_synthetic(stations, steps, seed, opt);
  auto s = open_output(fs::path(out_dir) / "signals.csv");
  write_signal_csv(s, d.table);
  auto e = open_output(fs::path(out_dir) / "edges.csv");
  write_edge_csv(e, d.graph);
  std::cout << "wrote " << steps << " steps x " << stations << " stations to " << out_dir << "\n";
  return 0;
}

inline int run_forecast(const DataArgs& a, const std::string& split, const std::string& out_dir, std::size_t threads) {
  const RunConfig rc = load_run_config(a.config);
  const Dataset d = load(a, rc);
  const std::vector<std::size_t>* starts = nullptr;
  const auto& samples = pick_split(d, split, &starts);
  if (samples.empty()) throw InvalidArgument("split '" + split + "' has no windows");
  const Forecaster f(rc.pipeline, d.graph, d.standardizer);
  std::vector<DenseMatrix> preds(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) { preds[i] = f.forecast(samples[i]); });

  Vector p, q, t;
  auto out = open_output(fs::path(out_dir) / "predictions.csv");
  out << "station,instant,predicted,actual\n" << std::setprecision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const DenseMatrix base = persistence_forecast(samples[i]);
    for (std::size_t h = 0; h < samples[i].horizon(); ++h) {
      for (std::size_t s = 0; s < samples[i].stations(); ++s) {
        const std::size_t instant = (*starts)[i] + samples[i].history() + h;
        out << s << ',' << instant << ',' << preds[i](s, h) << ',' << samples[i].target(s, h) << '\n';
        p.push_back(preds[i](s, h));
        q.push_back(base(s, h));
        t.push_back(samples[i].target(s, h));
      }
    }
  }
  const ForecastMetrics mp = metrics(p, t, f.config().mape_floor);
  const ForecastMetrics mq = metrics(q, t, f.config().mape_floor);
  auto m = open_output(fs::path(out_dir) / "metrics.csv");
  m << "model,rmse,mae,mape\n" << std::setprecision(17);
  m << "pipeline," << mp.rmse << ',' << mp.mae << ',' << mp.mape << '\n';
  m << "persistence," << mq.rmse << ',' << mq.mae << ',' << mq.mape << '\n';
  std::cout << std::setprecision(6) << split << " windows: " << samples.size() << "\n"
            << "pipeline     rmse " << mp.rmse << "  mae " << mp.mae << "  mape " << mp.mape << "%\n"
            << "persistence  rmse " << mq.rmse << "  mae " << mq.mae << "  mape " << mq.mape << "%\n";
  return 0;
}

/// One ADMM block on the graph of the first head, learned from the initial
/// extrapolation of one sample.
inline int run_solve(const DataArgs& a, const std::string& split, std::size_t index, const std::string& trace_path,
                     const std::string& variant) {
  RunConfig rc = load_run_config(a.config);
  if (!variant.empty()) rc.pipeline.variant = parse_solver_variant(variant);
  const Dataset d = load(a, rc);
  const std::vector<std::size_t>* starts = nullptr;
  const auto& samples = pick_split(d, split, &starts);
  if (index >= samples.size())
    throw InvalidArgument("sample index " + std::to_string(index) + " out of range for split '" + split + "'");
  if (rc.pipeline.blocks == 0) throw InvalidArgument("config key 'solver.blocks': solve needs at least one block");
  const Forecaster f(rc.pipeline, d.graph, d.standardizer);
  const Vector x0 = f.initial_signal(samples[index]);
  const auto graphs = f.graphs(x0, samples[index]);
  const Vector y(x0.begin(), x0.begin() + static_cast<std::ptrdiff_t>(graphs[0].observed_count()));
  AdmmTrace trace;
  admm_run(x0, y, graphs[0], f.config().layer_params[0], f.config().cg, f.config().variant, &trace);
  if (!trace_path.empty()) {
    auto out = open_output(trace_path);
    out << "layer,objective,res_phi,res_zu,res_zd\n" << std::setprecision(17);
    for (const auto& r : trace)
      out << r.layer << ',' << r.objective << ',' << r.res_phi << ',' << r.res_zu << ',' << r.res_zd << '\n';
  }
  std::cout << std::setprecision(10) << "layers " << trace.size() << "  initial objective "
            << variant_objective(x0, y, graphs[0], f.config().layer_params[0].front(), f.config().variant)
            << "  final objective " << trace.back().objective << "\n";
  return 0;
}

inline int run_verify(std::uint64_t seed) {
  const auto results = run_verification(seed);
  bool ok = true;
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << std::left << std::setw(static_cast<int>(width) + 2) << r.name << (r.passed ? "PASS" : "FAIL") << "  "
              << std::fixed << std::setprecision(2) << r.seconds << "s  " << std::defaultfloat << r.detail << "\n";
  }
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? 0 : 1;
}

inline int run_tune(const DataArgs& a, const std::string& out_path, const std::string& trace_path, int iterations,
                    int samples) {
  RunConfig rc = load_run_config(a.config);
  if (iterations >= 0) rc.tuner.spsa.iterations = static_cast<std::size_t>(iterations);
  if (samples >= 0) rc.tuner.max_samples = static_cast<std::size_t>(samples);
  const Dataset d = load(a, rc);
  if (d.val.empty()) throw InvalidArgument("tuning needs validation windows; check data.split");
  const TuneResult r = tune_spsa(rc.pipeline, d.graph, d.standardizer, d.val, rc.tuner);
  RunConfig best = rc;
  best.pipeline = r.config;
  save_config(best, out_path);
  if (!trace_path.empty()) {
    auto out = open_output(trace_path);
    out << "iteration,loss,best\n" << std::setprecision(17);
    for (std::size_t k = 0; k < r.spsa.best_trace.size(); ++k)
      out << k + 1 << ',' << r.spsa.loss_trace[k] << ',' << r.spsa.best_trace[k] << '\n';
  }
  std::cout << std::setprecision(6) << "parameters " << r.dimension << "  evaluations " << r.spsa.evaluations
            << "  initial loss " << r.spsa.initial_loss << "  best loss " << r.spsa.best_loss << "\nwrote "
            << out_path << "\n";
  return 0;
}

inline int run_graph_dump(const DataArgs& a, const std::string& split, std::size_t index, std::size_t head,
                          const std::string& out_dir) {
  const RunConfig rc = load_run_config(a.config);
  const Dataset d = load(a, rc);
  const std::vector<std::size_t>* starts = nullptr;
  const auto& samples = pick_split(d, split, &starts);
  if (index >= samples.size())
    throw InvalidArgument("sample index " + std::to_string(index) + " out of range for split '" + split + "'");
  const Forecaster f(rc.pipeline, d.graph, d.standardizer);
  if (head >= f.config().heads) throw InvalidArgument("head " + std::to_string(head) + " out of range");
  const Vector x0 = f.initial_signal(samples[index]);
  const auto graphs = f.graphs(x0, samples[index]);
  const MixedGraph& g = graphs[head];
  const fs::path dir(out_dir);
  write_sparse(dir / "adjacency_u.csv", g.adjacency_u);
  write_sparse(dir / "laplacian_u.csv", g.laplacian_u);
  write_sparse(dir / "walk_adjacency.csv", g.walk_adjacency);
  write_sparse(dir / "walk_laplacian.csv", g.walk_laplacian);
  write_sparse(dir / "dglr_matrix.csv", g.dglr_matrix);
  auto out = open_output(dir / "perron.csv");
  out << "instant,station,centrality\n" << std::setprecision(17);
  for (std::size_t t = 0; t < g.instant_count; ++t) {
    const PerronResult pr = perron_centrality(spatial_slice(g, t));
    for (std::size_t s = 0; s < g.station_count; ++s) out << t << ',' << s << ',' << pr.vector[s] << '\n';
  }
  std::cout << "wrote operators of head " << head << " (" << g.node_count() << " nodes) to " << out_dir << "\n";
  return 0;
}

/// Entry point of the `mixgraph` tool. Returns the process exit code: 0 on
/// success, 1 on a runtime or input error, 2 on a command-line error.
inline int cli_main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal forecasting on learned mixed graphs with unrolled ADMM"};
  app.name("mixgraph");
  app.require_subcommand(1);

  DataArgs data;
  std::string out_dir = "out", split = "test", trace, out_path, variant;
  std::size_t threads = 1, index = 0, head = 0, stations = 20, steps = 2000;
  std::uint64_t seed = 1;
  int iterations = -1, samples = -1;
  SynthOptions synth;

  auto* c_synth = app.add_subcommand("synth", "write a synthetic dataset (signals.csv, edges.csv)");
  c_synth->add_option("--stations", stations, "station count")->check(CLI::Range(2, 1024));
  c_synth->add_option("--steps", steps, "series length")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", seed, "random seed");
  c_synth->add_option("--noise", synth.noise, "noise standard deviation")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--period", synth.period, "sinusoid period in steps")->check(CLI::PositiveNumber);
  c_synth->add_option("--amplitude", synth.amplitude, "sinusoid amplitude")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--out-dir", out_dir, "output directory");

  auto* c_forecast = app.add_subcommand("forecast", "run the pipeline and write predictions and metrics");
  add_data_args(c_forecast, data);
  c_forecast->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  c_forecast->add_option("--out-dir", out_dir, "output directory");
  c_forecast->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* c_solve = app.add_subcommand("solve", "one ADMM block on one sample, with per-layer traces");
  add_data_args(c_solve, data);
  c_solve->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  c_solve->add_option("--sample", index, "window index within the split");
  c_solve->add_option("--variant", variant, "full, no_dgtv, no_dglr, undirected_temporal or direct_unsplit");
  c_solve->add_option("--trace", trace, "CSV of layer,objective,res_phi,res_zu,res_zd");

  auto* c_verify = app.add_subcommand("verify", "run the built-in oracle and invariant checks");
  c_verify->add_option("--seed", seed, "random seed of the checks");

  auto* c_tune = app.add_subcommand("tune", "SPSA tuning on the validation split; writes the best config");
  add_data_args(c_tune, data);
  c_tune->add_option("--out", out_path, "output config JSON")->required();
  c_tune->add_option("--trace", trace, "CSV of iteration,loss,best");
  c_tune->add_option("--iterations", iterations, "override tuner.iterations");
  c_tune->add_option("--samples", samples, "override tuner.samples");

  auto* c_dump = app.add_subcommand("graph-dump", "write the learned operators and Perron centralities as CSV");
  add_data_args(c_dump, data);
  c_dump->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  c_dump->add_option("--sample", index, "window index within the split");
  c_dump->add_option("--head", head, "head index");
  c_dump->add_option("--out-dir", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*c_synth) return run_synth(stations, steps, seed, synth, out_dir);
    if (*c_forecast) return run_forecast(data, split, out_dir, threads);
    if (*c_solve) return run_solve(data, split, index, trace, variant);
    if (*c_verify) return run_verify(seed);
    if (*c_tune) return run_tune(data, out_path, trace, iterations, samples);
    if (*c_dump) return run_graph_dump(data, split, index, head, out_dir);
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mixgraph::cli
