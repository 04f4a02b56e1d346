#pragma once

#include <cstddef>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/io.hpp"
#include "mixgraph/pipeline.hpp"
#include "mixgraph/tuner.hpp"

namespace mixgraph {

/// Everything a config file can set. Missing keys keep these defaults.
struct RunConfig {
  PipelineConfig pipeline;
  TuneOptions tuner;
  DatasetOptions data;
};

namespace detail {

using Json = nlohmann::json;

inline std::string join_key(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void reject_unknown(const Json& obj, const std::string& path, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw InvalidArgument("config key '" + path + "': expected an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw InvalidArgument("config key '" + join_key(path, key) + "': unknown key");
  }
}

template <class T>
void read_key(const Json& obj, const std::string& path, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument("config key '" + join_key(path, key) + "': wrong type");
  }
}

inline DenseMatrix read_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw InvalidArgument("config key '" + path + "': expected a nonempty matrix");
  std::vector<Vector> rows;
  for (std::size_t r = 0; r < j.size(); ++r) {
    try {
      rows.push_back(j[r].get<Vector>());
    } catch (const nlohmann::json::exception&) {
      throw InvalidArgument("config key '" + path + "[" + std::to_string(r) + "]': expected an array of numbers");
    }
    if (rows.back().size() != rows.front().size())
      throw InvalidArgument("config key '" + path + "': ragged matrix");
  }
  return DenseMatrix::from_rows(rows);
}

inline Json write_matrix(const DenseMatrix& m) {
  Json j = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    j.push_back(Vector(row.begin(), row.end()));
  }
  return j;
}

inline LayerParams read_layer(const Json& j, const std::string& path) {
  reject_unknown(j, path, {"mu_u", "mu_d2", "mu_d1", "rho", "rho_u", "rho_d"});
  LayerParams p;
  read_key(j, path, "mu_u", p.mu_u);
  read_key(j, path, "mu_d2", p.mu_d2);
  read_key(j, path, "mu_d1", p.mu_d1);
  read_key(j, path, "rho", p.rho);
  read_key(j, path, "rho_u", p.rho_u);
  read_key(j, path, "rho_d", p.rho_d);
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument("config key '" + path + "': " + e.what());
  }
  return p;
}

inline Json write_layer(const LayerParams& p) {
  return {{"mu_u", p.mu_u}, {"mu_d2", p.mu_d2}, {"mu_d1", p.mu_d1},
          {"rho", p.rho},   {"rho_u", p.rho_u}, {"rho_d", p.rho_d}};
}

inline std::vector<MetricMatrix> read_metric_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw InvalidArgument("config key '" + path + "': expected an array of matrices");
  std::vector<MetricMatrix> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back({read_matrix(j[i], path + "[" + std::to_string(i) + "]")});
  return out;
}

}  // namespace detail

/// Parses a config document. Errors name the offending key.
inline RunConfig parse_config(const nlohmann::json& doc) {
  using detail::Json;
  using detail::read_key;
  RunConfig rc;
  detail::reject_unknown(doc, "", {"graph", "solver", "layers", "heads", "tuner", "data"});
  PipelineConfig& pc = rc.pipeline;

  if (doc.contains("graph")) {
    const Json& g = doc["graph"];
    detail::reject_unknown(g, "graph", {"k", "window", "feature_dim", "spatial_dim", "neighbor_mean", "swish", "projection"});
    read_key(g, "graph", "k", pc.k);
    read_key(g, "graph", "window", pc.window);
    read_key(g, "graph", "feature_dim", pc.feature_dim);
    read_key(g, "graph", "spatial_dim", pc.spatial_dim);
    read_key(g, "graph", "neighbor_mean", pc.neighbor_mean);
    read_key(g, "graph", "swish", pc.swish);
    if (g.contains("projection")) pc.projection = detail::read_matrix(g["projection"], "graph.projection");
  }

  if (doc.contains("solver")) {
    const Json& s = doc["solver"];
    detail::reject_unknown(s, "solver", {"variant", "blocks", "layers", "residual", "extrapolation", "season", "cg"});
    std::string name;
    read_key(s, "solver", "variant", name);
    if (!name.empty()) {
      try {
        pc.variant = parse_solver_variant(name);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(std::string("config key 'solver.variant': ") + e.what());
      }
    }
    read_key(s, "solver", "blocks", pc.blocks);
    read_key(s, "solver", "layers", pc.layers);
    read_key(s, "solver", "residual", pc.residual);
    name.clear();
    read_key(s, "solver", "extrapolation", name);
    if (!name.empty()) {
      try {
        pc.extrapolation = parse_extrapolation(name);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(std::string("config key 'solver.extrapolation': ") + e.what());
      }
    }
    read_key(s, "solver", "season", pc.season);
    if (s.contains("cg")) {
      const Json& c = s["cg"];
      detail::reject_unknown(c, "solver.cg", {"mode", "iterations", "tolerance", "alphas", "betas"});
      std::string mode = "exact";
      read_key(c, "solver.cg", "mode", mode);
      if (mode == "exact") {
        pc.cg = CgSchedule::exact(8);
      } else if (mode == "unrolled") {
        pc.cg = CgSchedule::unrolled();
      } else {
        throw InvalidArgument("config key 'solver.cg.mode': expected 'exact' or 'unrolled'");
      }
      read_key(c, "solver.cg", "iterations", pc.cg.iterations);
      read_key(c, "solver.cg", "tolerance", pc.cg.tolerance);
      if (pc.cg.mode == CgSchedule::Mode::kUnrolled) {
        pc.cg.alphas.assign(pc.cg.iterations, CgSchedule::kDefaultFill);
        pc.cg.betas.assign(pc.cg.iterations, CgSchedule::kDefaultFill);
      }
      read_key(c, "solver.cg", "alphas", pc.cg.alphas);
      read_key(c, "solver.cg", "betas", pc.cg.betas);
      try {
        pc.cg.validate();
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(std::string("config key 'solver.cg': ") + e.what());
      }
    }
  }

  if (doc.contains("layers")) {
    const Json& l = doc["layers"];
    if (l.is_object()) {
      detail::reject_unknown(l, "layers", {"default"});
      if (l.contains("default")) {
        const LayerParams p = detail::read_layer(l["default"], "layers.default");
        pc.layer_params.assign(pc.blocks, std::vector<LayerParams>(pc.layers, p));
      }
    } else if (l.is_array()) {
      pc.layer_params.clear();
      for (std::size_t b = 0; b < l.size(); ++b) {
        const std::string bp = "layers[" + std::to_string(b) + "]";
        if (!l[b].is_array()) throw InvalidArgument("config key '" + bp + "': expected an array of layers");
        std::vector<LayerParams> row;
        for (std::size_t k = 0; k < l[b].size(); ++k)
          row.push_back(detail::read_layer(l[b][k], bp + "[" + std::to_string(k) + "]"));
        pc.layer_params.push_back(std::move(row));
      }
    } else {
      throw InvalidArgument("config key 'layers': expected an object or a [block][layer] table");
    }
  }

  if (doc.contains("heads")) {
    const Json& h = doc["heads"];
    detail::reject_unknown(h, "heads", {"count", "weights", "metrics"});
    read_key(h, "heads", "count", pc.heads);
    read_key(h, "heads", "weights", pc.head_weights);
    if (h.contains("metrics")) {
      const Json& m = h["metrics"];
      if (!m.is_array()) throw InvalidArgument("config key 'heads.metrics': expected one entry per head");
      MetricBank bank;
      for (std::size_t i = 0; i < m.size(); ++i) {
        const std::string mp = "heads.metrics[" + std::to_string(i) + "]";
        detail::reject_unknown(m[i], mp, {"undirected", "directed"});
        if (!m[i].contains("undirected") || !m[i].contains("directed"))
          throw InvalidArgument("config key '" + mp + "': needs 'undirected' and 'directed'");
        bank.undirected.push_back(detail::read_metric_list(m[i]["undirected"], mp + ".undirected"));
        bank.directed.push_back(detail::read_metric_list(m[i]["directed"], mp + ".directed"));
      }
      pc.metrics = std::move(bank);
    }
  }

  if (doc.contains("tuner")) {
    const Json& t = doc["tuner"];
    detail::reject_unknown(t, "tuner", {"iterations", "samples", "seed", "a", "c", "stability", "initial_step",
                                        "max_step", "threads", "tune"});
    SpsaOptions& s = rc.tuner.spsa;
    read_key(t, "tuner", "iterations", s.iterations);
    read_key(t, "tuner", "samples", rc.tuner.max_samples);
    read_key(t, "tuner", "seed", s.seed);
    read_key(t, "tuner", "a", s.a);
    read_key(t, "tuner", "c", s.c);
    read_key(t, "tuner", "stability", s.stability);
    read_key(t, "tuner", "initial_step", s.initial_step);
    read_key(t, "tuner", "max_step", s.max_step);
    read_key(t, "tuner", "threads", rc.tuner.threads);
    if (t.contains("tune")) {
      const Json& u = t["tune"];
      detail::reject_unknown(u, "tuner.tune", {"mu", "rho", "metric_scales", "head_weights", "residual", "cg"});
      TunableSet& ts = rc.tuner.tunables;
      read_key(u, "tuner.tune", "mu", ts.mu);
      read_key(u, "tuner.tune", "rho", ts.rho);
      read_key(u, "tuner.tune", "metric_scales", ts.metric_scales);
      read_key(u, "tuner.tune", "head_weights", ts.head_weights);
      read_key(u, "tuner.tune", "residual", ts.residual);
      read_key(u, "tuner.tune", "cg", ts.cg);
    }
  }

  if (doc.contains("data")) {
    const Json& d = doc["data"];
    detail::reject_unknown(d, "data", {"history", "horizon", "stride", "split", "mape_floor"});
    read_key(d, "data", "history", rc.data.history);
    read_key(d, "data", "horizon", rc.data.horizon);
    read_key(d, "data", "stride", rc.data.stride);
    read_key(d, "data", "split", rc.data.split);
    read_key(d, "data", "mape_floor", pc.mape_floor);
    try {
      rc.data.validate();
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(std::string("config key 'data': ") + e.what());
    }
  }
  pc.history = rc.data.history;
  pc.horizon = rc.data.horizon;
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, 0, "cannot open config file");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, 0, 0, std::string("invalid JSON: ") + e.what());
  }
  try {
    return parse_config(doc);
  } catch (const InvalidArgument& e) {
    throw ParseError(path, 0, 0, e.what());
  }
}

/// Serializes `rc`; a resolved pipeline config round-trips through
/// parse_config exactly.
inline nlohmann::json config_to_json(const RunConfig& rc) {
  using detail::Json;
  const PipelineConfig& pc = rc.pipeline;
  Json doc;
  doc["graph"] = {{"k", pc.k},
                  {"window", pc.window},
                  {"feature_dim", pc.feature_dim},
                  {"spatial_dim", pc.spatial_dim},
                  {"neighbor_mean", pc.neighbor_mean},
                  {"swish", pc.swish}};
  if (pc.projection) doc["graph"]["projection"] = detail::write_matrix(*pc.projection);
  Json cg = {{"mode", pc.cg.mode == CgSchedule::Mode::kExact ? "exact" : "unrolled"},
             {"iterations", pc.cg.iterations},
             {"tolerance", pc.cg.tolerance}};
  if (pc.cg.mode == CgSchedule::Mode::kUnrolled) {
    cg["alphas"] = pc.cg.alphas;
    cg["betas"] = pc.cg.betas;
  }
  doc["solver"] = {{"variant", std::string(to_string(pc.variant))},
                   {"blocks", pc.blocks},
                   {"layers", pc.layers},
                   {"extrapolation", std::string(to_string(pc.extrapolation))},
                   {"season", pc.season},
                   {"cg", cg}};
  if (!pc.residual.empty()) doc["solver"]["residual"] = pc.residual;
  if (!pc.layer_params.empty()) {
    Json table = Json::array();
    for (const auto& row : pc.layer_params) {
      Json r = Json::array();
      for (const auto& p : row) r.push_back(detail::write_layer(p));
      table.push_back(std::move(r));
    }
    doc["layers"] = std::move(table);
  }
  doc["heads"] = {{"count", pc.heads}};
  if (!pc.head_weights.empty()) doc["heads"]["weights"] = pc.head_weights;
  if (pc.metrics) {
    Json heads = Json::array();
    for (std::size_t h = 0; h < pc.metrics->heads(); ++h) {
      Json u = Json::array(), d = Json::array();
      for (const auto& m : pc.metrics->undirected[h]) u.push_back(detail::write_matrix(m.factor));
      for (const auto& m : pc.metrics->directed[h]) d.push_back(detail::write_matrix(m.factor));
      heads.push_back({{"undirected", std::move(u)}, {"directed", std::move(d)}});
    }
    doc["heads"]["metrics"] = std::move(heads);
  }
  const SpsaOptions& s = rc.tuner.spsa;
  const TunableSet& ts = rc.tuner.tunables;
  doc["tuner"] = {{"iterations", s.iterations},
                  {"samples", rc.tuner.max_samples},
                  {"seed", s.seed},
                  {"a", s.a},
                  {"c", s.c},
                  {"stability", s.stability},
                  {"initial_step", s.initial_step},
                  {"max_step", s.max_step},
                  {"threads", rc.tuner.threads},
                  {"tune",
                   {{"mu", ts.mu},
                    {"rho", ts.rho},
                    {"metric_scales", ts.metric_scales},
                    {"head_weights", ts.head_weights},
                    {"residual", ts.residual},
                    {"cg", ts.cg}}}};
  doc["data"] = {{"history", rc.data.history},
                 {"horizon", rc.data.horizon},
                 {"stride", rc.data.stride},
                 {"split", rc.data.split},
                 {"mape_floor", pc.mape_floor}};
  return doc;
}

inline void save_config(const RunConfig& rc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path, 0, 0, "cannot write config file");
  out << config_to_json(rc).dump(2) << '\n';
}

}  // namespace mixgraph
