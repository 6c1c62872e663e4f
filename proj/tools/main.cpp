#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <set>
#include <string>

#include "spillover/baselines.hpp"
#include "spillover/config.hpp"
#include "spillover/csv.hpp"
#include "spillover/ddpm.hpp"
#include "spillover/errors.hpp"
#include "spillover/inference.hpp"
#include "spillover/montecarlo.hpp"
#include "spillover/parallel.hpp"
#include "spillover/policy.hpp"
#include "spillover/rng.hpp"
#include "spillover/spatial_dgp.hpp"
#include "spillover/stochastic_process.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spillover;

namespace {

constexpr const char* kVersion = "0.1.0";

struct RunContext {
  fs::path out_dir;
  RunConfig config;
  std::uint64_t seed = 20240901;  // fixed default; never time-based
  int threads = 0;
  std::vector<std::string> outputs;

  void write(const std::string& name, const std::string& content) {
    fs::create_directories(out_dir);
    write_text_file((out_dir / name).string(), content);
    outputs.push_back(name);
  }

  void finish(const std::string& subcommand) {
    json manifest;
    manifest["tool"] = "spillover";
    manifest["version"] = kVersion;
    manifest["subcommand"] = subcommand;
    manifest["seed"] = seed;
    manifest["config_hash"] = config.hash();
    manifest["config"] = config.serialize();
    manifest["outputs"] = outputs;
    fs::create_directories(out_dir);
    write_text_file((out_dir / "manifest.json").string(), manifest.dump(2) + "\n");
  }
};

[[noreturn]] void fail_config(const std::string& message) {
  json err;
  err["error"] = "config";
  err["message"] = message;
  std::cerr << err.dump() << "\n";
  std::exit(2);
}

void check_allowed_keys(const RunConfig& cfg, const std::set<std::string>& allowed) {
  for (const auto& key : cfg.keys()) {
    if (!allowed.count(key)) fail_config("unknown config key '" + key + "'");
  }
}

RunConfig load_config(const std::string& path) {
  try {
    return RunConfig::from_file(path);
  } catch (const std::exception& e) {
    fail_config(e.what());
  }
}

JumpDiffusionParams spillover_from_config(const RunConfig& cfg, const std::string& section,
                                          const JumpDiffusionParams& defaults) {
  JumpDiffusionParams p = defaults;
  p.s0 = cfg.get_double_or(section + ".s0", p.s0);
  p.drift_a = cfg.get_double_or(section + ".drift_a", p.drift_a);
  p.drift_b = cfg.get_double_or(section + ".drift_b", p.drift_b);
  p.sigma = cfg.get_double_or(section + ".sigma", p.sigma);
  p.jump_intensity_lambda0 = cfg.get_double_or(section + ".lambda0", p.jump_intensity_lambda0);
  p.jump_mean = cfg.get_double_or(section + ".jump_mean", p.jump_mean);
  p.state_dep_exponent = cfg.get_double_or(section + ".state_dep_exponent", p.state_dep_exponent);
  p.compensated = cfg.get_bool_or(section + ".compensated", p.compensated);
  return p;
}

AssignmentKind assignment_from_string(const std::string& s) {
  if (s == "random") return AssignmentKind::Random;
  if (s == "dispersed") return AssignmentKind::Dispersed;
  if (s == "clustered") return AssignmentKind::Clustered;
  fail_config("unknown assignment kind '" + s + "'");
}

NetworkKind network_from_string(const std::string& s) {
  if (s == "sparse") return NetworkKind::Sparse;
  if (s == "dense") return NetworkKind::Dense;
  if (s == "kernel") return NetworkKind::Kernel;
  fail_config("unknown network kind '" + s + "'");
}

DgpConfig dgp_from_config(const RunConfig& cfg) {
  DgpConfig d;
  d.n_locations = static_cast<int>(cfg.get_int_or("panel.n", d.n_locations));
  d.n_periods = static_cast<int>(cfg.get_int_or("panel.t", d.n_periods));
  d.tau_pe = cfg.get_double_or("panel.tau_pe", d.tau_pe);
  d.delta_ge = cfg.get_double_or("panel.delta_ge", d.delta_ge);
  d.rho_pe = cfg.get_double_or("panel.rho_pe", d.rho_pe);
  d.rho_ge = cfg.get_double_or("panel.rho_ge", d.rho_ge);
  d.s_star = cfg.get_double_or("panel.s_star", d.s_star);
  d.noise_sd = cfg.get_double_or("panel.noise_sd", d.noise_sd);
  d.alpha_sd = cfg.get_double_or("panel.alpha_sd", d.alpha_sd);
  d.treated_fraction = cfg.get_double_or("panel.treated_fraction", d.treated_fraction);
  d.period_dt = cfg.get_double_or("panel.period_dt", d.period_dt);
  d.assignment = assignment_from_string(cfg.get_string_or("panel.assignment", "dispersed"));
  d.network_kind = network_from_string(cfg.get_string_or("panel.network", "sparse"));
  d.spillover_params = spillover_from_config(cfg, "spillover", d.spillover_params);
  return d;
}

const std::set<std::string> kPanelKeys = {
    "panel.n",          "panel.t",         "panel.tau_pe",   "panel.delta_ge",
    "panel.rho_pe",     "panel.rho_ge",    "panel.s_star",   "panel.noise_sd",
    "panel.alpha_sd",   "panel.treated_fraction",            "panel.period_dt",
    "panel.assignment", "panel.network",
    "spillover.s0",     "spillover.drift_a", "spillover.drift_b", "spillover.sigma",
    "spillover.lambda0", "spillover.jump_mean", "spillover.state_dep_exponent",
    "spillover.compensated"};

ScenarioConfig scenario_from_config(const RunConfig& cfg, std::uint64_t seed, int threads) {
  ScenarioConfig s;
  s.jump_intensity = cfg.get_double_or("scenario.lambda", s.jump_intensity);
  s.spatial_rho = cfg.get_double_or("scenario.rho", s.spatial_rho);
  s.network_kind = network_from_string(cfg.get_string_or("scenario.network", "sparse"));
  s.n = static_cast<int>(cfg.get_int_or("scenario.n", s.n));
  s.t = static_cast<int>(cfg.get_int_or("scenario.t", s.t));
  s.n_reps = static_cast<int>(cfg.get_int_or("scenario.reps", s.n_reps));
  s.custom = cfg.get_bool_or("scenario.custom", false);
  s.tau_pe = cfg.get_double_or("scenario.tau_pe", s.tau_pe);
  s.delta_ge = cfg.get_double_or("scenario.delta_ge", s.delta_ge);
  s.noise_sd = cfg.get_double_or("scenario.noise_sd", s.noise_sd);
  s.treated_fraction = cfg.get_double_or("scenario.treated_fraction", s.treated_fraction);
  s.assignment = assignment_from_string(cfg.get_string_or("scenario.assignment", "dispersed"));
  s.cusum_h = cfg.get_double_or("scenario.h", s.cusum_h);
  s.m_samples = static_cast<int>(cfg.get_int_or("scenario.m_samples", s.m_samples));
  s.ensemble = static_cast<int>(cfg.get_int_or("scenario.ensemble", s.ensemble));
  s.bootstrap_b = static_cast<int>(cfg.get_int_or("scenario.bootstrap_b", s.bootstrap_b));
  s.stage1_weights = cfg.get_bool_or("scenario.stage1_weights", s.stage1_weights);
  s.ddpm.epochs = static_cast<int>(cfg.get_int_or("ddpm.epochs", s.ddpm.epochs));
  s.ddpm.batch = static_cast<int>(cfg.get_int_or("ddpm.batch", s.ddpm.batch));
  s.ddpm.lr = cfg.get_double_or("ddpm.lr", s.ddpm.lr);
  s.ddpm.n_steps = static_cast<int>(cfg.get_int_or("ddpm.steps", s.ddpm.n_steps));
  if (cfg.has("scenario.methods")) {
    s.methods.clear();
    for (const auto& name : cfg.get_array("scenario.methods")) {
      const auto m = method_from_name(name);
      if (!m) fail_config("unknown method '" + name + "'");
      s.methods.push_back(*m);
    }
  }
  s.seed = seed;
  s.threads = threads;
  return s;
}

const std::set<std::string> kScenarioKeys = {
    "scenario.lambda",  "scenario.rho",        "scenario.network",   "scenario.n",
    "scenario.t",       "scenario.reps",       "scenario.custom",    "scenario.tau_pe",
    "scenario.delta_ge", "scenario.noise_sd",  "scenario.treated_fraction",
    "scenario.assignment", "scenario.h",       "scenario.m_samples", "scenario.ensemble",
    "scenario.bootstrap_b", "scenario.stage1_weights", "scenario.methods",
    "ddpm.epochs",      "ddpm.batch",          "ddpm.lr",            "ddpm.steps"};

std::string path_csv(const SpilloverPath& path) {
  CsvTable t;
  t.header = {"time", "value", "jumped", "jump_size"};
  std::size_t j = 0;
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    const bool jumped = j < path.jump_times.size() && path.jump_times[j] == path.times[i];
    t.rows.push_back({format_double(path.times[i]), format_double(path.values[i]),
                      jumped ? "1" : "0", format_double(jumped ? path.jump_sizes[j] : 0.0)});
    if (jumped) ++j;
  }
  return t.to_string();
}

json network_to_json(const SpatialNetwork& net) {
  json j;
  j["n"] = net.n;
  j["kind"] = net.kind == NetworkKind::Sparse ? "sparse"
              : net.kind == NetworkKind::Dense ? "dense"
                                               : "kernel";
  json coords = json::array();
  for (int i = 0; i < net.n; ++i)
    coords.push_back({net.coordinates(i, 0), net.coordinates(i, 1)});
  j["coordinates"] = coords;
  json w = json::array();
  for (int i = 0; i < net.n; ++i) {
    json row = json::array();
    for (int k = 0; k < net.n; ++k) row.push_back(net.weights(i, k));
    w.push_back(row);
  }
  j["weights"] = w;
  j["sym_degree"] = std::vector<double>(net.sym_degree.data(), net.sym_degree.data() + net.n);
  return j;
}

SpatialNetwork network_from_json(const json& j) {
  SpatialNetwork net;
  net.n = j.at("n").get<int>();
  const std::string kind = j.at("kind").get<std::string>();
  net.kind = kind == "sparse" ? NetworkKind::Sparse
             : kind == "dense" ? NetworkKind::Dense
                                : NetworkKind::Kernel;
  net.coordinates.resize(net.n, 2);
  for (int i = 0; i < net.n; ++i) {
    net.coordinates(i, 0) = j.at("coordinates")[i][0].get<double>();
    net.coordinates(i, 1) = j.at("coordinates")[i][1].get<double>();
  }
  net.weights.resize(net.n, net.n);
  for (int i = 0; i < net.n; ++i)
    for (int k = 0; k < net.n; ++k) net.weights(i, k) = j.at("weights")[i][k].get<double>();
  const auto deg = j.at("sym_degree").get<std::vector<double>>();
  net.sym_degree = Eigen::Map<const Eigen::VectorXd>(deg.data(), net.n);
  net.econ_distance = pairwise_distances(net.coordinates);
  return net;
}

void write_panel(RunContext& ctx, const SpatialPanel& panel) {
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  CsvTable outcomes;
  outcomes.header = {"location"};
  for (int t = 0; t < t_periods; ++t) outcomes.header.push_back("t" + std::to_string(t));
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> row = {std::to_string(i)};
    for (int t = 0; t < t_periods; ++t) row.push_back(format_double(panel.outcomes(i, t)));
    outcomes.rows.push_back(std::move(row));
  }
  ctx.write("outcomes.csv", outcomes.to_string());

  CsvTable treat;
  treat.header = outcomes.header;
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> row = {std::to_string(i)};
    for (int t = 0; t < t_periods; ++t) row.push_back(std::to_string(panel.treatment(i, t)));
    treat.rows.push_back(std::move(row));
  }
  ctx.write("treatment.csv", treat.to_string());

  CsvTable cov;
  cov.header = {"location", "period"};
  for (int j = 0; j < k; ++j) cov.header.push_back("x" + std::to_string(j + 1));
  for (int t = 0; t < t_periods; ++t)
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> row = {std::to_string(i), std::to_string(t)};
      for (int j = 0; j < k; ++j)
        row.push_back(format_double(panel.covariates[static_cast<std::size_t>(t)](i, j)));
      cov.rows.push_back(std::move(row));
    }
  ctx.write("covariates.csv", cov.to_string());

  json header;
  header["network"] = network_to_json(panel.network);
  header["config"] = ctx.config.serialize();
  if (!panel.state_at_period.empty()) header["state_at_period"] = panel.state_at_period;
  if (!panel.true_regime.empty()) header["true_regime"] = panel.true_regime;
  if (!panel.true_tau_series.empty()) header["true_tau_series"] = panel.true_tau_series;
  ctx.write("panel.json", header.dump(2) + "\n");
}

SpatialPanel read_panel(const fs::path& dir) {
  const CsvTable outcomes = read_csv((dir / "outcomes.csv").string());
  const CsvTable treat = read_csv((dir / "treatment.csv").string());
  const CsvTable cov = read_csv((dir / "covariates.csv").string());
  const json header = json::parse(read_text_file((dir / "panel.json").string()));

  SpatialPanel panel;
  panel.network = network_from_json(header.at("network"));
  const int n = static_cast<int>(outcomes.rows.size());
  const int t_periods = static_cast<int>(outcomes.header.size()) - 1;
  panel.outcomes.resize(n, t_periods);
  panel.treatment.resize(n, t_periods);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < t_periods; ++t) {
      panel.outcomes(i, t) = std::stod(outcomes.rows[static_cast<std::size_t>(i)]
                                           [static_cast<std::size_t>(t) + 1]);
      panel.treatment(i, t) = std::stoi(treat.rows[static_cast<std::size_t>(i)]
                                            [static_cast<std::size_t>(t) + 1]);
    }
  const int k = static_cast<int>(cov.header.size()) - 2;
  panel.covariates.assign(static_cast<std::size_t>(t_periods), Eigen::MatrixXd(n, k));
  for (const auto& row : cov.rows) {
    const int i = std::stoi(row[0]);
    const int t = std::stoi(row[1]);
    for (int j = 0; j < k; ++j)
      panel.covariates[static_cast<std::size_t>(t)](i, j) =
          std::stod(row[static_cast<std::size_t>(j) + 2]);
  }
  if (header.contains("state_at_period"))
    panel.state_at_period = header.at("state_at_period").get<std::vector<double>>();
  if (header.contains("true_regime"))
    panel.true_regime = header.at("true_regime").get<std::vector<int>>();
  if (header.contains("true_tau_series"))
    panel.true_tau_series = header.at("true_tau_series").get<std::vector<double>>();
  return panel;
}

std::string scenario_summary_csv(const ScenarioConfig& cfg, const MetricsReport& rep) {
  CsvTable t;
  t.header = {"lambda", "rho",      "network",  "n",        "t",     "method", "bias",
              "rmse",   "coverage", "ci_width", "boundary_mae", "boundary_within_5",
              "power",  "n_reps_completed", "n_reps_failed"};
  const std::string net = cfg.network_kind == NetworkKind::Sparse ? "sparse"
                          : cfg.network_kind == NetworkKind::Dense ? "dense"
                                                                   : "kernel";
  for (const auto& m : rep.methods) {
    t.rows.push_back({format_double(cfg.jump_intensity), format_double(cfg.spatial_rho), net,
                      std::to_string(cfg.n), std::to_string(cfg.t), m.method,
                      format_double(m.bias), format_double(m.rmse), format_double(m.coverage),
                      format_double(m.mean_ci_width), format_double(rep.boundary_mae),
                      format_double(rep.boundary_within_5), format_double(rep.power),
                      std::to_string(rep.n_reps_completed), std::to_string(rep.n_reps_failed)});
  }
  return t.to_string();
}

std::string scenario_reps_csv(const ScenarioConfig& cfg, const MetricsReport& rep) {
  CsvTable t;
  t.header = {"rep", "failed", "tau_true", "p_ge_true"};
  for (const auto& m : cfg.methods) {
    const std::string name = method_name(m);
    t.header.push_back(name + "_tau");
    t.header.push_back(name + "_lo");
    t.header.push_back(name + "_hi");
  }
  t.header.insert(t.header.end(), {"s_star_true", "s_star_hat", "boundary_detected",
                                   "ge_detected", "has_true_ge"});
  for (const auto& r : rep.reps) {
    std::vector<std::string> row = {std::to_string(r.rep), r.failed ? "1" : "0",
                                    format_double(r.tau_true), format_double(r.p_ge_true)};
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
      row.push_back(format_double(r.failed ? 0.0 : r.tau_hat[m]));
      row.push_back(format_double(r.failed ? 0.0 : r.ci_lo[m]));
      row.push_back(format_double(r.failed ? 0.0 : r.ci_hi[m]));
    }
    row.push_back(format_double(r.s_star_true_km));
    row.push_back(format_double(r.s_star_hat_km));
    row.push_back(r.boundary_detected ? "1" : "0");
    row.push_back(r.ge_detected ? "1" : "0");
    row.push_back(r.has_true_ge ? "1" : "0");
    t.rows.push_back(std::move(row));
  }
  return t.to_string();
}

int cmd_simulate_path(RunContext& ctx) {
  check_allowed_keys(ctx.config,
                     {"path.s0", "path.drift_a", "path.drift_b", "path.sigma", "path.lambda0",
                      "path.jump_mean", "path.state_dep_exponent", "path.compensated",
                      "path.horizon", "path.dt"});
  const JumpDiffusionParams params = spillover_from_config(ctx.config, "path", {});
  const double horizon = ctx.config.get_double_or("path.horizon", 10.0);
  const double dt = ctx.config.get_double_or("path.dt", 0.01);
  const SpilloverPath path = simulate_path(params, horizon, dt, ctx.seed);
  ctx.write("path.csv", path_csv(path));
  ctx.finish("simulate-path");
  return 0;
}

int cmd_simulate_panel(RunContext& ctx) {
  check_allowed_keys(ctx.config, kPanelKeys);
  DgpConfig dgp = dgp_from_config(ctx.config);
  dgp.seed = ctx.seed;
  const SpatialPanel panel = simulate_panel(dgp);
  write_panel(ctx, panel);
  ctx.finish("simulate-panel");
  return 0;
}

int cmd_detect(RunContext& ctx, const std::string& input, bool spatial, double h) {
  const CsvTable table = read_csv(input);
  json out;
  if (spatial) {
    const int dcol = table.column("distance");
    const int ecol = table.column("effect");
    if (dcol < 0 || ecol < 0) fail_config("spatial detect needs 'distance' and 'effect' columns");
    std::vector<DistanceEffect> pairs;
    for (const auto& row : table.rows)
      pairs.push_back({std::stod(row[static_cast<std::size_t>(dcol)]),
                       std::stod(row[static_cast<std::size_t>(ecol)])});
    const auto res = spatial_boundary_scan(pairs, h);
    out["s_star"] = res ? json(res->s_star) : json();
    out["crossed_at"] = res ? json(res->crossing_index + 1) : json();
  } else {
    int col = table.column("value");
    if (col < 0) col = 0;
    std::vector<double> series;
    for (const auto& row : table.rows)
      series.push_back(std::stod(row[static_cast<std::size_t>(col)]));
    const RegimeDetection det = detect_state_series(series, h);
    out["crossed_at"] = det.trace.crossed_at ? json(*det.trace.crossed_at) : json();
    out["onset"] = det.onset ? json(*det.onset) : json();
    out["s_star"] = det.s_star_hat;
    out["trace"] = det.trace.c;
    out["regime"] = det.regime;
  }
  ctx.write("detect.json", out.dump(2) + "\n");
  ctx.finish("detect");
  return 0;
}

const std::set<std::string> kTrainKeys = {"train.epochs", "train.batch", "train.lr",
                                          "train.steps",  "train.hidden", "train.h",
                                          "train.boundary_aware"};

DdpmTrainConfig train_config_from(const RunConfig& cfg, std::uint64_t seed) {
  DdpmTrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int_or("train.epochs", 200));
  t.batch = static_cast<int>(cfg.get_int_or("train.batch", 128));
  t.lr = cfg.get_double_or("train.lr", 5e-3);
  t.n_steps = static_cast<int>(cfg.get_int_or("train.steps", 1000));
  if (cfg.has("train.hidden")) {
    t.hidden.clear();
    for (double h : cfg.get_double_array("train.hidden")) t.hidden.push_back(static_cast<int>(h));
  }
  t.cusum_h = cfg.get_double_or("train.h", 5.0);
  t.boundary_aware = cfg.get_bool_or("train.boundary_aware", true);
  t.seed = seed;
  return t;
}

int cmd_train(RunContext& ctx, const std::string& panel_dir) {
  check_allowed_keys(ctx.config, kTrainKeys);
  const SpatialPanel panel = read_panel(panel_dir);
  const DdpmTrainConfig tc = train_config_from(ctx.config, ctx.seed);
  const DdpmModel model = train(panel, tc);
  ctx.write("model.json", save_model_json(model) + "\n");
  json log;
  log["initial_loss"] = model.training_log.initial_loss;
  log["final_loss"] = model.training_log.final_loss;
  log["epoch_loss"] = model.training_log.epoch_loss;
  log["boundary_crossings"] = model.training_log.boundary_crossings;
  ctx.write("training_log.json", log.dump(2) + "\n");
  ctx.finish("train-ddpm");
  return 0;
}

int cmd_estimate(RunContext& ctx, const std::string& panel_dir, const std::string& model_path,
                 int m_samples, double h) {
  const SpatialPanel panel = read_panel(panel_dir);
  const DdpmModel model = load_model_json(read_text_file(model_path));
  const RegimeDetection det = detect_panel_regimes(panel, h);
  const EffectEstimate est = estimate_effects(model, panel, det, m_samples, ctx.seed);
  const ContrastIntervals ivs =
      contrast_cluster_bootstrap(est.contrasts, det.regime, 199, 4, derive_seed(ctx.seed, 0xC1));
  json out;
  out["tau_pe"] = est.tau_pe ? json(*est.tau_pe) : json();
  out["tau_ge"] = est.tau_ge ? json(*est.tau_ge) : json();
  out["tau_aggregate"] = est.tau_aggregate;
  out["p_ge"] = est.p_ge;
  out["single_regime_fallback"] = est.single_regime_fallback;
  out["m_samples"] = est.m_samples;
  out["ci_aggregate"] = {ivs.tau_aggregate.lo, ivs.tau_aggregate.hi};
  if (ivs.tau_pe.defined) out["ci_pe"] = {ivs.tau_pe.lo, ivs.tau_pe.hi};
  if (ivs.tau_ge.defined) out["ci_ge"] = {ivs.tau_ge.lo, ivs.tau_ge.hi};
  out["per_unit"] =
      std::vector<double>(est.per_unit.data(), est.per_unit.data() + est.per_unit.size());
  ctx.write("effects.json", out.dump(2) + "\n");
  ctx.finish("estimate");
  return 0;
}

int cmd_bootstrap(RunContext& ctx, const std::string& panel_dir) {
  check_allowed_keys(ctx.config,
                     {"bootstrap.b", "bootstrap.m", "bootstrap.mode", "bootstrap.block_length",
                      "bootstrap.budget_epochs", "bootstrap.steps", "bootstrap.h"});
  const SpatialPanel panel = read_panel(panel_dir);
  BootstrapConfig bc;
  bc.b = static_cast<int>(ctx.config.get_int_or("bootstrap.b", 200));
  bc.m = static_cast<int>(ctx.config.get_int_or("bootstrap.m", 1));
  const std::string mode = ctx.config.get_string_or("bootstrap.mode", "locations");
  if (mode == "locations")
    bc.mode = BootstrapMode::ResampleLocations;
  else if (mode == "time-blocks")
    bc.mode = BootstrapMode::TimeBlocks;
  else
    fail_config("unknown bootstrap mode '" + mode + "'");
  bc.block_length = static_cast<int>(ctx.config.get_int_or("bootstrap.block_length", 4));
  bc.seed = ctx.seed;
  bc.threads = ctx.threads;
  DdpmTrainConfig budget;
  budget.epochs = static_cast<int>(ctx.config.get_int_or("bootstrap.budget_epochs", 100));
  budget.n_steps = static_cast<int>(ctx.config.get_int_or("bootstrap.steps", 50));
  budget.batch = 128;
  budget.lr = 5e-3;
  budget.hidden = {48, 48};
  const double h = ctx.config.get_double_or("bootstrap.h", 5.0);
  const int bm = bc.m;

  Pipeline pipeline = [budget, h, bm](const SpatialPanel& p, std::uint64_t seed) {
    DdpmTrainConfig tc = budget;
    tc.seed = derive_seed(seed, 1);
    tc.cusum_h = h;
    const DdpmModel model = train(p, tc);
    const EffectEstimate est =
        estimate_effects(model, p, model.detection, bm, derive_seed(seed, 2));
    PipelineEstimate out;
    out.tau_pe = est.tau_pe;
    out.tau_ge = est.tau_ge;
    if (model.detection.onset) out.s_star = model.detection.s_star_hat;
    return out;
  };
  const BootstrapResult res = hierarchical_bootstrap(panel, pipeline, bc);

  CsvTable draws;
  draws.header = {"iteration", "tau_pe", "tau_ge", "s_star"};
  for (std::size_t i = 0; i < res.draws.size(); ++i) {
    const auto& d = res.draws[i];
    draws.rows.push_back({std::to_string(i), d.tau_pe ? format_double(*d.tau_pe) : "",
                          d.tau_ge ? format_double(*d.tau_ge) : "",
                          d.s_star ? format_double(*d.s_star) : ""});
  }
  ctx.write("bootstrap_draws.csv", draws.to_string());
  json out;
  auto iv = [](const Interval& i) { return i.defined ? json({i.lo, i.hi}) : json(); };
  out["tau_pe_ci"] = iv(res.tau_pe);
  out["tau_ge_ci"] = iv(res.tau_ge);
  out["s_star_ci"] = iv(res.s_star);
  out["n_failures"] = res.n_failures;
  ctx.write("bootstrap_summary.json", out.dump(2) + "\n");
  ctx.finish("bootstrap");
  return 0;
}

int cmd_montecarlo(RunContext& ctx) {
  check_allowed_keys(ctx.config, kScenarioKeys);
  const ScenarioConfig sc = scenario_from_config(ctx.config, ctx.seed, ctx.threads);
  const MetricsReport rep = run_scenario(sc);
  ctx.write("summary.csv", scenario_summary_csv(sc, rep));
  ctx.write("replications.csv", scenario_reps_csv(sc, rep));
  ctx.finish("montecarlo");
  return 0;
}

int cmd_placebo(RunContext& ctx) {
  std::set<std::string> keys = kScenarioKeys;
  keys.insert("placebo.permutations");
  keys.insert("placebo.estimator");
  check_allowed_keys(ctx.config, keys);
  const ScenarioConfig sc = scenario_from_config(ctx.config, ctx.seed, ctx.threads);
  const int perms = static_cast<int>(ctx.config.get_int_or("placebo.permutations", 500));
  const std::string est_name = ctx.config.get_string_or("placebo.estimator", "ddpm");
  PlaceboEstimator est = PlaceboEstimator::Ddpm;
  if (est_name == "ols")
    est = PlaceboEstimator::Ols;
  else if (est_name == "sar")
    est = PlaceboEstimator::Sar;
  else if (est_name != "ddpm")
    fail_config("unknown placebo estimator '" + est_name + "'");
  const PlaceboResult res = placebo_study(sc, perms, est, ctx.seed);
  CsvTable draws;
  draws.header = {"permutation", "estimate"};
  for (std::size_t i = 0; i < res.placebo_estimates.size(); ++i)
    draws.rows.push_back({std::to_string(i), format_double(res.placebo_estimates[i])});
  ctx.write("placebo_draws.csv", draws.to_string());
  json out;
  out["true_estimate"] = res.true_estimate;
  out["p_value"] = res.p_value;
  out["n_permutations"] = perms;
  ctx.write("placebo.json", out.dump(2) + "\n");
  ctx.finish("placebo");
  return 0;
}

int cmd_sensitivity(RunContext& ctx) {
  std::set<std::string> keys = kScenarioKeys;
  keys.insert("sensitivity.h_grid");
  check_allowed_keys(ctx.config, keys);
  const ScenarioConfig sc = scenario_from_config(ctx.config, ctx.seed, ctx.threads);
  std::vector<double> grid = {1.0, 3.0, 5.0, 7.0, 10.0};
  if (ctx.config.has("sensitivity.h_grid"))
    grid = ctx.config.get_double_array("sensitivity.h_grid");
  const auto points = threshold_sensitivity(sc, grid);
  CsvTable t;
  t.header = {"h", "coverage", "detection_power", "type1_rate"};
  for (const auto& p : points)
    t.rows.push_back({format_double(p.h), format_double(p.coverage),
                      format_double(p.detection_power), format_double(p.type1_rate)});
  ctx.write("sensitivity.csv", t.to_string());
  ctx.finish("sensitivity");
  return 0;
}

int cmd_policy(RunContext& ctx, const std::string& input) {
  const json in = json::parse(read_text_file(input));
  PolicyInputs pi;
  const auto tau_pe = in.at("tau_pe").get<std::vector<double>>();
  const auto tau_ge = in.at("tau_ge").get<std::vector<double>>();
  const auto prob = in.at("crossing_prob").get<std::vector<double>>();
  const int n = static_cast<int>(tau_pe.size());
  pi.tau_pe = Eigen::Map<const Eigen::VectorXd>(tau_pe.data(), n);
  pi.tau_ge = Eigen::Map<const Eigen::VectorXd>(tau_ge.data(), n);
  pi.crossing_prob = Eigen::Map<const Eigen::VectorXd>(prob.data(), n);
  pi.phi = Eigen::MatrixXd::Zero(n, n);
  if (in.contains("phi"))
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) pi.phi(i, j) = in.at("phi")[i][j].get<double>();
  pi.cost = in.at("cost").get<double>();
  pi.budget = in.at("budget").get<int>();

  const TargetingComparison cmp = compare_pe_vs_ge_targeting(pi);
  json out;
  out["ge_selection"] = cmp.ge_selection.selected;
  out["ge_welfare"] = cmp.ge_selection.total_welfare;
  out["ge_shadow_price"] = cmp.ge_selection.shadow_price_mu;
  out["pe_selection"] = cmp.pe_selection.selected;
  out["pe_welfare_under_ge"] = cmp.pe_welfare_under_ge;
  out["welfare_gain_ratio"] = cmp.welfare_gain_ratio;
  ctx.write("policy.json", out.dump(2) + "\n");
  ctx.finish("policy");
  return 0;
}

int cmd_report(RunContext& ctx, const std::string& dir) {
  std::vector<std::string> found;
  std::string md = "# Run report\n";
  const fs::path root(dir);
  std::vector<fs::path> summaries;
  if (fs::exists(root))
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && entry.path().filename() == "summary.csv")
        summaries.push_back(entry.path());
  std::sort(summaries.begin(), summaries.end());
  if (!summaries.empty()) {
    found.push_back("summary.csv");
    md += "\n## Scenario results\n\n";
    md += "| lambda | rho | network | n | t | method | bias | rmse | coverage | power |\n";
    md += "|---|---|---|---|---|---|---|---|---|---|\n";
    CsvTable plot;
    plot.header = {"lambda", "method", "bias", "coverage"};
    for (const auto& p : summaries) {
      const CsvTable t = read_csv(p.string());
      for (const auto& row : t.rows) {
        auto cell = [&](const char* name) {
          return row[static_cast<std::size_t>(t.column(name))];
        };
        md += "| " + cell("lambda") + " | " + cell("rho") + " | " + cell("network") + " | " +
              cell("n") + " | " + cell("t") + " | " + cell("method") + " | " + cell("bias") +
              " | " + cell("rmse") + " | " + cell("coverage") + " | " + cell("power") + " |\n";
        plot.rows.push_back({cell("lambda"), cell("method"), cell("bias"), cell("coverage")});
      }
    }
    ctx.write("plot_bias_coverage.csv", plot.to_string());
  }
  for (const char* name : {"sensitivity.csv", "placebo.json", "bootstrap_summary.json"}) {
    const fs::path p = root / name;
    if (fs::exists(p)) {
      found.push_back(name);
      md += "\n## " + std::string(name) + "\n\n```\n" + read_text_file(p.string()) + "```\n";
    }
  }
  if (found.empty()) {
    json err;
    err["error"] = "missing-artifacts";
    err["message"] = "no run artifacts under '" + dir + "'";
    err["expected_any_of"] = {"summary.csv", "sensitivity.csv", "placebo.json",
                              "bootstrap_summary.json"};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  ctx.write("report.md", md);
  ctx.finish("report");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic-boundary spillover analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", input_path, panel_dir, model_path, report_dir;
  std::uint64_t seed = 20240901;
  int threads = 0;
  bool spatial = false;
  double h = 5.0;
  int m_samples = 1;
  int reps_override = -1;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config)
      cmd->add_option("--config", config_path, "run configuration file")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "run seed (all randomness derives from it)");
    cmd->add_option("--threads", threads, "worker threads (0 = default)");
  };
  auto add_scenario_common = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", config_path, "scenario configuration")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--threads", threads, "worker threads");
  };

  auto* sim_path = app.add_subcommand("simulate-path", "simulate a spillover path");
  add_common(sim_path, true);
  auto* sim_panel = app.add_subcommand("simulate-panel", "simulate a spatial panel");
  add_common(sim_panel, true);
  auto* detect =
      app.add_subcommand("detect", "CUSUM detection on a series or distance-effect pairs");
  detect->add_option("--input", input_path, "CSV of observations")->required();
  detect->add_flag("--spatial", spatial, "treat input as distance,effect pairs");
  detect->add_option("--threshold", h, "decision threshold");
  add_common(detect, false);
  auto* train_cmd = app.add_subcommand("train-ddpm", "train the boundary-aware diffusion model");
  train_cmd->add_option("--panel", panel_dir, "panel directory")->required();
  add_common(train_cmd, true);
  auto* estimate = app.add_subcommand("estimate", "counterfactual effect estimation");
  estimate->add_option("--panel", panel_dir, "panel directory")->required();
  estimate->add_option("--model", model_path, "trained model JSON")->required();
  estimate->add_option("--m", m_samples, "diffusion samples per unit");
  estimate->add_option("--threshold", h, "detection threshold");
  add_common(estimate, false);
  auto* bootstrap = app.add_subcommand("bootstrap", "hierarchical bootstrap inference");
  bootstrap->add_option("--panel", panel_dir, "panel directory")->required();
  add_common(bootstrap, true);
  auto* mc = app.add_subcommand("montecarlo", "replication study for one scenario");
  add_scenario_common(mc);
  mc->add_option("--reps", reps_override, "override scenario.reps");
  auto* placebo = app.add_subcommand("placebo", "randomized-treatment placebo study");
  add_scenario_common(placebo);
  auto* sens = app.add_subcommand("sensitivity", "detection-threshold sensitivity study");
  add_scenario_common(sens);
  auto* policy = app.add_subcommand("policy", "budgeted spatial targeting");
  policy->add_option("--input", input_path, "policy inputs JSON")->required();
  add_common(policy, false);
  auto* report = app.add_subcommand("report", "render tables and plot data from run artifacts");
  report->add_option("--dir", report_dir, "directory of run artifacts")->required();
  add_common(report, false);

  CLI11_PARSE(app, argc, argv);

  if (threads > 0) omp_set_num_threads(threads);

  RunContext ctx;
  ctx.out_dir = out_dir;
  ctx.seed = seed;
  ctx.threads = threads;

  try {
    if (app.got_subcommand(sim_path)) {
      ctx.config = load_config(config_path);
      return cmd_simulate_path(ctx);
    }
    if (app.got_subcommand(sim_panel)) {
      ctx.config = load_config(config_path);
      return cmd_simulate_panel(ctx);
    }
    if (app.got_subcommand(detect)) return cmd_detect(ctx, input_path, spatial, h);
    if (app.got_subcommand(train_cmd)) {
      ctx.config = load_config(config_path);
      return cmd_train(ctx, panel_dir);
    }
    if (app.got_subcommand(estimate))
      return cmd_estimate(ctx, panel_dir, model_path, m_samples, h);
    if (app.got_subcommand(bootstrap)) {
      ctx.config = load_config(config_path);
      return cmd_bootstrap(ctx, panel_dir);
    }
    if (app.got_subcommand(mc)) {
      ctx.config = load_config(config_path);
      if (reps_override > 0) ctx.config.set("scenario.reps", std::to_string(reps_override));
      return cmd_montecarlo(ctx);
    }
    if (app.got_subcommand(placebo)) {
      ctx.config = load_config(config_path);
      return cmd_placebo(ctx);
    }
    if (app.got_subcommand(sens)) {
      ctx.config = load_config(config_path);
      return cmd_sensitivity(ctx);
    }
    if (app.got_subcommand(policy)) return cmd_policy(ctx, input_path);
    if (app.got_subcommand(report)) return cmd_report(ctx, report_dir);
  } catch (const ConfigError& e) {
    fail_config(e.what());
  } catch (const std::exception& e) {
    json err;
    err["error"] = "runtime";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
