// Experiment driver: simulate datasets, run sequential benchmarks, evaluate
// posterior samples against each other or the generating parameters, and draw
// long-run reference posteriors for tractable models.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ssnl/io.hpp"
#include "ssnl/metrics.hpp"
#include "ssnl/sequential.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";
// Observations are drawn from this per-seed stream so every command agrees on
// (theta_obs, y_obs) for a given seed, independent of method or config.
constexpr std::uint64_t kObservationStream = 424243;

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ config parsing

[[noreturn]] void bad_config(const std::string& msg) { throw ssnl::ConfigError(msg); }

void reject_unknown(const json& obj, const std::vector<std::string>& allowed,
                    const std::string& where) {
  if (!obj.is_object()) bad_config(where + ": expected an object");
  for (const auto& item : obj.items())
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      bad_config(where + ": unknown key '" + item.key() + "'");
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) bad_config(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad_config(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return get_as<T>(j, key, where);
}

ssnl::SimulatorConfig parse_sim_config(const json& j) {
  ssnl::SimulatorConfig cfg;
  if (j.is_null()) return cfg;
  const std::string w = "simulator_config";
  reject_unknown(j,
                 {"ou_length", "ou_t_end", "lv_obs_per_species", "sir_length", "solar_length",
                  "hyperboloid_dim", "beta_glm_theta_dim", "beta_glm_y_dim",
                  "beta_glm_concentration", "beta_glm_design_seed", "ode_rtol", "ode_atol",
                  "ode_max_steps"},
                 w);
  cfg.ou_length = get_or<std::size_t>(j, "ou_length", cfg.ou_length, w);
  cfg.ou_t_end = get_or<double>(j, "ou_t_end", cfg.ou_t_end, w);
  cfg.lv_obs_per_species = get_or<std::size_t>(j, "lv_obs_per_species", cfg.lv_obs_per_species, w);
  cfg.sir_length = get_or<std::size_t>(j, "sir_length", cfg.sir_length, w);
  cfg.solar_length = get_or<std::size_t>(j, "solar_length", cfg.solar_length, w);
  cfg.hyperboloid_dim = get_or<std::size_t>(j, "hyperboloid_dim", cfg.hyperboloid_dim, w);
  cfg.beta_glm_theta_dim = get_or<std::size_t>(j, "beta_glm_theta_dim", cfg.beta_glm_theta_dim, w);
  cfg.beta_glm_y_dim = get_or<std::size_t>(j, "beta_glm_y_dim", cfg.beta_glm_y_dim, w);
  cfg.beta_glm_concentration =
      get_or<double>(j, "beta_glm_concentration", cfg.beta_glm_concentration, w);
  cfg.beta_glm_design_seed =
      get_or<std::uint64_t>(j, "beta_glm_design_seed", cfg.beta_glm_design_seed, w);
  cfg.ode.rtol = get_or<double>(j, "ode_rtol", cfg.ode.rtol, w);
  cfg.ode.atol = get_or<double>(j, "ode_atol", cfg.ode.atol, w);
  cfg.ode.max_steps = get_or<std::size_t>(j, "ode_max_steps", cfg.ode.max_steps, w);
  return cfg;
}

ssnl::TrainConfig parse_train(const json& j) {
  ssnl::TrainConfig cfg;
  if (j.is_null()) return cfg;
  const std::string w = "train";
  reject_unknown(
      j, {"learning_rate", "batch_size", "max_epochs", "patience", "val_fraction", "grad_clip_norm"},
      w);
  cfg.learning_rate = get_or<double>(j, "learning_rate", cfg.learning_rate, w);
  cfg.batch_size = get_or<std::size_t>(j, "batch_size", cfg.batch_size, w);
  cfg.max_epochs = get_or<std::size_t>(j, "max_epochs", cfg.max_epochs, w);
  cfg.patience = get_or<std::size_t>(j, "patience", cfg.patience, w);
  cfg.val_fraction = get_or<double>(j, "val_fraction", cfg.val_fraction, w);
  cfg.grad_clip_norm = get_or<double>(j, "grad_clip_norm", cfg.grad_clip_norm, w);
  return cfg;
}

ssnl::SliceConfig parse_mcmc(const json& j) {
  ssnl::SliceConfig cfg;
  if (j.is_null()) return cfg;
  const std::string w = "mcmc";
  reject_unknown(j, {"chains", "steps", "burn_in"}, w);
  cfg.n_chains = get_or<std::size_t>(j, "chains", cfg.n_chains, w);
  cfg.n_steps = get_or<std::size_t>(j, "steps", cfg.n_steps, w);
  cfg.burn_in = get_or<std::size_t>(j, "burn_in", cfg.burn_in, w);
  return cfg;
}

ssnl::MethodSpec parse_method(const std::string& s) {
  if (s == "snl") return ssnl::MethodSpec::snl();
  if (s == "ssnl@auto") return ssnl::MethodSpec::ssnl_auto();
  if (s == "ssnl@0.25") return ssnl::MethodSpec::ssnl(0.25);
  if (s == "ssnl@0.5") return ssnl::MethodSpec::ssnl(0.5);
  if (s == "ssnl@0.75") return ssnl::MethodSpec::ssnl(0.75);
  bad_config("methods: unknown method '" + s +
             "' (want snl, ssnl@0.25, ssnl@0.5, ssnl@0.75, ssnl@auto)");
}

json load_config(const std::string& path) {
  try {
    return json::parse(ssnl::read_file(path));
  } catch (const json::exception& e) {
    bad_config(path + ": " + e.what());
  }
}

std::uint64_t resolve_seed(std::int64_t flag, const json& cfg) {
  if (flag >= 0) return static_cast<std::uint64_t>(flag);
  return get_or<std::uint64_t>(cfg, "seed", 0, "config");
}

// --------------------------------------------------------------- shared bits

struct Observation {
  ssnl::Tensor theta;
  ssnl::Tensor y;
};

Observation draw_observation(const ssnl::Simulator& sim, std::uint64_t seed) {
  ssnl::Rng rng = ssnl::Rng(seed).child(kObservationStream);
  Observation o;
  o.theta = sim.prior.sample(rng);
  o.y = sim.simulate(o.theta, rng);
  return o;
}

ssnl::Tensor hstack(const ssnl::Tensor& a, const ssnl::Tensor& b) {
  ssnl::Tensor out({a.rows(), a.cols() + b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

ssnl::Tensor subsample_rows(const ssnl::Tensor& t, std::size_t cap, ssnl::Rng rng) {
  if (t.rows() <= cap) return t;
  std::vector<std::size_t> idx = rng.permutation(t.rows());
  idx.resize(cap);
  return ssnl::gather_rows(t, idx);
}

json tensor_json(const ssnl::Tensor& t) { return json(t.data()); }

void write_json(const fs::path& path, const json& j) {
  ssnl::write_file(path.string(), j.dump(2) + "\n");
}

// ------------------------------------------------------------------ simulate

int cmd_simulate(const json& cfg, std::int64_t seed_flag, const fs::path& out) {
  reject_unknown(cfg, {"name", "simulator", "simulator_config", "n", "seed"}, "config");
  const std::string id = get_as<std::string>(cfg, "simulator", "config");
  const ssnl::Simulator sim = ssnl::make_simulator(id, parse_sim_config(cfg.value("simulator_config", json())));
  const std::size_t n = get_as<std::size_t>(cfg, "n", "config");
  if (n < 1) bad_config("config.n: must be >= 1");
  const std::uint64_t seed = resolve_seed(seed_flag, cfg);

  const std::size_t p = sim.theta_dim, d = sim.y_dim;
  ssnl::Rng rng(seed);
  ssnl::Tensor thetas({n, p}), ys({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const ssnl::Tensor th = sim.prior.sample(rng);
    const ssnl::Tensor y = sim.simulate(th, rng);
    for (std::size_t j = 0; j < p; ++j) thetas.at(i, j) = th[j];
    for (std::size_t j = 0; j < d; ++j) ys.at(i, j) = y[j];
  }

  fs::create_directories(out);
  const fs::path csv = out / "dataset.csv";
  ssnl::write_csv(csv.string(), ssnl::dataset_columns(p, d), hstack(thetas, ys));

  json manifest;
  manifest["format_version"] = 1;
  manifest["command"] = "simulate";
  manifest["code_version"] = kVersion;
  manifest["config_hash"] = ssnl::checksum_hex(cfg.dump());
  manifest["seed"] = seed;
  manifest["simulator"] = id;
  manifest["n"] = n;
  manifest["files"]["dataset.csv"] = ssnl::file_checksum(csv.string());
  write_json(out / "manifest.json", manifest);

  std::cout << "wrote " << csv.string() << " (" << ssnl::file_checksum(csv.string()) << ")\n";
  return 0;
}

// ----------------------------------------------------------------- benchmark

struct ResultRow {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::size_t budget = 0;
  std::string metric;
  double value = 0.0;
};

struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<ResultRow> rows;
};

std::mutex g_log_mutex;

void log_line(const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << msg << "\n";
}

int cmd_benchmark(const json& cfg, std::int64_t seed_flag, const fs::path& out, int jobs) {
  reject_unknown(cfg,
                 {"name", "simulator", "simulator_config", "methods", "rounds", "draws_per_round",
                  "seeds", "train", "mcmc", "hidden", "metrics", "max_retries", "seed"},
                 "config");
  const std::string id = get_as<std::string>(cfg, "simulator", "config");
  const ssnl::Simulator sim = ssnl::make_simulator(id, parse_sim_config(cfg.value("simulator_config", json())));
  const std::size_t p = sim.theta_dim, d = sim.y_dim;

  const std::vector<std::string> methods =
      get_as<std::vector<std::string>>(cfg, "methods", "config");
  if (methods.empty()) bad_config("config.methods: must not be empty");
  for (const std::string& m : methods) (void)parse_method(m);

  std::vector<std::uint64_t> seeds =
      get_or<std::vector<std::uint64_t>>(cfg, "seeds", {0}, "config");
  if (seed_flag >= 0) seeds = {static_cast<std::uint64_t>(seed_flag)};
  if (seeds.empty()) bad_config("config.seeds: must not be empty");

  ssnl::SequentialConfig scfg;
  scfg.rounds = get_or<std::size_t>(cfg, "rounds", scfg.rounds, "config");
  scfg.draws_per_round = get_or<std::size_t>(cfg, "draws_per_round", scfg.draws_per_round, "config");
  scfg.max_retries = get_or<std::size_t>(cfg, "max_retries", scfg.max_retries, "config");
  scfg.hidden = get_or<std::vector<std::size_t>>(cfg, "hidden", scfg.hidden, "config");
  scfg.train = parse_train(cfg.value("train", json()));
  scfg.mcmc = parse_mcmc(cfg.value("mcmc", json()));

  std::size_t metric_folds = 5, metric_subsample = 5000;
  std::string reference_path;
  if (cfg.contains("metrics")) {
    const json& mj = cfg.at("metrics");
    reject_unknown(mj, {"folds", "subsample", "reference"}, "metrics");
    metric_folds = get_or<std::size_t>(mj, "folds", metric_folds, "metrics");
    metric_subsample = get_or<std::size_t>(mj, "subsample", metric_subsample, "metrics");
    reference_path = get_or<std::string>(mj, "reference", "", "metrics");
  }
  const bool have_reference = !reference_path.empty();
  ssnl::Tensor reference;
  if (have_reference) {
    auto [cols, rows] = ssnl::read_csv(reference_path);
    ssnl::require_theta_columns(cols, reference_path);
    if (cols.size() != p)
      bad_config("metrics.reference: " + reference_path + " has " + std::to_string(cols.size()) +
                 " parameters, simulator has " + std::to_string(p));
    reference = std::move(rows);
  }

  const std::string run_id = get_or<std::string>(cfg, "name", id, "config");
  const fs::path base = out / run_id;
  fs::create_directories(base);
  const std::string config_hash = ssnl::checksum_hex(cfg.dump());

  std::vector<CellResult> cells;
  for (const std::string& m : methods)
    for (std::uint64_t s : seeds) {
      CellResult c;
      c.method = m;
      c.seed = s;
      cells.push_back(std::move(c));
    }

  auto run_cell = [&](CellResult& cell) {
    const auto cell_t0 = std::chrono::steady_clock::now();
    const Observation obs = draw_observation(sim, cell.seed);
    ssnl::SbiProblem prob{sim.prior, sim, obs.y};
    const ssnl::MethodSpec spec = parse_method(cell.method);
    ssnl::Rng stream = ssnl::Rng(cell.seed).child(ssnl::fnv1a64(cell.method));

    const auto seq_t0 = std::chrono::steady_clock::now();
    const ssnl::SequentialResult res = ssnl::run_sequential(prob, spec, scfg, stream);
    const double seq_wall = elapsed_s(seq_t0);

    const fs::path cell_dir = base / cell.method / ("seed-" + std::to_string(cell.seed));
    json files = json::object();
    std::size_t budget = 0;
    for (std::size_t ri = 0; ri < res.rounds.size(); ++ri) {
      const ssnl::RoundState& st = res.rounds[ri];
      const ssnl::RoundReport& rep = res.reports[ri];
      budget += rep.sim_calls;
      const fs::path dir = cell_dir / ("round-" + std::to_string(st.round));
      fs::create_directories(dir);

      const fs::path dataset = dir / "dataset.csv";
      ssnl::write_csv(dataset.string(), ssnl::dataset_columns(p, d),
                      hstack(st.fresh.theta, st.fresh.y));
      const fs::path posterior = dir / "posterior.csv";
      ssnl::write_csv(posterior.string(), ssnl::theta_columns(p), st.posterior);
      const fs::path checkpoint = dir / "checkpoint.json";
      ssnl::save_checkpoint(checkpoint.string(), st.flow);

      auto add_row = [&](const std::string& metric, double value) {
        cell.rows.push_back({cell.method, cell.seed, st.round, budget, metric, value});
      };
      const double mse = ssnl::mse_to_truth(st.posterior, obs.theta);
      add_row("mse", mse);
      add_row("best_val_nll", rep.train.best_val_nll);
      add_row("retries", static_cast<double>(rep.retries));
      if (!rep.rhat.empty())
        add_row("rhat_max", *std::max_element(rep.rhat.begin(), rep.rhat.end()));

      json round_metrics = {{"mse", mse}};
      if (have_reference) {
        ssnl::Rng mrng = ssnl::Rng(cell.seed).child(555000 + st.round);
        const ssnl::Tensor ref_sub = subsample_rows(reference, metric_subsample, mrng.child(0));
        const ssnl::Tensor post_sub = subsample_rows(st.posterior, metric_subsample, mrng.child(1));
        ssnl::Rng fold_rng = mrng.child(2);
        const ssnl::HDivergenceResult h =
            ssnl::h_divergences(ref_sub, post_sub, fold_rng, metric_folds);
        add_row("h_min", h.d_min);
        add_row("h_js", h.d_js);
        round_metrics["h_min"] = h.d_min;
        round_metrics["h_js"] = h.d_js;
      }

      json report;
      report["round"] = st.round;
      report["dataset_size"] = rep.dataset_size;
      report["sim_calls"] = rep.sim_calls;
      report["retries"] = rep.retries;
      report["budget"] = budget;
      report["reduction"] = rep.reduction;
      report["wall_seconds"] = rep.wall_seconds;
      report["epochs"] = rep.train.epochs;
      report["best_val_nll"] = rep.train.best_val_nll;
      report["rhat"] = rep.rhat;
      report["metrics"] = round_metrics;
      write_json(dir / "report.json", report);

      const std::string rel = "round-" + std::to_string(st.round) + "/";
      files[rel + "dataset.csv"] = ssnl::file_checksum(dataset.string());
      files[rel + "posterior.csv"] = ssnl::file_checksum(posterior.string());
      files[rel + "checkpoint.json"] = ssnl::file_checksum(checkpoint.string());
    }

    json manifest;
    manifest["format_version"] = 1;
    manifest["command"] = "benchmark";
    manifest["code_version"] = kVersion;
    manifest["config_hash"] = config_hash;
    manifest["method"] = cell.method;
    manifest["seed"] = cell.seed;
    manifest["theta_obs"] = tensor_json(obs.theta);
    manifest["y_obs"] = tensor_json(obs.y);
    manifest["total_sim_calls"] = res.total_sim_calls;
    manifest["total_retries"] = res.total_retries;
    manifest["reduction"] = res.reduction;
    if (!res.selection_val_nll.empty()) {
      json sel = json::object();
      for (const auto& [c, v] : res.selection_val_nll) sel[ssnl::format_double(c)] = v;
      manifest["selection_val_nll"] = sel;
    }
    manifest["wall_seconds"] = seq_wall;
    json round_walls = json::array();
    for (const auto& rep : res.reports) round_walls.push_back(rep.wall_seconds);
    manifest["round_wall_seconds"] = std::move(round_walls);
    manifest["files"] = files;
    write_json(cell_dir / "manifest.json", manifest);
    log_line("cell " + cell.method + " seed " + std::to_string(cell.seed) + " done in " +
             std::to_string(elapsed_s(cell_t0)) + " s");
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), cells.size());
  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= cells.size()) return;
      CellResult& cell = cells[i];
      try {
        run_cell(cell);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
        log_line("cell " + cell.method + " seed " + std::to_string(cell.seed) +
                 " failed: " + cell.error);
      }
    }
  };
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  // Single writer merges the per-cell rows in deterministic cell order.
  std::ostringstream csv;
  csv << "run,method,seed,round,budget,metric,value\n";
  for (const CellResult& cell : cells)
    for (const ResultRow& r : cell.rows)
      csv << run_id << ',' << r.method << ',' << r.seed << ',' << r.round << ',' << r.budget
          << ',' << r.metric << ',' << ssnl::format_double(r.value) << '\n';
  const fs::path results = base / "results.csv";
  ssnl::write_file(results.string(), csv.str());

  json manifest;
  manifest["format_version"] = 1;
  manifest["command"] = "benchmark";
  manifest["code_version"] = kVersion;
  manifest["config_hash"] = config_hash;
  manifest["simulator"] = id;
  manifest["run"] = run_id;
  json cell_entries = json::array();
  std::size_t failures = 0;
  for (const CellResult& cell : cells) {
    json e;
    e["method"] = cell.method;
    e["seed"] = cell.seed;
    e["status"] = cell.ok ? "ok" : "failed";
    if (!cell.ok) {
      e["error"] = cell.error;
      ++failures;
    }
    cell_entries.push_back(std::move(e));
  }
  manifest["cells"] = std::move(cell_entries);
  manifest["files"]["results.csv"] = ssnl::file_checksum(results.string());
  write_json(base / "manifest.json", manifest);

  std::cout << "run " << run_id << ": " << (cells.size() - failures) << "/" << cells.size()
            << " cells ok; results at " << results.string() << "\n";
  return failures == 0 ? 0 : 2;
}

// ------------------------------------------------------------------ evaluate

int cmd_evaluate(const json& cfg, std::int64_t seed_flag, const fs::path& out) {
  reject_unknown(cfg, {"p", "q", "theta_obs", "folds", "subsample", "seed"}, "config");
  const std::string p_path = get_as<std::string>(cfg, "p", "config");
  auto [p_cols, p_rows] = ssnl::read_csv(p_path);
  ssnl::require_theta_columns(p_cols, p_path);
  const std::uint64_t seed = resolve_seed(seed_flag, cfg);
  const std::size_t folds = get_or<std::size_t>(cfg, "folds", 5, "config");
  const std::size_t cap = get_or<std::size_t>(cfg, "subsample", 5000, "config");

  json result;
  result["p"] = p_path;
  result["n_p"] = p_rows.rows();
  result["dim"] = p_rows.cols();

  bool any = false;
  if (cfg.contains("q")) {
    const std::string q_path = get_as<std::string>(cfg, "q", "config");
    auto [q_cols, q_rows] = ssnl::read_csv(q_path);
    ssnl::require_theta_columns(q_cols, q_path);
    if (q_cols.size() != p_cols.size())
      bad_config("dimension mismatch: " + p_path + " has " + std::to_string(p_cols.size()) +
                 " parameters, " + q_path + " has " + std::to_string(q_cols.size()));
    ssnl::Rng rng(seed);
    const ssnl::Tensor ps = subsample_rows(p_rows, cap, rng.child(0));
    const ssnl::Tensor qs = subsample_rows(q_rows, cap, rng.child(1));
    ssnl::Rng fold_rng = rng.child(2);
    const ssnl::HDivergenceResult h = ssnl::h_divergences(ps, qs, fold_rng, folds);
    result["q"] = q_path;
    result["n_q"] = q_rows.rows();
    result["d_min"] = h.d_min;
    result["d_js"] = h.d_js;
    result["h_p"] = h.h_p;
    result["h_q"] = h.h_q;
    result["h_mix"] = h.h_mix;
    result["bandwidth_p"] = h.bandwidth_p;
    result["bandwidth_q"] = h.bandwidth_q;
    any = true;
  }
  if (cfg.contains("theta_obs")) {
    const std::vector<double> truth = get_as<std::vector<double>>(cfg, "theta_obs", "config");
    if (truth.size() != p_rows.cols())
      bad_config("dimension mismatch: theta_obs has " + std::to_string(truth.size()) +
                 " entries, " + p_path + " has " + std::to_string(p_rows.cols()) + " parameters");
    result["mse"] = ssnl::mse_to_truth(p_rows, ssnl::Tensor::vec(truth));
    any = true;
  }
  if (!any) bad_config("config: need 'q' (divergences) or 'theta_obs' (mse), got neither");

  fs::create_directories(out);
  write_json(out / "metrics.json", result);
  std::cout << result.dump(2) << "\n";
  return 0;
}

// ----------------------------------------------------------------- reference

int cmd_reference(const json& cfg, std::int64_t seed_flag, const fs::path& out) {
  reject_unknown(cfg, {"name", "simulator", "simulator_config", "chains", "steps", "burn_in", "seed"},
                 "config");
  const std::string id = get_as<std::string>(cfg, "simulator", "config");
  const ssnl::Simulator sim = ssnl::make_simulator(id, parse_sim_config(cfg.value("simulator_config", json())));
  if (!sim.has_exact_loglik())
    bad_config("reference: simulator '" + id +
               "' has no tractable likelihood; supported: beta_glm, gmm, hyperboloid, ou, slcp");

  const std::uint64_t seed = resolve_seed(seed_flag, cfg);
  ssnl::SliceConfig sc;
  sc.n_chains = get_or<std::size_t>(cfg, "chains", 10, "config");
  sc.n_steps = get_or<std::size_t>(cfg, "steps", 20000, "config");
  sc.burn_in = get_or<std::size_t>(cfg, "burn_in", 10000, "config");

  const Observation obs = draw_observation(sim, seed);
  const std::size_t p = sim.theta_dim;
  const ssnl::SupportTransform transform = sim.prior.transform();
  sc.init_width = ssnl::seq_detail::default_widths(sim.prior);

  ssnl::TargetDensity target;
  target.dim = p;
  target.logp = [&](const std::vector<double>& u) {
    const ssnl::Tensor th = ssnl::Tensor::vec(transform.constrain(u));
    const double lp_prior = sim.prior.log_pdf(th);
    if (!std::isfinite(lp_prior)) return -std::numeric_limits<double>::infinity();
    try {
      const double ll = sim.exact_loglik(obs.y, th);
      if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
      return ll + lp_prior + transform.log_jacobian(u);
    } catch (const ssnl::NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  ssnl::Rng rng = ssnl::Rng(seed).child(777001);
  std::vector<std::vector<double>> init_u(sc.n_chains);
  for (std::size_t c = 0; c < sc.n_chains; ++c)
    init_u[c] = transform.unconstrain(sim.prior.sample(rng).data());

  const auto t0 = std::chrono::steady_clock::now();
  const ssnl::ChainSet chains = ssnl::slice_sample(target, transform, sc, init_u, rng);
  const ssnl::Tensor posterior = chains.flattened();
  std::vector<double> rhat;
  if (chains.chains.size() >= 2 && chains.chains.front().rows() >= 4)
    rhat = ssnl::split_rhat(chains).rhat;

  fs::create_directories(out);
  const fs::path csv = out / "posterior.csv";
  ssnl::write_csv(csv.string(), ssnl::theta_columns(p), posterior);

  json report;
  report["simulator"] = id;
  report["seed"] = seed;
  report["chains"] = sc.n_chains;
  report["steps"] = sc.n_steps;
  report["burn_in"] = sc.burn_in;
  report["draws"] = posterior.rows();
  report["rhat"] = rhat;
  report["theta_obs"] = tensor_json(obs.theta);
  report["y_obs"] = tensor_json(obs.y);
  report["wall_seconds"] = elapsed_s(t0);
  write_json(out / "report.json", report);

  json manifest;
  manifest["format_version"] = 1;
  manifest["command"] = "reference";
  manifest["code_version"] = kVersion;
  manifest["config_hash"] = ssnl::checksum_hex(cfg.dump());
  manifest["seed"] = seed;
  manifest["simulator"] = id;
  manifest["files"]["posterior.csv"] = ssnl::file_checksum(csv.string());
  write_json(out / "manifest.json", manifest);

  std::cout << "wrote " << csv.string() << " (" << posterior.rows() << " draws)";
  if (!rhat.empty()) {
    std::cout << " rhat:";
    for (double r : rhat) std::cout << ' ' << ssnl::format_double(r);
  }
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential neural likelihood estimation with surjective flows"};
  app.require_subcommand(1);

  struct Opts {
    std::string config;
    std::int64_t seed = -1;
    std::string out = "runs";
    int jobs = 1;
  };
  Opts opts[4];
  const char* names[4] = {"simulate", "benchmark", "evaluate", "reference"};
  const char* descs[4] = {"Draw (theta, y) pairs from a simulator and write them as CSV",
                          "Run the full sequential benchmark grid over methods and seeds",
                          "Compute divergences / MSE between posterior sample files",
                          "Slice-sample the exact posterior of a tractable simulator"};
  CLI::App* subs[4];
  for (int i = 0; i < 4; ++i) {
    subs[i] = app.add_subcommand(names[i], descs[i]);
    subs[i]->add_option("--config", opts[i].config, "Path to a JSON config file")->required();
    subs[i]->add_option("--seed", opts[i].seed, "Seed override (>= 0)");
    subs[i]->add_option("--out", opts[i].out, "Output directory (default: runs)");
    subs[i]->add_option("--jobs", opts[i].jobs, "Parallel cells (benchmark only)")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (int i = 0; i < 4; ++i) {
      if (!subs[i]->parsed()) continue;
      const json cfg = load_config(opts[i].config);
      const fs::path out = opts[i].out;
      switch (i) {
        case 0: return cmd_simulate(cfg, opts[i].seed, out);
        case 1: return cmd_benchmark(cfg, opts[i].seed, out, opts[i].jobs);
        case 2: return cmd_evaluate(cfg, opts[i].seed, out);
        case 3: return cmd_reference(cfg, opts[i].seed, out);
      }
    }
  } catch (const ssnl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
