// End-to-end checks of the command line driver: every test execs the real
// binary (path injected via SSNL_CLI_PATH) and inspects its artifacts.

#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "ssnl/flows.hpp"
#include "ssnl/io.hpp"
#include "ssnl/metrics.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ssnl_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  return fs::exists(p) ? ssnl::read_file(p.string()) : std::string();
}

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliRun run_cli(const fs::path& scratch, const std::string& args) {
  const fs::path out = scratch / "__stdout.txt";
  const fs::path err = scratch / "__stderr.txt";
  const std::string cmd = std::string("\"") + SSNL_CLI_PATH + "\" " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  if (status >= 0 && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
  const fs::path p = dir / name;
  ssnl::write_file(p.string(), j.dump(2) + "\n");
  return p;
}

json tiny_bench(const std::vector<std::string>& methods) {
  return json{{"name", "t"},
              {"simulator", "gmm"},
              {"methods", methods},
              {"rounds", 2},
              {"draws_per_round", 120},
              {"seeds", {3}},
              {"hidden", {16, 16}},
              {"train", {{"max_epochs", 20}, {"patience", 5}, {"batch_size", 50}}},
              {"mcmc", {{"chains", 2}, {"steps", 160}, {"burn_in", 60}}}};
}

struct ResultRow {
  std::string run, method, metric;
  long seed = 0, round = 0, budget = 0;
  double value = 0.0;
};

std::vector<ResultRow> read_results(const fs::path& csv) {
  const std::string text = slurp(csv);
  REQUIRE_FALSE(text.empty());
  std::vector<ResultRow> rows;
  std::istringstream in(text);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "run,method,seed,round,budget,metric,value");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    REQUIRE(f.size() == 7);
    rows.push_back({f[0], f[1], f[5], std::stol(f[2]), std::stol(f[3]), std::stol(f[4]),
                    std::stod(f[6])});
  }
  return rows;
}

}  // namespace

TEST_CASE("simulate writes a deterministic dataset with the documented layout") {
  const fs::path dir = fresh_dir("simulate");
  const fs::path cfg = write_config(dir, "sim.json", {{"simulator", "gmm"}, {"n", 40}});

  const CliRun a = run_cli(dir, "simulate --config " + cfg.string() + " --seed 11 --out " +
                                    (dir / "a").string());
  REQUIRE(a.exit_code == 0);
  const CliRun b = run_cli(dir, "simulate --config " + cfg.string() + " --seed 11 --out " +
                                    (dir / "b").string());
  REQUIRE(b.exit_code == 0);

  const std::string csv_a = slurp(dir / "a" / "dataset.csv");
  CHECK(csv_a == slurp(dir / "b" / "dataset.csv"));

  auto [cols, data] = ssnl::read_csv((dir / "a" / "dataset.csv").string());
  CHECK(cols == std::vector<std::string>{"theta_0", "theta_1", "y_0", "y_1"});
  CHECK(data.rows() == 40);
  CHECK(data.cols() == 4);

  const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest.at("seed") == 11);
  CHECK(manifest.at("files").at("dataset.csv") ==
        ssnl::file_checksum((dir / "a" / "dataset.csv").string()));

  // A different seed must change the data.
  const CliRun c = run_cli(dir, "simulate --config " + cfg.string() + " --seed 12 --out " +
                                    (dir / "c").string());
  REQUIRE(c.exit_code == 0);
  CHECK(csv_a != slurp(dir / "c" / "dataset.csv"));
}

TEST_CASE("config errors exit 1 and name the problem") {
  const fs::path dir = fresh_dir("config_errors");

  SECTION("unknown simulator lists the available ids") {
    const fs::path cfg = write_config(dir, "c.json", {{"simulator", "nope"}, {"n", 5}});
    const CliRun r = run_cli(dir, "simulate --config " + cfg.string() + " --out " + (dir / "o").string());
    CHECK(r.exit_code == 1);
    for (const std::string& id : {"gmm", "ou", "slcp", "lv", "sir", "beta_glm", "hyperboloid"})
      CHECK(r.err.find(id) != std::string::npos);
  }
  SECTION("unknown top-level key") {
    const fs::path cfg = write_config(dir, "c.json", {{"simulator", "gmm"}, {"n", 5}, {"typo", 1}});
    const CliRun r = run_cli(dir, "simulate --config " + cfg.string() + " --out " + (dir / "o").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("typo") != std::string::npos);
  }
  SECTION("unknown nested key") {
    json cfg = tiny_bench({"snl"});
    cfg["mcmc"]["stepss"] = 3;
    const fs::path p = write_config(dir, "c.json", cfg);
    const CliRun r = run_cli(dir, "benchmark --config " + p.string() + " --out " + (dir / "o").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("stepss") != std::string::npos);
  }
  SECTION("unknown method string") {
    json cfg = tiny_bench({"ssnl@0.33"});
    const fs::path p = write_config(dir, "c.json", cfg);
    const CliRun r = run_cli(dir, "benchmark --config " + p.string() + " --out " + (dir / "o").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("ssnl@0.33") != std::string::npos);
  }
  SECTION("malformed json") {
    const fs::path p = dir / "broken.json";
    ssnl::write_file(p.string(), "{\"simulator\": ");
    const CliRun r = run_cli(dir, "simulate --config " + p.string() + " --out " + (dir / "o").string());
    CHECK(r.exit_code == 1);
  }
  SECTION("missing config file") {
    const CliRun r = run_cli(dir, "simulate --config " + (dir / "absent.json").string() +
                                      " --out " + (dir / "o").string());
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("benchmark lays out artifacts and accounts for every round") {
  const fs::path dir = fresh_dir("bench_grid");
  const fs::path cfg = write_config(dir, "bench.json", tiny_bench({"snl", "ssnl@0.5"}));
  const fs::path out = dir / "runs";

  const CliRun r = run_cli(dir, "benchmark --config " + cfg.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);

  const fs::path base = out / "t";
  const std::vector<ResultRow> rows = read_results(base / "results.csv");

  // Two methods x two rounds, each with the always-on metric set.
  for (const std::string& m : {"snl", "ssnl@0.5"}) {
    for (long round : {1L, 2L}) {
      std::set<std::string> metrics;
      for (const ResultRow& row : rows)
        if (row.method == m && row.round == round) {
          CHECK(row.run == "t");
          CHECK(row.seed == 3);
          CHECK(row.budget == 120 * round);
          metrics.insert(row.metric);
        }
      CHECK(metrics == std::set<std::string>{"mse", "best_val_nll", "retries", "rhat_max"});
    }
    for (long round : {1L, 2L}) {
      const fs::path rd = base / m / "seed-3" / ("round-" + std::to_string(round));
      CHECK(fs::exists(rd / "dataset.csv"));
      CHECK(fs::exists(rd / "posterior.csv"));
      CHECK(fs::exists(rd / "checkpoint.json"));
      CHECK(fs::exists(rd / "report.json"));

      auto [dcols, ddata] = ssnl::read_csv((rd / "dataset.csv").string());
      CHECK(dcols.size() == 4);
      CHECK(ddata.rows() == 120);  // fresh simulations only, not the cumulative set
      auto [pcols, pdata] = ssnl::read_csv((rd / "posterior.csv").string());
      CHECK(pcols == std::vector<std::string>{"theta_0", "theta_1"});
      CHECK(pdata.rows() == 200);  // 2 chains x (160 - 60)
    }

    const json manifest = json::parse(slurp(base / m / "seed-3" / "manifest.json"));
    CHECK(manifest.at("total_sim_calls").get<std::size_t>() >= 240);
    for (const auto& [rel, sum] : manifest.at("files").items())
      CHECK(sum.get<std::string>() ==
            ssnl::file_checksum((base / m / "seed-3" / rel).string()));
  }

  const json run_manifest = json::parse(slurp(base / "manifest.json"));
  REQUIRE(run_manifest.at("cells").size() == 2);
  for (const json& cell : run_manifest.at("cells")) CHECK(cell.at("status") == "ok");
}

TEST_CASE("benchmark repeats and parallel runs are byte-identical") {
  const fs::path dir = fresh_dir("bench_repeat");
  const fs::path cfg = write_config(dir, "bench.json", tiny_bench({"snl", "ssnl@0.75"}));

  const CliRun a = run_cli(dir, "benchmark --config " + cfg.string() + " --out " + (dir / "a").string());
  REQUIRE(a.exit_code == 0);
  const CliRun b = run_cli(dir, "benchmark --config " + cfg.string() + " --out " + (dir / "b").string() +
                                    " --jobs 2");
  REQUIRE(b.exit_code == 0);

  for (const std::string& m : {"snl", "ssnl@0.75"})
    for (const std::string& f : {"round-1/dataset.csv", "round-1/posterior.csv",
                                 "round-1/checkpoint.json", "round-2/posterior.csv"}) {
      const fs::path rel = fs::path(m) / "seed-3" / f;
      CHECK(slurp(dir / "a" / "t" / rel) == slurp(dir / "b" / "t" / rel));
    }
  CHECK(slurp(dir / "a" / "t" / "results.csv") == slurp(dir / "b" / "t" / "results.csv"));
}

TEST_CASE("benchmark against a reference posterior emits divergence rows") {
  const fs::path dir = fresh_dir("bench_ref");

  // Long-run posterior for the same seed; the observation streams must agree.
  const fs::path ref_cfg = write_config(
      dir, "ref.json", {{"simulator", "gmm"}, {"chains", 4}, {"steps", 120}, {"burn_in", 70}});
  const CliRun ref = run_cli(dir, "reference --config " + ref_cfg.string() + " --seed 3 --out " +
                                      (dir / "ref").string());
  REQUIRE(ref.exit_code == 0);

  json bench = tiny_bench({"snl"});
  bench["rounds"] = 1;
  bench["metrics"] = {{"folds", 3}, {"subsample", 150}, {"reference", (dir / "ref" / "posterior.csv").string()}};
  const fs::path cfg = write_config(dir, "bench.json", bench);
  const CliRun r = run_cli(dir, "benchmark --config " + cfg.string() + " --out " + (dir / "runs").string());
  REQUIRE(r.exit_code == 0);

  const std::vector<ResultRow> rows = read_results(dir / "runs" / "t" / "results.csv");
  std::map<std::string, double> by_metric;
  for (const ResultRow& row : rows) by_metric[row.metric] = row.value;
  REQUIRE(by_metric.count("h_min") == 1);
  REQUIRE(by_metric.count("h_js") == 1);
  CHECK(by_metric["h_min"] >= 0.0);
  CHECK(by_metric["h_js"] >= 0.0);

  // Both commands drew the observation from the same per-seed stream.
  const json report = json::parse(slurp(dir / "ref" / "report.json"));
  const json manifest = json::parse(slurp(dir / "runs" / "t" / "snl" / "seed-3" / "manifest.json"));
  CHECK(report.at("theta_obs") == manifest.at("theta_obs"));
  CHECK(report.at("y_obs") == manifest.at("y_obs"));
}

TEST_CASE("a failing cell is contained and the run exits 2") {
  const fs::path dir = fresh_dir("bench_partial");
  // floor(0.25 * 2) = 0 latent dims: the ssnl@0.25 cell cannot build its flow.
  const fs::path cfg = write_config(dir, "bench.json", tiny_bench({"snl", "ssnl@0.25"}));
  const CliRun r = run_cli(dir, "benchmark --config " + cfg.string() + " --out " + (dir / "runs").string());
  CHECK(r.exit_code == 2);

  const json manifest = json::parse(slurp(dir / "runs" / "t" / "manifest.json"));
  std::map<std::string, std::string> status;
  for (const json& cell : manifest.at("cells"))
    status[cell.at("method").get<std::string>()] = cell.at("status").get<std::string>();
  CHECK(status.at("snl") == "ok");
  CHECK(status.at("ssnl@0.25") == "failed");

  // The healthy cell still produced rows; the failed one produced none.
  const std::vector<ResultRow> rows = read_results(dir / "runs" / "t" / "results.csv");
  CHECK_FALSE(rows.empty());
  for (const ResultRow& row : rows) CHECK(row.method == "snl");
}

TEST_CASE("auto reduction records the candidate losses and the winner") {
  const fs::path dir = fresh_dir("bench_auto");
  const fs::path cfg = write_config(dir, "bench.json", tiny_bench({"ssnl@auto"}));
  const CliRun r = run_cli(dir, "benchmark --config " + cfg.string() + " --out " + (dir / "runs").string());
  REQUIRE(r.exit_code == 0);

  const json manifest =
      json::parse(slurp(dir / "runs" / "t" / "ssnl@auto" / "seed-3" / "manifest.json"));
  const double chosen = manifest.at("reduction").get<double>();
  CHECK((chosen == 0.5 || chosen == 0.75));  // 0.25 keeps no coordinates of a 2-d y

  const json& sel = manifest.at("selection_val_nll");
  REQUIRE(sel.size() == 2);
  REQUIRE(sel.contains("0.5"));
  REQUIRE(sel.contains("0.75"));
  // Winner has the smallest validation loss; ties go to the larger fraction.
  const double v50 = sel.at("0.5").get<double>(), v75 = sel.at("0.75").get<double>();
  const double best = (v75 <= v50) ? 0.75 : 0.5;
  CHECK(chosen == best);
}

TEST_CASE("evaluate compares posterior files and reports mse against the truth") {
  const fs::path dir = fresh_dir("evaluate");
  const fs::path cfg = write_config(dir, "bench.json", tiny_bench({"snl"}));
  REQUIRE(run_cli(dir, "benchmark --config " + cfg.string() + " --out " + (dir / "runs").string())
              .exit_code == 0);
  const fs::path post = dir / "runs" / "t" / "snl" / "seed-3" / "round-2" / "posterior.csv";

  SECTION("a sample against itself matches an in-process evaluation") {
    const fs::path ec = write_config(dir, "eval.json",
                                     {{"p", post.string()}, {"q", post.string()}, {"folds", 3}});
    const CliRun r = run_cli(dir, "evaluate --config " + ec.string() + " --seed 1 --out " +
                                      (dir / "ev").string());
    REQUIRE(r.exit_code == 0);
    const json m = json::parse(slurp(dir / "ev" / "metrics.json"));

    // Inputs below the subsample cap pass through untouched, so the command
    // must reproduce a direct library call bit for bit. The tight identical-
    // sample floor is asserted on large samples with the estimator tests;
    // at this size the estimate sits above zero by size-dependent bias.
    auto [cols, draws] = ssnl::read_csv(post.string());
    (void)cols;
    ssnl::Rng fold_rng = ssnl::Rng(1).child(2);
    const ssnl::HDivergenceResult h = ssnl::h_divergences(draws, draws, fold_rng, 3);
    CHECK(m.at("d_min").get<double>() == h.d_min);
    CHECK(m.at("d_js").get<double>() == h.d_js);
    CHECK(m.at("d_min").get<double>() >= 0.0);
    CHECK(m.at("d_js").get<double>() >= 0.0);
    CHECK(m.at("h_p") == m.at("h_q"));  // same sample on both sides, shared folds
  }
  SECTION("mse matches an in-process evaluation bit for bit") {
    const std::vector<double> truth = {0.25, -1.5};
    const fs::path ec =
        write_config(dir, "eval.json", {{"p", post.string()}, {"theta_obs", truth}});
    const CliRun r = run_cli(dir, "evaluate --config " + ec.string() + " --out " + (dir / "ev").string());
    REQUIRE(r.exit_code == 0);
    const json m = json::parse(slurp(dir / "ev" / "metrics.json"));
    auto [cols, data] = ssnl::read_csv(post.string());
    CHECK(m.at("mse").get<double>() == ssnl::mse_to_truth(data, ssnl::Tensor::vec(truth)));
  }
  SECTION("a file without the theta header is rejected by name") {
    const fs::path dataset = dir / "runs" / "t" / "snl" / "seed-3" / "round-1" / "dataset.csv";
    const fs::path ec = write_config(dir, "eval.json",
                                     {{"p", dataset.string()}, {"theta_obs", {0.0, 0.0}}});
    const CliRun r = run_cli(dir, "evaluate --config " + ec.string() + " --out " + (dir / "ev").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("theta_2") != std::string::npos);
  }
  SECTION("dimension mismatches are named") {
    const fs::path ec = write_config(dir, "eval.json",
                                     {{"p", post.string()}, {"theta_obs", {0.0, 0.0, 0.0}}});
    const CliRun r = run_cli(dir, "evaluate --config " + ec.string() + " --out " + (dir / "ev").string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("dimension mismatch") != std::string::npos);
  }
  SECTION("needs q or theta_obs") {
    const fs::path ec = write_config(dir, "eval.json", {{"p", post.string()}});
    const CliRun r = run_cli(dir, "evaluate --config " + ec.string() + " --out " + (dir / "ev").string());
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("reference sampling is reproducible and flags intractable models") {
  const fs::path dir = fresh_dir("reference");
  const fs::path cfg = write_config(dir, "ref.json",
                                    {{"simulator", "ou"},
                                     {"simulator_config", {{"ou_length", 20}}},
                                     {"chains", 4},
                                     {"steps", 400},
                                     {"burn_in", 150}});

  const CliRun a = run_cli(dir, "reference --config " + cfg.string() + " --seed 5 --out " +
                                    (dir / "a").string());
  REQUIRE(a.exit_code == 0);
  const CliRun b = run_cli(dir, "reference --config " + cfg.string() + " --seed 5 --out " +
                                    (dir / "b").string());
  REQUIRE(b.exit_code == 0);
  CHECK(slurp(dir / "a" / "posterior.csv") == slurp(dir / "b" / "posterior.csv"));

  auto [cols, draws] = ssnl::read_csv((dir / "a" / "posterior.csv").string());
  CHECK(cols == std::vector<std::string>{"theta_0", "theta_1", "theta_2"});
  CHECK(draws.rows() == 4 * (400 - 150));

  const json report = json::parse(slurp(dir / "a" / "report.json"));
  REQUIRE(report.at("rhat").size() == 3);
  for (const json& r : report.at("rhat")) CHECK(r.get<double>() < 1.05);

  const fs::path lv_cfg = write_config(dir, "lv.json", {{"simulator", "lv"}});
  const CliRun lv = run_cli(dir, "reference --config " + lv_cfg.string() + " --out " + (dir / "lv").string());
  CHECK(lv.exit_code == 1);
  CHECK(lv.err.find("lv") != std::string::npos);
}

TEST_CASE("checkpoints round trip the surrogate bit for bit") {
  const fs::path dir = fresh_dir("checkpoint");

  ssnl::Rng rng(91);
  ssnl::FlowStack flow = ssnl::build_ssnl_flow(6, 3, 0.5, rng, {12, 12});
  flow.y_mean = ssnl::Tensor::vec({0.1, -0.2, 0.3, 1.0, -1.0, 0.5});
  flow.y_std = ssnl::Tensor::vec({1.1, 0.9, 2.0, 0.7, 1.3, 1.0});
  flow.th_mean = ssnl::Tensor::vec({0.0, 0.5, -0.5});
  flow.th_std = ssnl::Tensor::vec({1.0, 2.0, 0.5});

  const fs::path path = dir / "ck.json";
  ssnl::save_checkpoint(path.string(), flow);
  const ssnl::FlowStack loaded = ssnl::load_checkpoint(path.string());

  CHECK(loaded.kind == "ssnl");
  CHECK(loaded.d_in == 6);
  CHECK(loaded.theta_dim == 3);
  CHECK(loaded.reduction == 0.5);

  ssnl::Rng data_rng(17);
  ssnl::Tensor y({40, 6}), th({40, 3});
  for (double& v : y.data()) v = data_rng.normal();
  for (double& v : th.data()) v = data_rng.normal();
  const ssnl::Tensor lp_a = ssnl::flow_log_prob(flow, y, th);
  const ssnl::Tensor lp_b = ssnl::flow_log_prob(loaded, y, th);
  REQUIRE(lp_a.numel() == lp_b.numel());
  for (std::size_t i = 0; i < lp_a.numel(); ++i) CHECK(lp_a[i] == lp_b[i]);

  // Serialization is idempotent: saving the loaded model reproduces the file.
  const fs::path again = dir / "ck2.json";
  ssnl::save_checkpoint(again.string(), loaded);
  CHECK(slurp(path) == slurp(again));

  SECTION("version and shape problems are rejected") {
    json doc = json::parse(slurp(path));
    doc["format_version"] = 99;
    ssnl::write_file((dir / "bad1.json").string(), doc.dump());
    CHECK_THROWS_AS(ssnl::load_checkpoint((dir / "bad1.json").string()), ssnl::ConfigError);

    json trunc = json::parse(slurp(path));
    trunc["params"].erase(trunc["params"].size() - 1);
    ssnl::write_file((dir / "bad2.json").string(), trunc.dump());
    CHECK_THROWS_AS(ssnl::load_checkpoint((dir / "bad2.json").string()), ssnl::ConfigError);

    ssnl::write_file((dir / "bad3.json").string(), "{not json");
    CHECK_THROWS_AS(ssnl::load_checkpoint((dir / "bad3.json").string()), ssnl::ConfigError);
  }
}

TEST_CASE("csv io round trips doubles exactly and localizes parse errors") {
  const fs::path dir = fresh_dir("csv");
  const fs::path p = dir / "t.csv";

  ssnl::Tensor m({3, 2});
  m.at(0, 0) = 1.0 / 3.0;
  m.at(0, 1) = -0.0;
  m.at(1, 0) = 1e-300;
  m.at(1, 1) = 98765432109876544.0;
  m.at(2, 0) = -2.2250738585072014e-308;
  m.at(2, 1) = 0.1 + 0.2;
  ssnl::write_csv(p.string(), {"a", "b"}, m);

  auto [cols, back] = ssnl::read_csv(p.string());
  CHECK(cols == std::vector<std::string>{"a", "b"});
  REQUIRE(back.rows() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(back.at(i, j) == m.at(i, j));

  SECTION("bad cells name the line") {
    ssnl::write_file(p.string(), "a,b\n1.0,oops\n");
    try {
      ssnl::read_csv(p.string());
      FAIL("expected ConfigError");
    } catch (const ssnl::ConfigError& e) {
      CHECK(std::string(e.what()).find("oops") != std::string::npos);
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }
  SECTION("ragged rows are rejected") {
    ssnl::write_file(p.string(), "a,b\n1.0,2.0\n3.0\n");
    CHECK_THROWS_AS(ssnl::read_csv(p.string()), ssnl::ConfigError);
  }
  SECTION("checksums are stable and format-tagged") {
    ssnl::write_file(p.string(), "hello\n");
    const std::string sum = ssnl::file_checksum(p.string());
    CHECK(sum.rfind("fnv1a64:", 0) == 0);
    CHECK(sum.size() == 8 + 16);
    CHECK(sum == ssnl::checksum_hex("hello\n"));
  }
}
