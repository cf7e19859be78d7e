#pragma once

// Round-based inference loop: draw parameters, simulate, retrain the
// surrogate from scratch on everything seen so far, then slice-sample the
// surrogate posterior. The posterior bank of round r proposes the
// parameters of round r+1.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssnl/common.hpp"
#include "ssnl/flows.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/samplers.hpp"
#include "ssnl/simulators.hpp"
#include "ssnl/tensor.hpp"
#include "ssnl/train.hpp"

namespace ssnl {

struct MethodSpec {
  enum class Kind { Snl, Ssnl };
  Kind kind = Kind::Ssnl;
  double reduction = 0.75;      // retained fraction of the data dimension
  bool auto_reduction = false;  // grid-select the fraction after round 1, then freeze

  static MethodSpec snl() { return {Kind::Snl, 1.0, false}; }
  static MethodSpec ssnl(double reduction) { return {Kind::Ssnl, reduction, false}; }
  static MethodSpec ssnl_auto() { return {Kind::Ssnl, 0.0, true}; }

  std::string name() const { return kind == Kind::Snl ? "snl" : "ssnl"; }
};

struct SbiProblem {
  Prior prior;
  Simulator simulator;
  Tensor y_obs;  // observation the posterior conditions on, numel = simulator.y_dim
};

struct SequentialConfig {
  std::size_t rounds = 15;             // R
  std::size_t draws_per_round = 1000;  // N_R
  std::size_t max_retries = 100;       // failed simulations tolerated per draw slot
  std::vector<std::size_t> hidden = {50, 50};
  TrainConfig train;
  SliceConfig mcmc;
};

struct RoundState {
  std::size_t round = 0;  // 1-based
  Dataset fresh;          // this round's simulated block, draws_per_round rows
  FlowStack flow;         // trained on the cumulative data of rounds 1..round
  ChainSet chains;
  Tensor posterior;  // chains flattened, [kept x p], constrained space
};

struct RoundReport {
  std::size_t round = 0;
  std::size_t dataset_size = 0;  // cumulative rows after this round
  std::size_t sim_calls = 0;     // draws_per_round + retries
  std::size_t retries = 0;
  double reduction = 1.0;  // retained fraction in effect (1 for snl)
  double wall_seconds = 0.0;
  TrainReport train;
  std::vector<double> rhat;
};

struct SequentialResult {
  std::vector<RoundState> rounds;
  std::vector<RoundReport> reports;
  double reduction = 1.0;  // frozen fraction (1 for snl)
  std::size_t total_sim_calls = 0;
  std::size_t total_retries = 0;
  std::map<double, double> selection_val_nll;  // auto mode: candidate -> round-1 val NLL
};

namespace seq_detail {

// log q_f(y_obs | theta) + log p(theta); -inf outside the support or when the
// flow evaluation degenerates numerically, so MCMC treats both as zero mass.
inline double surrogate_lp(const FlowStack& flow, const Prior& prior, const Tensor& y_obs_row,
                           const Tensor& theta_row) {
  const double lp_prior = prior.log_pdf(theta_row);
  if (!std::isfinite(lp_prior)) return -std::numeric_limits<double>::infinity();
  try {
    const Tensor lq = flow_log_prob(flow, y_obs_row, theta_row);
    const double v = lq[0];
    if (!std::isfinite(v)) return -std::numeric_limits<double>::infinity();
    return v + lp_prior;
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

// Slice widths on the unconstrained scale, from the prior's own spread.
inline std::vector<double> default_widths(const Prior& prior) {
  std::vector<double> w(prior.dim());
  for (std::size_t i = 0; i < prior.dim(); ++i) {
    const auto& c = prior.coords[i];
    w[i] = c.family == Prior::Coord::Family::Uniform ? 2.0 : std::max(c.p2, 0.1);
  }
  return w;
}

}  // namespace seq_detail

inline double posterior_log_density(const RoundState& state, const SbiProblem& problem,
                                    const Tensor& theta) {
  const std::size_t p = problem.prior.dim();
  if (theta.numel() != p)
    throw ShapeError("posterior_log_density: theta has " + std::to_string(theta.numel()) +
                     " entries, expected " + std::to_string(p));
  if (!problem.prior.in_support(theta)) return -std::numeric_limits<double>::infinity();
  const Tensor th_row({1, p}, theta.data());
  const Tensor y_row({1, problem.y_obs.numel()}, problem.y_obs.data());
  return seq_detail::surrogate_lp(state.flow, problem.prior, y_row, th_row);
}

inline SequentialResult run_sequential(const SbiProblem& problem, const MethodSpec& method,
                                       const SequentialConfig& cfg, Rng& rng) {
  const std::size_t p = problem.prior.dim();
  const std::size_t d = problem.simulator.y_dim;
  if (p == 0) throw ConfigError("run_sequential: empty prior");
  if (problem.simulator.theta_dim != p)
    throw ConfigError("run_sequential: simulator wants theta dim " +
                      std::to_string(problem.simulator.theta_dim) + ", prior has " +
                      std::to_string(p));
  if (problem.y_obs.numel() != d)
    throw ShapeError("run_sequential: y_obs has " + std::to_string(problem.y_obs.numel()) +
                     " entries, simulator emits " + std::to_string(d));
  if (cfg.rounds < 1 || cfg.draws_per_round < 1)
    throw ConfigError("run_sequential: rounds and draws_per_round must be >= 1");

  // Candidate retained fractions; a fraction is usable only if it keeps at
  // least one coordinate.
  std::vector<double> candidates;
  if (method.kind == MethodSpec::Kind::Ssnl) {
    if (method.auto_reduction) {
      for (double c : {0.25, 0.5, 0.75})
        if (static_cast<std::size_t>(std::floor(c * static_cast<double>(d))) >= 1)
          candidates.push_back(c);
      if (d < 2 || candidates.empty())
        throw ConfigError("run_sequential: data dim " + std::to_string(d) +
                          " is too small for any surjective reduction");
    } else {
      Rng probe(0);
      (void)build_ssnl_flow(d, p, method.reduction, probe, cfg.hidden);  // validates only
      candidates.push_back(method.reduction);
    }
  }

  const Tensor y_obs_row({1, d}, problem.y_obs.data());
  const SupportTransform transform = problem.prior.transform();

  SliceConfig mcmc_cfg = cfg.mcmc;
  if (mcmc_cfg.init_width.empty()) mcmc_cfg.init_width = seq_detail::default_widths(problem.prior);

  SequentialResult result;
  result.reduction = method.kind == MethodSpec::Kind::Snl
                         ? 1.0
                         : (method.auto_reduction ? 0.0 : method.reduction);
  double frozen = method.auto_reduction ? 0.0 : method.reduction;

  Dataset data;      // cumulative
  Tensor bank;       // previous round's posterior draws
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const auto round_t0 = std::chrono::steady_clock::now();
    Rng round_rng = rng.child(r);
    Rng draw_rng = round_rng.child(0);
    Rng sim_rng = round_rng.child(1);
    Rng build_rng = round_rng.child(2);
    Rng train_rng = round_rng.child(3);
    Rng mcmc_rng = round_rng.child(4);

    // Round 1 proposes from the prior; later rounds resample the bank,
    // without replacement until it runs out.
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    if (r > 1) order = draw_rng.permutation(bank.rows());
    auto next_theta = [&]() -> Tensor {
      if (r == 1) return problem.prior.sample(draw_rng);
      const std::size_t idx =
          cursor < order.size() ? order[cursor++] : draw_rng.randint(bank.rows());
      std::vector<double> v(p);
      for (std::size_t j = 0; j < p; ++j) v[j] = bank.at(idx, j);
      return Tensor::vec(std::move(v));
    };

    std::size_t retries = 0;
    Tensor thetas({cfg.draws_per_round, p}), ys({cfg.draws_per_round, d});
    for (std::size_t i = 0; i < cfg.draws_per_round; ++i) {
      std::size_t attempts = 0;
      for (;;) {
        const Tensor th = next_theta();
        try {
          const Tensor y = problem.simulator.simulate(th, sim_rng);
          if (y.numel() != d)
            throw ShapeError("run_sequential: simulator emitted " + std::to_string(y.numel()) +
                             " values, expected " + std::to_string(d));
          if (!all_finite(y)) throw SimulationError("non-finite simulator output");
          for (std::size_t j = 0; j < p; ++j) thetas.at(i, j) = th[j];
          for (std::size_t j = 0; j < d; ++j) ys.at(i, j) = y[j];
          break;
        } catch (const SimulationError& e) {
          ++retries;
          if (++attempts > cfg.max_retries)
            throw SimulationError("round " + std::to_string(r) + ": draw " + std::to_string(i) +
                                  " still failing after " + std::to_string(cfg.max_retries) +
                                  " retries: " + e.what());
        }
      }
    }

    Dataset fresh = Dataset::of(std::move(ys), std::move(thetas));
    if (r == 1)
      data = fresh;
    else
      data.append(fresh);

    // Fresh flow every round; in auto mode round 1 trains one flow per
    // candidate fraction and the winner's fraction is frozen from then on.
    FlowStack flow;
    TrainReport t_report;
    double active = 1.0;
    try {
      if (method.kind == MethodSpec::Kind::Snl) {
        flow = build_snl_flow(d, p, build_rng, cfg.hidden);
        t_report = train(flow, data, cfg.train, train_rng);
      } else if (r == 1 && method.auto_reduction) {
        std::map<double, TrainReport> reports;
        std::map<double, FlowStack> flows;
        for (std::size_t k = 0; k < candidates.size(); ++k) {
          const double c = candidates[k];
          Rng b = build_rng.child(k);
          Rng t = train_rng.child(k);
          FlowStack f = build_ssnl_flow(d, p, c, b, cfg.hidden);
          reports[c] = train(f, data, cfg.train, t);
          flows.emplace(c, std::move(f));
        }
        frozen = select_reduction(reports);
        result.reduction = frozen;
        for (const auto& [c, rep] : reports) result.selection_val_nll[c] = rep.best_val_nll;
        flow = std::move(flows.at(frozen));
        t_report = reports.at(frozen);
        active = frozen;
      } else {
        flow = build_ssnl_flow(d, p, frozen, build_rng, cfg.hidden);
        t_report = train(flow, data, cfg.train, train_rng);
        active = frozen;
      }
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(r) + " training: " + e.what());
    }
    if (method.kind == MethodSpec::Kind::Snl) active = 1.0;

    TargetDensity target;
    target.dim = p;
    target.logp = [&flow, &problem, &transform, &y_obs_row, p](const std::vector<double>& u) {
      const std::vector<double> th = transform.constrain(u);
      const Tensor th_row({1, p}, th);
      const double lp = seq_detail::surrogate_lp(flow, problem.prior, y_obs_row, th_row);
      if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
      return lp + transform.log_jacobian(u);
    };

    // Chains start on parameters the surrogate has actually seen.
    std::vector<std::vector<double>> init_u(mcmc_cfg.n_chains);
    for (std::size_t c = 0; c < mcmc_cfg.n_chains; ++c) {
      const std::size_t row = mcmc_rng.randint(data.size());
      std::vector<double> th(p);
      for (std::size_t j = 0; j < p; ++j) th[j] = data.theta.at(row, j);
      init_u[c] = transform.unconstrain(th);
    }
    ChainSet chains = slice_sample(target, transform, mcmc_cfg, init_u, mcmc_rng);
    Tensor posterior = chains.flattened();
    std::vector<double> rhat;
    if (chains.chains.size() >= 2 && chains.chains.front().rows() >= 4)
      rhat = split_rhat(chains).rhat;

    RoundReport report;
    report.round = r;
    report.dataset_size = data.size();
    report.sim_calls = cfg.draws_per_round + retries;
    report.retries = retries;
    report.reduction = active;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - round_t0).count();
    report.train = t_report;
    report.rhat = std::move(rhat);
    result.total_sim_calls += report.sim_calls;
    result.total_retries += retries;
    result.reports.push_back(std::move(report));

    bank = posterior;
    RoundState state;
    state.round = r;
    state.fresh = std::move(fresh);
    state.flow = std::move(flow);
    state.chains = std::move(chains);
    state.posterior = std::move(posterior);
    result.rounds.push_back(std::move(state));
  }
  return result;
}

}  // namespace ssnl
