#pragma once

#include <cmath>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "ssnl/common.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

// Per-coordinate bijection between a prior's support and the real line.
// Slice sampling always runs unconstrained; draws map back exactly into
// the support (open intervals, so bounds are never hit).
struct SupportTransform {
  enum class Kind { Identity, Log, LogitBox };
  struct Coord {
    Kind kind = Kind::Identity;
    double a = 0.0, b = 0.0;  // box bounds for LogitBox
  };
  std::vector<Coord> coords;

  static SupportTransform identity(std::size_t dim) {
    SupportTransform t;
    t.coords.resize(dim);
    return t;
  }

  std::size_t dim() const { return coords.size(); }

  double to_unconstrained(double x, std::size_t i) const {
    const Coord& c = coords[i];
    switch (c.kind) {
      case Kind::Identity:
        return x;
      case Kind::Log:
        if (!(x > 0.0)) throw ConfigError("transform: log coordinate must be positive");
        return std::log(x);
      case Kind::LogitBox: {
        if (!(x > c.a && x < c.b))
          throw ConfigError("transform: box coordinate outside (" + std::to_string(c.a) + ", " +
                            std::to_string(c.b) + ")");
        double t = (x - c.a) / (c.b - c.a);
        return std::log(t / (1.0 - t));
      }
    }
    return x;
  }

  double to_constrained(double u, std::size_t i) const {
    const Coord& c = coords[i];
    switch (c.kind) {
      case Kind::Identity:
        return u;
      case Kind::Log:
        return std::exp(u);
      case Kind::LogitBox: {
        double s = u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
        return c.a + (c.b - c.a) * s;
      }
    }
    return u;
  }

  // log |dx/du| summed over coordinates, evaluated at unconstrained u.
  double log_jacobian(const std::vector<double>& u) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const Coord& c = coords[i];
      switch (c.kind) {
        case Kind::Identity:
          break;
        case Kind::Log:
          acc += u[i];
          break;
        case Kind::LogitBox: {
          // log(b-a) + log sigmoid(u) + log sigmoid(-u), computed stably.
          double au = std::abs(u[i]);
          acc += std::log(c.b - c.a) - au - 2.0 * std::log1p(std::exp(-au));
          break;
        }
      }
    }
    return acc;
  }

  std::vector<double> constrain(const std::vector<double>& u) const {
    std::vector<double> x(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) x[i] = to_constrained(u[i], i);
    return x;
  }

  std::vector<double> unconstrain(const std::vector<double>& x) const {
    std::vector<double> u(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) u[i] = to_unconstrained(x[i], i);
    return u;
  }
};

// Log-density over unconstrained coordinates; the callable must already
// fold in the prior and the transform Jacobian. Must be safe to call
// from several threads at once.
struct TargetDensity {
  std::size_t dim = 0;
  std::function<double(const std::vector<double>&)> logp;
};

struct SliceConfig {
  std::size_t n_chains = 4;
  std::size_t n_steps = 10000;
  std::size_t burn_in = 5000;
  std::size_t max_step_out = 50;   // interval expansions per side
  std::size_t max_shrink = 1000;   // shrink iterations before giving up
  std::vector<double> init_width;  // per-coordinate, unconstrained scale
};

// Retained draws in constrained space, one [kept x dim] block per chain.
struct ChainSet {
  std::vector<Tensor> chains;
  std::size_t dim = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& c : chains) n += c.rows();
    return n;
  }

  Tensor flattened() const {
    Tensor out({total(), dim});
    std::size_t r = 0;
    for (const auto& c : chains)
      for (std::size_t i = 0; i < c.rows(); ++i, ++r)
        for (std::size_t j = 0; j < dim; ++j) out.at(r, j) = c.at(i, j);
    return out;
  }
};

namespace detail {

// One univariate slice update (stepping-out then shrinkage), mutating
// u[j] in place. Returns the log-density at the accepted point.
inline double slice_update_coord(const TargetDensity& target, std::vector<double>& u,
                                 std::size_t j, double w, double logp_cur,
                                 const SliceConfig& cfg, Rng& rng) {
  if (!std::isfinite(logp_cur))
    throw NumericError("slice: non-finite target at current point, coordinate " +
                       std::to_string(j));
  const double level = logp_cur + std::log(1.0 - rng.uniform());  // log u01, u01 in (0,1]
  const double x0 = u[j];

  double lo = x0 - w * rng.uniform();
  double hi = lo + w;
  auto eval_at = [&](double x) {
    u[j] = x;
    double lp = target.logp(u);
    if (std::isnan(lp))
      throw NumericError("slice: target returned NaN at coordinate " + std::to_string(j));
    return lp;
  };
  for (std::size_t k = 0; k < cfg.max_step_out && eval_at(lo) > level; ++k) lo -= w;
  for (std::size_t k = 0; k < cfg.max_step_out && eval_at(hi) > level; ++k) hi += w;

  for (std::size_t k = 0; k < cfg.max_shrink; ++k) {
    double x1 = lo + (hi - lo) * rng.uniform();
    double lp = eval_at(x1);
    if (lp >= level) return lp;
    if (x1 < x0)
      lo = x1;
    else
      hi = x1;
  }
  throw NumericError("slice: shrinkage failed to find an acceptable point at coordinate " +
                     std::to_string(j));
}

inline void run_chain(const TargetDensity& target, const SupportTransform& transform,
                      const SliceConfig& cfg, std::vector<double> u, Rng rng, Tensor& out) {
  const std::size_t d = target.dim;
  double logp = target.logp(u);
  if (!std::isfinite(logp))
    throw NumericError("slice: target not finite at the chain's initial point");
  const std::size_t kept = cfg.n_steps - cfg.burn_in;
  out = Tensor({kept, d});
  std::size_t r = 0;
  for (std::size_t step = 0; step < cfg.n_steps; ++step) {
    std::vector<std::size_t> order = rng.permutation(d);
    for (std::size_t j : order)
      logp = slice_update_coord(target, u, j, cfg.init_width[j], logp, cfg, rng);
    if (step >= cfg.burn_in) {
      for (std::size_t j = 0; j < d; ++j) out.at(r, j) = transform.to_constrained(u[j], j);
      ++r;
    }
  }
}

}  // namespace detail

// Coordinate-wise slice sampling from cfg.n_chains starting points given
// in unconstrained space. Chains run on their own threads with derived
// RNG streams, so results do not depend on scheduling.
inline ChainSet slice_sample(const TargetDensity& target, const SupportTransform& transform,
                             const SliceConfig& cfg,
                             const std::vector<std::vector<double>>& init_u, Rng& rng) {
  if (target.dim == 0 || !target.logp) throw ConfigError("slice_sample: empty target");
  if (transform.dim() != target.dim)
    throw ConfigError("slice_sample: transform dim does not match target dim");
  if (cfg.n_steps <= cfg.burn_in)
    throw ConfigError("slice_sample: n_steps must exceed burn_in");
  if (cfg.init_width.size() != target.dim)
    throw ConfigError("slice_sample: init_width must have one entry per coordinate");
  for (double w : cfg.init_width)
    if (!(w > 0.0)) throw ConfigError("slice_sample: init widths must be positive");
  if (init_u.size() != cfg.n_chains)
    throw ConfigError("slice_sample: need one initial point per chain");

  ChainSet out;
  out.dim = target.dim;
  out.chains.resize(cfg.n_chains);
  std::vector<std::exception_ptr> errors(cfg.n_chains);
  std::vector<std::thread> threads;
  threads.reserve(cfg.n_chains);
  for (std::size_t c = 0; c < cfg.n_chains; ++c) {
    Rng chain_rng = rng.child(c);
    threads.emplace_back([&, c, chain_rng] {
      try {
        detail::run_chain(target, transform, cfg, init_u[c], chain_rng, out.chains[c]);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct RhatResult {
  std::vector<double> rhat;        // NaN where degenerate
  std::vector<bool> degenerate;    // true: zero within-half variance
};

// Split potential scale reduction: each chain is halved, and between- vs
// within-half variances are compared per parameter.
inline RhatResult split_rhat(const ChainSet& chains) {
  if (chains.chains.size() < 2) throw ConfigError("split_rhat: need at least 2 chains");
  std::size_t n = chains.chains[0].rows();
  for (const auto& c : chains.chains)
    if (c.rows() != n) throw ConfigError("split_rhat: chains must share a length");
  if (n < 4) throw ConfigError("split_rhat: need at least 4 draws per chain");
  const std::size_t half = n / 2;
  const std::size_t m = 2 * chains.chains.size();

  RhatResult res;
  res.rhat.resize(chains.dim);
  res.degenerate.resize(chains.dim);
  for (std::size_t j = 0; j < chains.dim; ++j) {
    std::vector<double> means(m, 0.0), vars(m, 0.0);
    std::size_t s = 0;
    for (const auto& c : chains.chains) {
      for (int piece = 0; piece < 2; ++piece, ++s) {
        const std::size_t off = piece == 0 ? 0 : half;
        double mu = 0.0;
        for (std::size_t i = 0; i < half; ++i) mu += c.at(off + i, j);
        mu /= static_cast<double>(half);
        double v = 0.0;
        for (std::size_t i = 0; i < half; ++i) {
          double d = c.at(off + i, j) - mu;
          v += d * d;
        }
        means[s] = mu;
        vars[s] = v / static_cast<double>(half - 1);
      }
    }
    double w = 0.0, grand = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      w += vars[k];
      grand += means[k];
    }
    w /= static_cast<double>(m);
    grand /= static_cast<double>(m);
    double b = 0.0;
    for (std::size_t k = 0; k < m; ++k) b += (means[k] - grand) * (means[k] - grand);
    b *= static_cast<double>(half) / static_cast<double>(m - 1);
    if (!(w > 0.0)) {
      res.rhat[j] = std::numeric_limits<double>::quiet_NaN();
      res.degenerate[j] = true;
      continue;
    }
    const double hn = static_cast<double>(half);
    double var_plus = (hn - 1.0) / hn * w + b / hn;
    res.rhat[j] = std::sqrt(var_plus / w);
    res.degenerate[j] = false;
  }
  return res;
}

}  // namespace ssnl
