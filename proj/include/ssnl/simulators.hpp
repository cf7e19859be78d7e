#pragma once

// Benchmark generative models: priors, simulators, and exact likelihoods where
// the model admits one (slcp, ou, gmm, hyperboloid, beta_glm).  Every
// simulator is a pure function of (theta, rng stream).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ssnl/autodiff.hpp"
#include "ssnl/common.hpp"
#include "ssnl/ode.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/samplers.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

// Product prior with per-coordinate families.
struct Prior {
  struct Coord {
    enum class Family { Uniform, LogNormal, Normal };
    Family family = Family::Normal;
    double p1 = 0.0;  // uniform: lower bound; otherwise: mu of the (log-)normal
    double p2 = 1.0;  // uniform: upper bound; otherwise: sigma
  };
  std::vector<Coord> coords;

  static Coord uniform(double a, double b) {
    if (!(b > a)) throw ConfigError("prior: uniform requires a < b");
    return {Coord::Family::Uniform, a, b};
  }
  static Coord log_normal(double mu, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("prior: log-normal requires sigma > 0");
    return {Coord::Family::LogNormal, mu, sigma};
  }
  static Coord normal(double mu, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("prior: normal requires sigma > 0");
    return {Coord::Family::Normal, mu, sigma};
  }

  std::size_t dim() const { return coords.size(); }

  Tensor sample(Rng& rng) const {
    std::vector<double> v(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const Coord& c = coords[i];
      switch (c.family) {
        case Coord::Family::Uniform: v[i] = rng.uniform(c.p1, c.p2); break;
        case Coord::Family::LogNormal: v[i] = rng.lognormal(c.p1, c.p2); break;
        case Coord::Family::Normal: v[i] = rng.normal(c.p1, c.p2); break;
      }
    }
    return Tensor::vec(std::move(v));
  }

  bool in_support(const Tensor& theta) const {
    if (theta.numel() != coords.size())
      throw ShapeError("prior: theta has " + std::to_string(theta.numel()) +
                       " entries, expected " + std::to_string(coords.size()));
    for (std::size_t i = 0; i < coords.size(); ++i) {
      double x = theta.data()[i];
      if (!std::isfinite(x)) return false;
      const Coord& c = coords[i];
      if (c.family == Coord::Family::Uniform && !(x > c.p1 && x < c.p2)) return false;
      if (c.family == Coord::Family::LogNormal && !(x > 0.0)) return false;
    }
    return true;
  }

  double log_pdf(const Tensor& theta) const {
    if (!in_support(theta)) return -std::numeric_limits<double>::infinity();
    constexpr double half_log_2pi = 0.91893853320467274;
    double lp = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      double x = theta.data()[i];
      const Coord& c = coords[i];
      switch (c.family) {
        case Coord::Family::Uniform:
          lp -= std::log(c.p2 - c.p1);
          break;
        case Coord::Family::LogNormal: {
          double z = (std::log(x) - c.p1) / c.p2;
          lp += -std::log(x) - std::log(c.p2) - half_log_2pi - 0.5 * z * z;
          break;
        }
        case Coord::Family::Normal: {
          double z = (x - c.p1) / c.p2;
          lp += -std::log(c.p2) - half_log_2pi - 0.5 * z * z;
          break;
        }
      }
    }
    return lp;
  }

  // MCMC parameterization: box priors get a logit transform, positive-support
  // priors a log transform, unbounded priors none.
  SupportTransform transform() const {
    SupportTransform t;
    t.coords.resize(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const Coord& c = coords[i];
      switch (c.family) {
        case Coord::Family::Uniform:
          t.coords[i] = {SupportTransform::Kind::LogitBox, c.p1, c.p2};
          break;
        case Coord::Family::LogNormal:
          t.coords[i] = {SupportTransform::Kind::Log, 0.0, 0.0};
          break;
        case Coord::Family::Normal:
          t.coords[i] = {SupportTransform::Kind::Identity, 0.0, 0.0};
          break;
      }
    }
    return t;
  }
};

struct SimulatorConfig {
  std::size_t ou_length = 100;  // observations on the grid k * (ou_t_end / ou_length), k = 1..length
  double ou_t_end = 10.0;
  std::size_t lv_obs_per_species = 50;  // grid spans [0, 30] inclusive
  std::size_t sir_length = 100;         // grid spans [0, 160] inclusive
  std::size_t solar_length = 100;
  std::size_t hyperboloid_dim = 2;
  std::size_t beta_glm_theta_dim = 10;
  std::size_t beta_glm_y_dim = 100;
  double beta_glm_concentration = 10.0;
  std::uint64_t beta_glm_design_seed = 202406u;  // fixed design matrix draw
  OdeConfig ode;
};

struct Simulator {
  std::string id;
  std::size_t theta_dim = 0;
  std::size_t y_dim = 0;
  Prior prior;
  std::function<Tensor(const Tensor&, Rng&)> simulate;
  // log p(y | theta); empty std::function when the model is intractable.
  std::function<double(const Tensor&, const Tensor&)> exact_loglik;
  bool has_exact_loglik() const { return static_cast<bool>(exact_loglik); }
};

namespace sim_detail {

constexpr double kLog2Pi = 1.8378770664093453;

inline void check_dims(const char* who, const Tensor& theta, std::size_t p) {
  if (theta.numel() != p)
    throw ShapeError(std::string(who) + ": theta has " + std::to_string(theta.numel()) +
                     " entries, expected " + std::to_string(p));
}

inline void check_y(const char* who, const Tensor& y, std::size_t d) {
  if (y.numel() != d)
    throw ShapeError(std::string(who) + ": y has " + std::to_string(y.numel()) +
                     " entries, expected " + std::to_string(d));
}

inline double logsumexp2(double a, double b) {
  double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k)
    t[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1);
  t.back() = b;
  return t;
}

// 2x2 covariance of the slcp observation noise; adds jitter when the
// parameterization collapses it to a singular matrix.
struct Cov2 {
  double v11, v12, v22;
};

inline Cov2 slcp_cov(const Tensor& theta) {
  double s1 = theta.data()[2] * theta.data()[2];
  double s2 = theta.data()[3] * theta.data()[3];
  double rho = std::tanh(theta.data()[4]);
  Cov2 c{s1 * s1, rho * s1 * s2, s2 * s2};
  if (s1 * s2 == 0.0) {
    c.v11 += 1e-6;
    c.v22 += 1e-6;
    warn("slcp: singular covariance, added 1e-6 jitter");
  }
  return c;
}

inline double bivariate_normal_lp(double d1, double d2, const Cov2& c) {
  double det = c.v11 * c.v22 - c.v12 * c.v12;
  double quad = (c.v22 * d1 * d1 - 2.0 * c.v12 * d1 * d2 + c.v11 * d2 * d2) / det;
  return -kLog2Pi - 0.5 * std::log(det) - 0.5 * quad;
}

// Multivariate Student-t with isotropic scale sigma^2 I.
inline double mvt_lp(const std::vector<double>& y, double loc, std::size_t d, double nu,
                     double sigma) {
  double q = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double r = y[i] - loc;
    q += r * r;
  }
  double dd = static_cast<double>(d);
  return std::lgamma(0.5 * (nu + dd)) - std::lgamma(0.5 * nu) -
         0.5 * dd * std::log(nu * 3.141592653589793) - dd * std::log(sigma) -
         0.5 * (nu + dd) * std::log1p(q / (nu * sigma * sigma));
}

inline double isotropic_normal_lp(const std::vector<double>& y, const std::vector<double>& mu,
                                  std::size_t d, double sigma) {
  double q = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double r = y[i] - mu[i];
    q += r * r;
  }
  double dd = static_cast<double>(d);
  return -0.5 * dd * kLog2Pi - dd * std::log(sigma) - 0.5 * q / (sigma * sigma);
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline void check_ou_params(const Tensor& theta) {
  if (!(theta.data()[1] > 0.0))
    throw ConfigError("ou: reversion rate must be positive (stationary variance undefined)");
  if (!(theta.data()[2] > 0.0)) throw ConfigError("ou: diffusion scale must be positive");
}

}  // namespace sim_detail

// Exact transition likelihood of the mean-reverting diffusion observed on the
// uniform grid k * (t_end / y.numel()), k >= 1, started at zero.
inline double ou_exact_logpdf(const Tensor& y, const Tensor& theta, double t_end = 10.0) {
  sim_detail::check_dims("ou_exact_logpdf", theta, 3);
  if (y.numel() == 0) throw ShapeError("ou_exact_logpdf: empty observation");
  sim_detail::check_ou_params(theta);
  const double m = theta.data()[0], k = theta.data()[1], s = theta.data()[2];
  const double dt = t_end / static_cast<double>(y.numel());
  const double e = std::exp(-k * dt);
  const double var = s * s / (2.0 * k) * (1.0 - e * e);
  const double log_var = std::log(var);
  double lp = 0.0, prev = 0.0;
  for (std::size_t t = 0; t < y.numel(); ++t) {
    double mean = m + (prev - m) * e;
    double r = y.data()[t] - mean;
    lp += -0.5 * (sim_detail::kLog2Pi + log_var + r * r / var);
    prev = y.data()[t];
  }
  return lp;
}

// Tape-differentiable version of the same density; theta is a [1 x 3] row so
// reverse-mode gradients with respect to the parameters can be taken.
inline Var ou_exact_logpdf_v(const Tensor& y, Var theta, double t_end = 10.0) {
  if (!theta.v || theta.v->rank() != 2 || theta.v->rows() != 1 || theta.v->cols() != 3)
    throw ShapeError("ou_exact_logpdf_v: theta must be a [1 x 3] row");
  if (y.numel() == 0) throw ShapeError("ou_exact_logpdf_v: empty observation");
  const std::size_t T = y.numel();
  const double dt = t_end / static_cast<double>(T);

  Var th = theta;
  Var m = slice_cols(th, 0, 1);
  Var k = slice_cols(th, 1, 2);
  Var s = slice_cols(th, 2, 3);

  Var e = vexp(scale(k, -dt));
  Var one_minus_e2 = shift(scale(vsquare(e), -1.0), 1.0);
  Var variance = vsquare(s) / scale(k, 2.0) * one_minus_e2;

  Tensor y_row({1, T}, y.data());
  std::vector<double> prev_data(T);
  prev_data[0] = 0.0;
  for (std::size_t t = 1; t < T; ++t) prev_data[t] = y.data()[t - 1];
  Var y_obs = vconst(y_row);
  Var y_prev = vconst(Tensor({1, T}, std::move(prev_data)));

  Var mean = m + (y_prev - m) * e;
  Var resid2 = vsum(vsquare(y_obs - mean));
  const double Tf = static_cast<double>(T);
  Var lp = scale(resid2 / variance, -0.5) + scale(vlog(variance), -0.5 * Tf);
  return shift(lp, -0.5 * Tf * sim_detail::kLog2Pi);
}

// Saturation window of the solar dynamo recursion; bounded in [0, 1].
inline double solar_gate(double y) {
  constexpr double b1 = 0.6, w1 = 0.2, b2 = 1.0, w2 = 0.8;
  return 0.25 * (1.0 + std::erf((y - b1) / w1)) * (1.0 - std::erf((y - b2) / w2));
}

namespace sim_detail {

inline Simulator make_slcp() {
  Simulator s;
  s.id = "slcp";
  s.theta_dim = 5;
  s.y_dim = 8;
  s.prior.coords.assign(5, Prior::uniform(-3.0, 3.0));
  s.simulate = [](const Tensor& theta, Rng& rng) {
    check_dims("slcp", theta, 5);
    Cov2 c = slcp_cov(theta);
    double l11 = std::sqrt(c.v11);
    double l21 = c.v12 / l11;
    double l22 = std::sqrt(c.v22 - l21 * l21);
    std::vector<double> y(8);
    for (int j = 0; j < 4; ++j) {
      double z1 = rng.normal(), z2 = rng.normal();
      y[2 * j] = theta.data()[0] + l11 * z1;
      y[2 * j + 1] = theta.data()[1] + l21 * z1 + l22 * z2;
    }
    return Tensor::vec(std::move(y));
  };
  s.exact_loglik = [](const Tensor& y, const Tensor& theta) {
    check_y("slcp", y, 8);
    check_dims("slcp", theta, 5);
    Cov2 c = slcp_cov(theta);
    double lp = 0.0;
    for (int j = 0; j < 4; ++j)
      lp += bivariate_normal_lp(y.data()[2 * j] - theta.data()[0],
                                y.data()[2 * j + 1] - theta.data()[1], c);
    return lp;
  };
  return s;
}

inline Simulator make_ou(const SimulatorConfig& cfg) {
  if (cfg.ou_length < 1) throw ConfigError("ou: length must be at least 1");
  if (!(cfg.ou_t_end > 0.0)) throw ConfigError("ou: time horizon must be positive");
  Simulator s;
  s.id = "ou";
  s.theta_dim = 3;
  s.y_dim = cfg.ou_length;
  s.prior.coords = {Prior::uniform(0.0, 10.0), Prior::uniform(0.0, 5.0),
                    Prior::uniform(0.0, 2.0)};
  const std::size_t T = cfg.ou_length;
  const double t_end = cfg.ou_t_end;
  s.simulate = [T, t_end](const Tensor& theta, Rng& rng) {
    check_dims("ou", theta, 3);
    check_ou_params(theta);
    const double m = theta.data()[0], k = theta.data()[1], sdiff = theta.data()[2];
    const double dt = t_end / static_cast<double>(T);
    const double e = std::exp(-k * dt);
    const double sd = std::sqrt(sdiff * sdiff / (2.0 * k) * (1.0 - e * e));
    std::vector<double> y(T);
    double prev = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      prev = m + (prev - m) * e + sd * rng.normal();
      y[t] = prev;
    }
    return Tensor::vec(std::move(y));
  };
  s.exact_loglik = [T, t_end](const Tensor& y, const Tensor& theta) {
    check_y("ou", y, T);
    return ou_exact_logpdf(y, theta, t_end);
  };
  return s;
}

inline Simulator make_lv(const SimulatorConfig& cfg) {
  if (cfg.lv_obs_per_species < 2)
    throw ConfigError("lv: need at least 2 observations per species");
  Simulator s;
  s.id = "lv";
  s.theta_dim = 4;
  s.y_dim = 2 * cfg.lv_obs_per_species;
  s.prior.coords = {Prior::log_normal(-0.125, 0.5), Prior::log_normal(-3.0, 0.5),
                    Prior::log_normal(-0.125, 0.5), Prior::log_normal(-3.0, 0.5)};
  const std::size_t n_obs = cfg.lv_obs_per_species;
  const OdeConfig ode = cfg.ode;
  s.simulate = [n_obs, ode](const Tensor& theta, Rng& rng) {
    check_dims("lv", theta, 4);
    // Zero is allowed so the decoupled closed-form limits stay reachable.
    for (int j = 0; j < 4; ++j)
      if (!(theta.data()[j] >= 0.0)) throw ConfigError("lv: rates must be non-negative");
    const double a = theta.data()[0], b = theta.data()[1], g = theta.data()[2],
                 d = theta.data()[3];
    auto field = [&](double, const std::vector<double>& x, std::vector<double>& dx) {
      dx[0] = a * x[0] - b * x[0] * x[1];
      dx[1] = -g * x[1] + d * x[0] * x[1];
    };
    auto states = dopri_integrate(field, 0.0, {30.0, 1.0}, linspace(0.0, 30.0, n_obs), ode);
    constexpr double obs_scale = 0.1;
    std::vector<double> y(2 * n_obs);
    for (std::size_t sp = 0; sp < 2; ++sp)
      for (std::size_t t = 0; t < n_obs; ++t) {
        double x = states[t][sp];
        if (!(x > 0.0))
          throw SimulationError("lv: population collapsed to a non-positive value");
        y[sp * n_obs + t] = std::exp(std::log(x) + obs_scale * rng.normal());
      }
    return Tensor::vec(std::move(y));
  };
  return s;
}

inline Simulator make_sir(const SimulatorConfig& cfg) {
  if (cfg.sir_length < 2) throw ConfigError("sir: need at least 2 observations");
  Simulator s;
  s.id = "sir";
  s.theta_dim = 2;
  s.y_dim = cfg.sir_length;
  s.prior.coords = {Prior::log_normal(std::log(0.4), 0.5),
                    Prior::log_normal(std::log(0.125), 0.2)};
  const std::size_t n_obs = cfg.sir_length;
  const OdeConfig ode = cfg.ode;
  s.simulate = [n_obs, ode](const Tensor& theta, Rng& rng) {
    check_dims("sir", theta, 2);
    for (int j = 0; j < 2; ++j)
      if (!(theta.data()[j] >= 0.0)) throw ConfigError("sir: rates must be non-negative");
    constexpr double N = 1e6;
    const double beta = theta.data()[0], gamma = theta.data()[1];
    auto field = [&](double, const std::vector<double>& x, std::vector<double>& dx) {
      double infections = beta * x[0] * x[1] / N;
      dx[0] = -infections;
      dx[1] = infections - gamma * x[1];
      dx[2] = gamma * x[1];
    };
    auto states =
        dopri_integrate(field, 0.0, {N - 1.0, 1.0, 0.0}, linspace(0.0, 160.0, n_obs), ode);
    std::vector<double> y(n_obs);
    for (std::size_t t = 0; t < n_obs; ++t) {
      double p = states[t][1] / N;
      if (p < 0.0 || p > 1.0) {
        warn("sir: infectious fraction " + std::to_string(p) + " clamped to [0, 1]");
        p = std::min(1.0, std::max(0.0, p));
      }
      y[t] = static_cast<double>(rng.binomial(1000, p)) + rng.uniform();
    }
    return Tensor::vec(std::move(y));
  };
  return s;
}

inline Simulator make_beta_glm(const SimulatorConfig& cfg) {
  if (cfg.beta_glm_theta_dim < 1 || cfg.beta_glm_y_dim < 1)
    throw ConfigError("beta_glm: dimensions must be positive");
  if (!(cfg.beta_glm_concentration > 0.0))
    throw ConfigError("beta_glm: concentration must be positive");
  Simulator s;
  s.id = "beta_glm";
  s.theta_dim = cfg.beta_glm_theta_dim;
  s.y_dim = cfg.beta_glm_y_dim;
  s.prior.coords.assign(cfg.beta_glm_theta_dim, Prior::normal(0.0, 1.0));

  // Fixed design matrix, part of the model definition: drawn once from its own
  // seed so every run sees the same covariates.
  const std::size_t p = cfg.beta_glm_theta_dim, d = cfg.beta_glm_y_dim;
  auto design = std::make_shared<Tensor>(std::vector<std::size_t>{d, p});
  {
    Rng rng(cfg.beta_glm_design_seed);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < p; ++j) design->at(i, j) = rng.normal();
  }
  const double c = cfg.beta_glm_concentration;

  auto means = [design, p, d](const Tensor& theta) {
    std::vector<double> mu(d);
    for (std::size_t i = 0; i < d; ++i) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += design->at(i, j) * theta.data()[j];
      mu[i] = std::min(1.0 - 1e-9, std::max(1e-9, sigmoid(eta)));
    }
    return mu;
  };

  s.simulate = [means, p, d, c](const Tensor& theta, Rng& rng) {
    check_dims("beta_glm", theta, p);
    auto mu = means(theta);
    std::vector<double> y(d);
    for (std::size_t i = 0; i < d; ++i) {
      // Beta samples with one tiny shape parameter can round to exactly 0 or 1,
      // where the density has no finite log. Keep draws strictly interior.
      constexpr double y_eps = 1e-12;
      y[i] = std::clamp(rng.beta(mu[i] * c, (1.0 - mu[i]) * c), y_eps, 1.0 - y_eps);
    }
    return Tensor::vec(std::move(y));
  };
  s.exact_loglik = [means, p, d, c](const Tensor& y, const Tensor& theta) {
    check_y("beta_glm", y, d);
    check_dims("beta_glm", theta, p);
    auto mu = means(theta);
    double lp = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double yi = y.data()[i];
      if (!(yi > 0.0 && yi < 1.0)) return -std::numeric_limits<double>::infinity();
      double a = mu[i] * c, b = (1.0 - mu[i]) * c;
      lp += std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(yi) +
            (b - 1.0) * std::log(1.0 - yi);
    }
    return lp;
  };
  return s;
}

inline Simulator make_gmm() {
  Simulator s;
  s.id = "gmm";
  s.theta_dim = 2;
  s.y_dim = 2;
  s.prior.coords.assign(2, Prior::uniform(-10.0, 10.0));
  s.simulate = [](const Tensor& theta, Rng& rng) {
    check_dims("gmm", theta, 2);
    double sigma = rng.uniform() < 0.5 ? 1.0 : 0.1;
    return Tensor::vec({theta.data()[0] + sigma * rng.normal(),
                        theta.data()[1] + sigma * rng.normal()});
  };
  s.exact_loglik = [](const Tensor& y, const Tensor& theta) {
    check_y("gmm", y, 2);
    check_dims("gmm", theta, 2);
    double wide = isotropic_normal_lp(y.data(), theta.data(), 2, 1.0);
    double narrow = isotropic_normal_lp(y.data(), theta.data(), 2, 0.1);
    return logsumexp2(wide, narrow) + std::log(0.5);
  };
  return s;
}

inline Simulator make_hyperboloid(const SimulatorConfig& cfg) {
  if (cfg.hyperboloid_dim < 1) throw ConfigError("hyperboloid: dimension must be positive");
  Simulator s;
  s.id = "hyperboloid";
  s.theta_dim = 2;
  s.y_dim = cfg.hyperboloid_dim;
  s.prior.coords.assign(2, Prior::uniform(-2.0, 2.0));
  const std::size_t d = cfg.hyperboloid_dim;
  constexpr double nu = 3.0, sigma = 0.1;

  // Difference of distances to an anchor pair; the level sets are hyperbolas.
  auto range_diff = [](const Tensor& theta, double ax1, double ay1, double ax2, double ay2) {
    double t0 = theta.data()[0], t1 = theta.data()[1];
    return std::hypot(t0 - ax1, t1 - ay1) - std::hypot(t0 - ax2, t1 - ay2);
  };
  auto loc_a = [range_diff](const Tensor& th) { return range_diff(th, -0.5, 0.0, 0.5, 0.0); };
  auto loc_b = [range_diff](const Tensor& th) { return range_diff(th, 0.0, -0.5, 0.0, 0.5); };

  s.simulate = [loc_a, loc_b, d](const Tensor& theta, Rng& rng) {
    check_dims("hyperboloid", theta, 2);
    double loc = rng.uniform() < 0.5 ? loc_a(theta) : loc_b(theta);
    double w = rng.chisq(nu);
    double t_scale = sigma / std::sqrt(w / nu);
    std::vector<double> y(d);
    for (std::size_t i = 0; i < d; ++i) y[i] = loc + t_scale * rng.normal();
    return Tensor::vec(std::move(y));
  };
  s.exact_loglik = [loc_a, loc_b, d](const Tensor& y, const Tensor& theta) {
    check_y("hyperboloid", y, d);
    check_dims("hyperboloid", theta, 2);
    double lp_a = mvt_lp(y.data(), loc_a(theta), d, nu, sigma);
    double lp_b = mvt_lp(y.data(), loc_b(theta), d, nu, sigma);
    return logsumexp2(lp_a, lp_b) + std::log(0.5);
  };
  return s;
}

inline Simulator make_solar_dynamo(const SimulatorConfig& cfg) {
  if (cfg.solar_length < 1) throw ConfigError("solar_dynamo: length must be at least 1");
  Simulator s;
  s.id = "solar_dynamo";
  s.theta_dim = 3;
  s.y_dim = cfg.solar_length;
  s.prior.coords = {Prior::uniform(0.9, 1.4), Prior::uniform(0.05, 0.25),
                    Prior::uniform(0.02, 0.15)};
  const std::size_t T = cfg.solar_length;
  s.simulate = [T](const Tensor& theta, Rng& rng) {
    check_dims("solar_dynamo", theta, 3);
    const double lo = theta.data()[0], width = theta.data()[1], eps_max = theta.data()[2];
    std::vector<double> y(T);
    double prev = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      double alpha = rng.uniform(lo, lo + width);
      double eps = rng.uniform(0.0, eps_max);
      prev = alpha * solar_gate(prev) * prev + eps;
      y[t] = prev;
    }
    return Tensor::vec(std::move(y));
  };
  return s;
}

}  // namespace sim_detail

inline std::vector<std::string> simulator_ids() {
  return {"beta_glm", "gmm", "hyperboloid", "lv", "ou", "sir", "slcp", "solar_dynamo"};
}

inline Simulator make_simulator(const std::string& id, const SimulatorConfig& cfg = {}) {
  if (id == "slcp") return sim_detail::make_slcp();
  if (id == "ou") return sim_detail::make_ou(cfg);
  if (id == "lv") return sim_detail::make_lv(cfg);
  if (id == "sir") return sim_detail::make_sir(cfg);
  if (id == "beta_glm") return sim_detail::make_beta_glm(cfg);
  if (id == "gmm") return sim_detail::make_gmm();
  if (id == "hyperboloid") return sim_detail::make_hyperboloid(cfg);
  if (id == "solar_dynamo") return sim_detail::make_solar_dynamo(cfg);
  std::string msg = "unknown simulator '" + id + "'; available:";
  for (const auto& name : simulator_ids()) msg += " " + name;
  throw ConfigError(msg);
}

}  // namespace ssnl
