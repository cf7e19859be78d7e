#pragma once

// Dormand-Prince 5(4) embedded Runge-Kutta integrator with a 4th-order
// continuous extension for dense output at requested grid times.
// Coefficients follow Hairer, Norsett & Wanner, "Solving ODEs I", DOPRI5.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ssnl/common.hpp"

namespace ssnl {

struct OdeConfig {
  double rtol = 1e-6;
  double atol = 1e-8;
  std::size_t max_steps = 100000;
};

namespace ode_detail {

inline bool finite_vec(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace ode_detail

// Integrates dy/dt = field(t, y) from (t0, y0) and returns the state at every
// grid time.  field must have signature
//   void field(double t, const std::vector<double>& y, std::vector<double>& dy)
// with dy pre-sized to y.size().  Grid times must be strictly increasing and
// no earlier than t0; a grid time equal to t0 yields y0 itself.  Grid values
// inside a step come from the standard DOPRI5 dense-output polynomial.
template <typename Field>
std::vector<std::vector<double>> dopri_integrate(Field&& field, double t0,
                                                 const std::vector<double>& y0,
                                                 const std::vector<double>& t_grid,
                                                 const OdeConfig& cfg = {}) {
  if (!(cfg.rtol > 0.0) || !(cfg.atol > 0.0))
    throw ConfigError("dopri_integrate: tolerances must be positive");
  if (cfg.max_steps == 0) throw ConfigError("dopri_integrate: max_steps must be positive");
  if (y0.empty()) throw ConfigError("dopri_integrate: empty initial state");
  if (!std::isfinite(t0) || !ode_detail::finite_vec(y0))
    throw ConfigError("dopri_integrate: non-finite initial condition");
  if (t_grid.empty()) throw ConfigError("dopri_integrate: empty time grid");
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    if (!std::isfinite(t_grid[k])) throw ConfigError("dopri_integrate: non-finite grid time");
    if (k > 0 && !(t_grid[k] > t_grid[k - 1]))
      throw ConfigError("dopri_integrate: grid times must be strictly increasing");
  }
  if (t_grid.front() < t0)
    throw ConfigError("dopri_integrate: grid starts before the initial time");

  // Butcher tableau.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                   a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  // Embedded 4th-order error weights.
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  // Dense-output weights.
  constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                   d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                   d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
  // Step-size controller (Lund stabilization as in Hairer's DOPR5).
  constexpr double safe = 0.9, fac_min = 0.2, fac_max = 10.0, beta = 0.04;
  constexpr double expo1 = 0.2 - beta * 0.75;
  constexpr double uround = 2.3e-16;

  const std::size_t n = y0.size();
  const double t_end = t_grid.back();

  std::vector<std::vector<double>> out;
  out.reserve(t_grid.size());
  std::size_t next_grid = 0;
  while (next_grid < t_grid.size() && t_grid[next_grid] <= t0) {
    out.push_back(y0);  // only t_grid[0] == t0 can land here (strictly increasing grid)
    ++next_grid;
  }
  if (next_grid == t_grid.size()) return out;

  std::vector<double> y = y0, y1(n), ysti(n);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  double t = t0;

  auto eval = [&](double tt, const std::vector<double>& yy, std::vector<double>& dyy) {
    field(tt, yy, dyy);
    if (!ode_detail::finite_vec(dyy))
      throw SimulationError("dopri_integrate: non-finite derivative at t=" + std::to_string(tt));
  };

  eval(t, y, k1);

  // Initial step size: Hairer's two-phase heuristic.
  double h;
  {
    double dnf = 0.0, dny = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sk = cfg.atol + cfg.rtol * std::fabs(y[i]);
      dnf += (k1[i] / sk) * (k1[i] / sk);
      dny += (y[i] / sk) * (y[i] / sk);
    }
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * std::sqrt(dny / dnf);
    h = std::min(h, t_end - t0);
    for (std::size_t i = 0; i < n; ++i) y1[i] = y[i] + h * k1[i];
    eval(t + h, y1, k2);
    double der2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sk = cfg.atol + cfg.rtol * std::fabs(y[i]);
      double diff = (k2[i] - k1[i]) / sk;
      der2 += diff * diff;
    }
    der2 = std::sqrt(der2) / h;
    double der12 = std::max(der2, std::sqrt(dnf));
    double h1 = (der12 <= 1e-15) ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.2);
    h = std::min({100.0 * h, h1, t_end - t0});
  }

  double fac_old = 1e-4;
  bool rejected = false;
  std::size_t n_steps = 0;

  while (next_grid < t_grid.size()) {
    if (n_steps >= cfg.max_steps)
      throw SimulationError("dopri_integrate: exceeded " + std::to_string(cfg.max_steps) +
                            " steps at t=" + std::to_string(t));
    if (!(h > std::fabs(t) * uround * 10.0) || !(h > 0.0))
      throw SimulationError("dopri_integrate: step size underflow at t=" + std::to_string(t));
    bool last = false;
    if (t + 1.01 * h >= t_end) {
      h = t_end - t;
      last = true;
    }
    ++n_steps;

    for (std::size_t i = 0; i < n; ++i) y1[i] = y[i] + h * a21 * k1[i];
    eval(t + c2 * h, y1, k2);
    for (std::size_t i = 0; i < n; ++i) y1[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    eval(t + c3 * h, y1, k3);
    for (std::size_t i = 0; i < n; ++i)
      y1[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    eval(t + c4 * h, y1, k4);
    for (std::size_t i = 0; i < n; ++i)
      y1[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    eval(t + c5 * h, y1, k5);
    for (std::size_t i = 0; i < n; ++i)
      ysti[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    eval(t + h, ysti, k6);
    for (std::size_t i = 0; i < n; ++i)
      y1[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    eval(t + h, y1, k7);  // FSAL: reused as k1 of the next step

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double est = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                        e7 * k7[i]);
      double sk = cfg.atol + cfg.rtol * std::max(std::fabs(y[i]), std::fabs(y1[i]));
      err += (est / sk) * (est / sk);
    }
    err = std::sqrt(err / static_cast<double>(n));
    if (!std::isfinite(err))
      throw SimulationError("dopri_integrate: non-finite error estimate at t=" +
                            std::to_string(t));

    double fac11 = std::pow(err, expo1);
    double fac = fac11 / std::pow(fac_old, beta);
    fac = std::max(1.0 / fac_max, std::min(1.0 / fac_min, fac / safe));
    double h_new = h / fac;

    if (err <= 1.0) {
      fac_old = std::max(err, 1e-4);
      // Dense-output polynomial over [t, t+h] before advancing.
      while (next_grid < t_grid.size() && t_grid[next_grid] <= t + h) {
        double s = (t_grid[next_grid] - t) / h;
        double s1 = 1.0 - s;
        std::vector<double> yi(n);
        for (std::size_t i = 0; i < n; ++i) {
          double ydiff = y1[i] - y[i];
          double bspl = h * k1[i] - ydiff;
          double cont3 = ydiff - h * k7[i] - bspl;
          double cont4 = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] +
                              d7 * k7[i]);
          yi[i] = y[i] + s * (ydiff + s1 * (bspl + s * (cont3 + s1 * cont4)));
        }
        out.push_back(std::move(yi));
        ++next_grid;
      }
      std::swap(k1, k7);
      std::swap(y, y1);
      t += h;
      if (last && next_grid >= t_grid.size()) break;
      if (rejected) h_new = std::min(h_new, h);
      rejected = false;
    } else {
      h_new = h / std::min(1.0 / fac_min, fac11 / safe);
      rejected = true;
    }
    h = h_new;
  }
  return out;
}

}  // namespace ssnl
