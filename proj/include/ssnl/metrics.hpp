#pragma once

// Posterior-quality metrics: H-Min / H-Jensen-Shannon divergences between two
// samples via cross-validated Gaussian KDE, and mean squared error against the
// generating parameter.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ssnl/common.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

inline std::vector<double> default_bandwidth_grid() {
  std::vector<double> g(50);
  for (int i = 0; i < 50; ++i) g[static_cast<std::size_t>(i)] = 0.1 * (i + 1);
  return g;
}

// Equal-weight mixture of isotropic Gaussian kernels on the support points.
struct KdeModel {
  Tensor points;     // [n x d]
  double bandwidth;  // kernel scale, > 0

  double log_pdf(const std::vector<double>& x) const {
    const std::size_t n = points.rows(), d = points.cols();
    if (x.size() != d) throw ShapeError("kde: query dimension mismatch");
    const double inv_2s2 = 1.0 / (2.0 * bandwidth * bandwidth);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> ex(n);
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double r = x[j] - points.at(i, j);
        d2 += r * r;
      }
      ex[i] = -d2 * inv_2s2;
      best = std::max(best, ex[i]);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(ex[i] - best);
    constexpr double half_log_2pi = 0.91893853320467274;
    return best + std::log(acc) - std::log(static_cast<double>(n)) -
           static_cast<double>(d) * (std::log(bandwidth) + half_log_2pi);
  }
};

struct KdeFit {
  double bandwidth;  // grid minimizer of mean eval NLL
  double nll;        // mean negative log-likelihood at that bandwidth, nats
};

namespace metric_detail {

// Row i holds squared distances from eval point i to every fit point.
inline Tensor pairwise_sq_dists(const Tensor& eval, const Tensor& fit) {
  const std::size_t m = eval.rows(), n = fit.rows(), d = eval.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double r = eval.at(i, j) - fit.at(k, j);
        acc += r * r;
      }
      out.at(i, k) = acc;
    }
  return out;
}

inline double mean_nll(const Tensor& d2, std::size_t d, std::size_t n_fit, double bw) {
  const double inv_2s2 = 1.0 / (2.0 * bw * bw);
  constexpr double half_log_2pi = 0.91893853320467274;
  const double norm = std::log(static_cast<double>(n_fit)) +
                      static_cast<double>(d) * (std::log(bw) + half_log_2pi);
  const std::size_t m = d2.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mn = d2.at(i, 0);
    for (std::size_t k = 1; k < n_fit; ++k) mn = std::min(mn, d2.at(i, k));
    double acc = 0.0;
    for (std::size_t k = 0; k < n_fit; ++k) acc += std::exp((mn - d2.at(i, k)) * inv_2s2);
    total += -(-mn * inv_2s2 + std::log(acc) - norm);
  }
  return total / static_cast<double>(m);
}

}  // namespace metric_detail

// Grid search for the bandwidth minimizing mean NLL of eval under a KDE fit on
// sample. Pairwise distances are computed once and shared across the grid.
inline KdeFit kde_fit_nll(const Tensor& sample, const Tensor& eval,
                          const std::vector<double>& grid = default_bandwidth_grid()) {
  if (sample.rank() != 2 || eval.rank() != 2)
    throw ShapeError("kde_fit_nll: want rank-2 sample and eval");
  if (sample.cols() != eval.cols())
    throw ShapeError("kde_fit_nll: dimension mismatch " + shape_str(sample) + " vs " +
                     shape_str(eval));
  if (sample.rows() < 1 || eval.rows() < 1)
    throw ConfigError("kde_fit_nll: sample and eval must be non-empty");
  if (grid.empty()) throw ConfigError("kde_fit_nll: bandwidth grid is empty");
  for (double bw : grid)
    if (!(bw > 0.0)) throw ConfigError("kde_fit_nll: bandwidths must be > 0");

  const Tensor d2 = metric_detail::pairwise_sq_dists(eval, sample);
  KdeFit best{grid.front(), std::numeric_limits<double>::infinity()};
  for (double bw : grid) {
    const double nll = metric_detail::mean_nll(d2, sample.cols(), sample.rows(), bw);
    if (nll < best.nll) best = {bw, nll};
  }
  return best;
}

struct HDivergenceResult {
  double d_min = 0.0;
  double d_js = 0.0;
  double h_p = 0.0;   // held-out entropy estimate of the first sample
  double h_q = 0.0;   // held-out entropy estimate of the second sample
  double h_mix = 0.0; // fold-averaged mixture entropy
  std::vector<double> fold_mixture_entropies;
  double bandwidth_p = 0.0;
  double bandwidth_q = 0.0;
  std::vector<double> fold_bandwidths;
};

namespace metric_detail {

// Shared mean/std over the union of both samples; a zero-spread coordinate
// keeps scale 1 so it simply contributes nothing to distances.
inline void joint_standardize(Tensor& p, Tensor& q) {
  const std::size_t d = p.cols(), np = p.rows(), nq = q.rows();
  const double n = static_cast<double>(np + nq);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < np; ++i) mean += p.at(i, j);
    for (std::size_t i = 0; i < nq; ++i) mean += q.at(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < np; ++i) var += (p.at(i, j) - mean) * (p.at(i, j) - mean);
    for (std::size_t i = 0; i < nq; ++i) var += (q.at(i, j) - mean) * (q.at(i, j) - mean);
    double sd = std::sqrt(var / n);
    if (!(sd > 0.0)) sd = 1.0;
    for (std::size_t i = 0; i < np; ++i) p.at(i, j) = (p.at(i, j) - mean) / sd;
    for (std::size_t i = 0; i < nq; ++i) q.at(i, j) = (q.at(i, j) - mean) / sd;
  }
}

// Random 80/20 split, then grid-searched held-out NLL.
inline KdeFit held_out_fit(const Tensor& x, const std::vector<double>& grid, Rng rng) {
  const std::size_t n = x.rows();
  const std::vector<std::size_t> perm = rng.permutation(n);
  const std::size_t n_fit = std::max<std::size_t>(1, (n * 8) / 10);
  std::vector<std::size_t> fit_idx(perm.begin(), perm.begin() + static_cast<long>(n_fit));
  std::vector<std::size_t> eval_idx(perm.begin() + static_cast<long>(n_fit), perm.end());
  if (eval_idx.empty()) eval_idx.push_back(perm.front());
  return kde_fit_nll(gather_rows(x, fit_idx), gather_rows(x, eval_idx), grid);
}

}  // namespace metric_detail

// H-Min and H-Jensen-Shannon divergences between two samples. Entropies are
// best-bandwidth held-out KDE NLLs; the mixture entropy averages `folds`
// balanced random subsample unions. Small negative estimates are noise and
// are clamped to zero with a warning.
inline HDivergenceResult h_divergences(const Tensor& p_in, const Tensor& q_in, Rng& rng,
                                       std::size_t folds = 5,
                                       const std::vector<double>& grid = default_bandwidth_grid()) {
  if (p_in.rank() != 2 || q_in.rank() != 2)
    throw ShapeError("h_divergences: want rank-2 samples");
  if (p_in.cols() != q_in.cols())
    throw ShapeError("h_divergences: dimension mismatch " + shape_str(p_in) + " vs " +
                     shape_str(q_in));
  if (p_in.rows() < 100 || q_in.rows() < 100)
    throw ConfigError("h_divergences: need at least 100 draws per sample");
  if (folds < 1) throw ConfigError("h_divergences: need at least one fold");

  Tensor p = p_in, q = q_in;
  metric_detail::joint_standardize(p, q);

  // Both arguments reuse the same child streams so that swapping P and Q
  // selects the same point sets everywhere; the divergences are then
  // symmetric up to summation order.
  HDivergenceResult r;
  const KdeFit fp = metric_detail::held_out_fit(p, grid, rng.child(0));
  const KdeFit fq = metric_detail::held_out_fit(q, grid, rng.child(0));
  r.h_p = fp.nll;
  r.h_q = fq.nll;
  r.bandwidth_p = fp.bandwidth;
  r.bandwidth_q = fq.bandwidth;

  // Per fold: subsample half of each side, then an 80/20 split stratified by
  // side, so fit and eval sets stay balanced unions.
  const std::size_t half = std::max<std::size_t>(2, std::min(p.rows(), q.rows()) / 2);
  const std::size_t keep = std::max<std::size_t>(1, (half * 8) / 10);
  const std::size_t d = p.cols();
  for (std::size_t f = 0; f < folds; ++f) {
    const Rng fold_rng = rng.child(100 + f);
    std::vector<std::size_t> ip = fold_rng.child(0).permutation(p.rows());
    std::vector<std::size_t> iq = fold_rng.child(0).permutation(q.rows());
    ip.resize(half);
    iq.resize(half);
    const std::vector<std::size_t> split = fold_rng.child(1).permutation(half);
    Tensor fit({2 * keep, d}), eval({2 * (half - keep), d});
    for (std::size_t i = 0; i < half; ++i) {
      const std::size_t rp = ip[split[i]], rq = iq[split[i]];
      Tensor& dst = i < keep ? fit : eval;
      const std::size_t row = i < keep ? i : i - keep;
      const std::size_t stride = i < keep ? keep : half - keep;
      for (std::size_t j = 0; j < d; ++j) {
        dst.at(row, j) = p.at(rp, j);
        dst.at(stride + row, j) = q.at(rq, j);
      }
    }
    const KdeFit fm = kde_fit_nll(fit, eval, grid);
    r.fold_mixture_entropies.push_back(fm.nll);
    r.fold_bandwidths.push_back(fm.bandwidth);
  }
  double acc = 0.0;
  for (double h : r.fold_mixture_entropies) acc += h;
  r.h_mix = acc / static_cast<double>(folds);

  r.d_min = r.h_mix - std::min(r.h_p, r.h_q);
  r.d_js = r.h_mix - 0.5 * (r.h_p + r.h_q);
  for (double* v : {&r.d_min, &r.d_js}) {
    if (*v < 0.0) {
      warn("h_divergences: clamping negative estimate " + std::to_string(*v) + " to 0");
      *v = 0.0;
    }
  }
  return r;
}

// Mean over samples of ||theta - theta_obs||^2 / p. Cross-method
// normalization (dividing by the best run) is the caller's job.
inline double mse_to_truth(const Tensor& samples, const Tensor& theta_obs) {
  if (samples.rank() != 2) throw ShapeError("mse_to_truth: want rank-2 samples");
  const std::size_t n = samples.rows(), p = samples.cols();
  if (n < 1) throw ConfigError("mse_to_truth: need at least one sample");
  if (theta_obs.numel() != p)
    throw ShapeError("mse_to_truth: dimension mismatch " + shape_str(samples) + " vs " +
                     shape_str(theta_obs));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double r = samples.at(i, j) - theta_obs[j];
      d2 += r * r;
    }
    total += d2 / static_cast<double>(p);
  }
  return total / static_cast<double>(n);
}

}  // namespace ssnl
