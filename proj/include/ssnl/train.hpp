#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssnl/autodiff.hpp"
#include "ssnl/common.hpp"
#include "ssnl/flows.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

// Matched (y, theta) rows. theta may be zero-width for unconditional
// density estimation.
struct Dataset {
  Tensor y;      // [n x D]
  Tensor theta;  // [n x p]

  std::size_t size() const { return y.rows(); }

  static Dataset of(Tensor y, Tensor theta) {
    if (y.rank() != 2 || theta.rank() != 2 || y.rows() != theta.rows())
      throw ShapeError("dataset: y and theta must be rank-2 with equal row counts");
    return Dataset{std::move(y), std::move(theta)};
  }

  Dataset gather(const std::vector<std::size_t>& idx) const {
    return Dataset{gather_rows(y, idx), gather_rows(theta, idx)};
  }

  void append(const Dataset& other) {
    if (other.y.cols() != y.cols() || other.theta.cols() != theta.cols())
      throw ShapeError("dataset: appended block has mismatched widths");
    auto push = [](Tensor& dst, const Tensor& src) {
      std::vector<double> d = dst.data();
      d.insert(d.end(), src.data().begin(), src.data().end());
      dst = Tensor({dst.rows() + src.rows(), dst.cols()}, std::move(d));
    };
    push(y, other.y);
    push(theta, other.theta);
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 100;
  std::size_t max_epochs = 2000;
  std::size_t patience = 10;  // epochs without strict val improvement
  double val_fraction = 0.1;
  double grad_clip_norm = 10.0;
};

struct TrainReport {
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_nll = std::numeric_limits<double>::infinity();
  std::vector<double> train_nll;
  std::vector<double> val_nll;
};

namespace detail {

inline void compute_standardization(const Tensor& x, Tensor& mean, Tensor& stdev) {
  const std::size_t n = x.rows(), d = x.cols();
  mean = Tensor({d}, 0.0);
  stdev = Tensor({d}, 1.0);
  if (n == 0) return;
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x.at(i, j);
    mean[j] = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double c = x.at(i, j) - mean[j];
      v += c * c;
    }
    // Near-constant coordinates get a unit scale instead of a blow-up.
    stdev[j] = std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);
  }
}

// Mean negative log-likelihood without recording, chunked to bound
// activation memory.
inline double eval_nll(const FlowStack& flow, const Dataset& data,
                       const std::vector<std::size_t>& idx) {
  const std::size_t chunk = 1000;
  double acc = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                  idx.begin() + static_cast<std::ptrdiff_t>(
                                                    std::min(start + chunk, idx.size())));
    Tensor lp = flow_log_prob(flow, gather_rows(data.y, part), gather_rows(data.theta, part));
    for (std::size_t i = 0; i < lp.numel(); ++i) acc -= lp[i];
  }
  return acc / static_cast<double>(idx.size());
}

}  // namespace detail

inline std::vector<Tensor> snapshot_params(const std::vector<std::shared_ptr<Tensor>>& ps) {
  std::vector<Tensor> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(*p);
  return out;
}

inline void restore_params(const std::vector<std::shared_ptr<Tensor>>& ps,
                           const std::vector<Tensor>& snap) {
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = snap[i];
}

// Maximum-likelihood fit of the flow on data, mutating the stack in
// place. Standardization statistics come from the training split only;
// early stopping restores the best-validation-epoch parameters.
inline TrainReport train(FlowStack& flow, const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw ConfigError("train: val_fraction must lie in (0, 1)");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0)
    throw ConfigError("train: batch_size and max_epochs must be >= 1");
  const std::size_t n = data.size();
  if (n < 2) throw ConfigError("train: need at least 2 samples, got " + std::to_string(n));

  std::vector<std::size_t> order = rng.permutation(n);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.val_fraction * static_cast<double>(n)));
  n_val = std::min(std::max<std::size_t>(n_val, 1), n - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                                     order.end());

  {
    Tensor ty = gather_rows(data.y, train_idx);
    detail::compute_standardization(ty, flow.y_mean, flow.y_std);
    Tensor tt = gather_rows(data.theta, train_idx);
    detail::compute_standardization(tt, flow.th_mean, flow.th_std);
  }

  auto params = flow.param_list();
  std::vector<Tensor> m, v;
  for (const auto& p : params) {
    m.emplace_back(p->shape(), 0.0);
    v.emplace_back(p->shape(), 0.0);
  }
  std::size_t step = 0;

  TrainReport report;
  std::vector<Tensor> best = snapshot_params(params);
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> sched = rng.permutation(train_idx.size());
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      std::vector<std::size_t> batch;
      const std::size_t end = std::min(start + cfg.batch_size, train_idx.size());
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(train_idx[sched[k]]);

      try {
        Tape tape;
        Binder bind{&tape};
        Var lp = flow_log_prob_v(flow, vconst(gather_rows(data.y, batch)),
                                 vconst(gather_rows(data.theta, batch)), bind);
        Var loss = -vmean(lp);
        tape.backward(loss);

        double sq_norm = 0.0;
        std::vector<const Tensor*> grads;
        grads.reserve(params.size());
        for (const auto& p : params) {
          const Tensor& g = tape.grad(bind(p));
          grads.push_back(&g);
          for (double x : g.data()) sq_norm += x * x;
        }
        double clip = 1.0;
        double norm = std::sqrt(sq_norm);
        if (norm > cfg.grad_clip_norm) clip = cfg.grad_clip_norm / norm;

        ++step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t k = 0; k < params.size(); ++k) {
          Tensor& pk = *params[k];
          const Tensor& g = *grads[k];
          for (std::size_t i = 0; i < pk.numel(); ++i) {
            double gi = g[i] * clip;
            m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * gi;
            v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * gi * gi;
            pk[i] -= cfg.learning_rate * (m[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + cfg.adam_eps);
          }
        }
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + ": " + e.what());
      }
    }

    double train_nll = detail::eval_nll(flow, data, train_idx);
    double val_nll = detail::eval_nll(flow, data, val_idx);
    report.train_nll.push_back(train_nll);
    report.val_nll.push_back(val_nll);
    report.epochs = epoch;

    if (val_nll < report.best_val_nll) {
      report.best_val_nll = val_nll;
      report.best_epoch = epoch;
      best = snapshot_params(params);
      stale = 0;
    } else {
      ++stale;
      if (stale >= cfg.patience) break;
    }
  }

  restore_params(params, best);
  return report;
}

// Lowest best-validation NLL wins; exact ties go to the larger retained
// fraction.
inline double select_reduction(const std::map<double, TrainReport>& reports) {
  if (reports.empty()) throw ConfigError("select_reduction: no candidates");
  double best_r = 0.0;
  double best_nll = std::numeric_limits<double>::infinity();
  for (const auto& [r, rep] : reports) {
    if (rep.best_val_nll < best_nll || (rep.best_val_nll == best_nll && r > best_r)) {
      best_nll = rep.best_val_nll;
      best_r = r;
    }
  }
  return best_r;
}

}  // namespace ssnl
