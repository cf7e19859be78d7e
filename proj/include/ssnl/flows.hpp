#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ssnl/autodiff.hpp"
#include "ssnl/common.hpp"
#include "ssnl/nets.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

// Smooth clamp keeping |s| <= 5 so exp(s) cannot overflow early in
// training. Applied to the affine transformer's log-scale only; the
// surjection decoder's log-scale stays free.
constexpr double kScaleClamp = 5.0;

inline Var clamp_scale(const Var& s) {
  return scale(vtanh(scale(s, 1.0 / kScaleClamp)), kScaleClamp);
}
inline double clamp_scale(double s) { return kScaleClamp * std::tanh(s / kScaleClamp); }

// Affine masked autoregressive bijection. Inverse direction (density
// evaluation) is one parallel conditioner pass; forward direction
// (sampling) regenerates coordinate by coordinate.
struct AffineMafLayer {
  MadeParams conditioner;
  std::size_t dim() const { return conditioner.d_in; }
};

struct ReversePermutation {
  std::size_t dim = 0;
};

// Dimension-reducing layer: keeps the first n_keep coordinates through
// an inner bijection conditioned on [y_minus, theta]; models the dropped
// block with a diagonal Gaussian decoder conditioned on [z, theta].
struct SurjectionLayer {
  std::size_t dim = 0;     // input width D
  std::size_t n_keep = 0;  // retained width Q, 1 <= Q < D
  AffineMafLayer inner;
  MlpParams decoder;
};

using FlowLayer = std::variant<AffineMafLayer, ReversePermutation, SurjectionLayer>;

// y: [n x D] with context ctx: [n x d_ctx] -> (z: [n x D], log_det: [n]).
// log_det is of the inverse map, i.e. -sum_i s_i per row.
inline std::pair<Var, Var> maf_inverse(const AffineMafLayer& layer, const Var& y, const Var& ctx,
                                       Binder& bind) {
  const std::size_t d = layer.dim();
  Var out = made_forward(layer.conditioner, y, ctx, bind);
  Var mu = slice_cols(out, 0, d);
  Var s = clamp_scale(slice_cols(out, d, 2 * d));
  Var z = (y - mu) * vexp(-s);
  Var log_det = -row_sum(s);
  return {z, log_det};
}

// z: [n x D] -> y: [n x D], generating coordinates in degree order.
// Pure forward (no gradients); the sampling path never needs them.
inline Tensor maf_forward(const AffineMafLayer& layer, const Tensor& z, const Tensor& ctx) {
  const MadeParams& p = layer.conditioner;
  const std::size_t n = z.rows(), d = p.d_in;
  if (z.rank() != 2 || z.cols() != d) throw ShapeError("maf_forward: input " + shape_str(z));
  std::vector<std::size_t> pos(d);
  for (std::size_t j = 0; j < d; ++j) pos[p.order[j] - 1] = j;

  Binder bind;
  Var ctxv = vconst(ctx);
  Tensor y({n, d}, 0.0);
  for (std::size_t t = 0; t < d; ++t) {
    Var out = made_forward(p, vconst(y), ctxv, bind);
    const std::size_t j = pos[t];
    for (std::size_t i = 0; i < n; ++i) {
      double mu = out.t().at(i, j);
      double s = clamp_scale(out.t().at(i, d + j));
      y.at(i, j) = mu + std::exp(s) * z.at(i, j);
    }
  }
  return y;
}

// y: [n x D], theta: [n x t] -> (z: [n x Q], contribution: [n]) where the
// contribution is log p(y_minus | z, theta) plus the inner inverse
// log-determinant.
inline std::pair<Var, Var> surjection_inverse(const SurjectionLayer& layer, const Var& y,
                                              const Var& theta, Binder& bind) {
  const std::size_t q = layer.n_keep, d = layer.dim;
  Var y_plus = slice_cols(y, 0, q);
  Var y_minus = slice_cols(y, q, d);
  auto [z, log_det] = maf_inverse(layer.inner, y_plus, concat_cols(y_minus, theta), bind);
  Var dec = mlp_forward(layer.decoder, concat_cols(z, theta), bind);
  const std::size_t p = d - q;
  Var dmu = slice_cols(dec, 0, p);
  Var dls = slice_cols(dec, p, 2 * p);
  Var cond = row_sum(normal_logpdf(y_minus, dmu, dls));
  return {z, cond + log_det};
}

// z: [n x Q], theta: [n x t] -> y: [n x D]. Draws y_minus from the
// decoder first, then pushes z through the inner bijection given it.
inline Tensor surjection_forward_sample(const SurjectionLayer& layer, const Tensor& z,
                                        const Tensor& theta, Rng& rng) {
  Binder bind;
  const std::size_t n = z.rows(), q = layer.n_keep, p = layer.dim - layer.n_keep;
  Var dec = mlp_forward(layer.decoder, concat_cols(vconst(z), vconst(theta)), bind);
  Tensor y_minus({n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      y_minus.at(i, j) = dec.t().at(i, j) + std::exp(dec.t().at(i, p + j)) * rng.normal();
  Tensor ictx = concat_cols(vconst(y_minus), vconst(theta)).t();
  Tensor y_plus = maf_forward(layer.inner, z, ictx);
  (void)q;
  return concat_cols(vconst(y_plus), vconst(y_minus)).t();
}

// Conditional density estimator: layers applied data-to-latent in the
// stored order, standard normal base on the final latent block. The
// standardization vectors default to identity and are set by training.
struct FlowStack {
  std::size_t d_in = 0;
  std::size_t theta_dim = 0;
  std::size_t base_dim = 0;
  std::vector<FlowLayer> layers;

  // Architecture descriptor, enough to rebuild the stack before loading
  // weights. kind is "ssnl" or "snl"; reduction is the retained fraction
  // (unused for "snl").
  std::string kind = "custom";
  double reduction = 0.0;
  std::vector<std::size_t> hidden;

  Tensor y_mean, y_std, th_mean, th_std;

  void reset_standardization() {
    y_mean = Tensor({d_in}, 0.0);
    y_std = Tensor({d_in}, 1.0);
    th_mean = Tensor({theta_dim}, 0.0);
    th_std = Tensor({theta_dim}, 1.0);
  }

  std::vector<std::shared_ptr<Tensor>> param_list() const {
    std::vector<std::shared_ptr<Tensor>> ps;
    for (const auto& layer : layers) {
      if (const auto* maf = std::get_if<AffineMafLayer>(&layer)) {
        append_params(ps, maf->conditioner);
      } else if (const auto* surj = std::get_if<SurjectionLayer>(&layer)) {
        append_params(ps, surj->inner.conditioner);
        append_params(ps, surj->decoder);
      }
    }
    return ps;
  }
};

namespace detail {

inline Var standardize_rows(const Var& x, const Tensor& mean, const Tensor& stdev) {
  Tensor neg_mean({mean.numel()});
  Tensor inv_std({stdev.numel()});
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    if (!(stdev[i] > 0.0)) throw NumericError("standardize: non-positive scale");
    neg_mean[i] = -mean[i];
    inv_std[i] = 1.0 / stdev[i];
  }
  return mul_rowvec(add_rowvec(x, vconst(std::move(neg_mean))), vconst(std::move(inv_std)));
}

}  // namespace detail

// Batched conditional log-density: y [n x D], theta [n x t] -> [n].
inline Var flow_log_prob_v(const FlowStack& flow, Var y, Var theta, Binder& bind) {
  if (y.t().rank() != 2 || y.t().cols() != flow.d_in)
    throw ShapeError("flow_log_prob: y " + shape_str(y.t()) + " does not match data dim " +
                     std::to_string(flow.d_in));
  if (theta.t().rank() != 2 || theta.t().cols() != flow.theta_dim ||
      theta.t().rows() != y.t().rows())
    throw ShapeError("flow_log_prob: theta " + shape_str(theta.t()) + " does not match");

  double std_jacobian = 0.0;
  if (flow.y_mean.numel() == flow.d_in) {
    y = detail::standardize_rows(y, flow.y_mean, flow.y_std);
    for (std::size_t i = 0; i < flow.d_in; ++i) std_jacobian -= std::log(flow.y_std[i]);
  }
  if (flow.theta_dim > 0 && flow.th_mean.numel() == flow.theta_dim)
    theta = detail::standardize_rows(theta, flow.th_mean, flow.th_std);

  const std::size_t n = y.t().rows();
  Var acc = vconst(Tensor({n}, 0.0));
  for (std::size_t k = 0; k < flow.layers.size(); ++k) {
    try {
      if (const auto* maf = std::get_if<AffineMafLayer>(&flow.layers[k])) {
        if (y.t().cols() != maf->dim()) throw ShapeError("width " + shape_str(y.t()));
        auto [z, ld] = maf_inverse(*maf, y, theta, bind);
        y = z;
        acc = acc + ld;
      } else if (const auto* perm = std::get_if<ReversePermutation>(&flow.layers[k])) {
        if (y.t().cols() != perm->dim) throw ShapeError("width " + shape_str(y.t()));
        y = reverse_cols(y);
      } else {
        const auto& surj = std::get<SurjectionLayer>(flow.layers[k]);
        if (y.t().cols() != surj.dim) throw ShapeError("width " + shape_str(y.t()));
        auto [z, contrib] = surjection_inverse(surj, y, theta, bind);
        y = z;
        acc = acc + contrib;
      }
    } catch (const NumericError& e) {
      throw NumericError("flow layer " + std::to_string(k) + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError("flow layer " + std::to_string(k) + ": " + e.what());
    }
  }
  if (y.t().cols() != flow.base_dim)
    throw ShapeError("flow_log_prob: latent width " + shape_str(y.t()) + " does not match base dim " +
                     std::to_string(flow.base_dim));

  constexpr double kHalfLog2Pi = 0.9189385332046727;
  Var base = shift(scale(row_sum(vsquare(y)), -0.5),
                   -kHalfLog2Pi * static_cast<double>(flow.base_dim));
  return shift(acc + base, std_jacobian);
}

inline Tensor flow_log_prob(const FlowStack& flow, const Tensor& y, const Tensor& theta) {
  Binder bind;
  return flow_log_prob_v(flow, vconst(y), vconst(theta), bind).t();
}

// Draw n conditional samples, one per row of theta.
inline Tensor flow_sample(const FlowStack& flow, const Tensor& theta, Rng& rng) {
  if (theta.rank() != 2 || theta.cols() != flow.theta_dim)
    throw ShapeError("flow_sample: theta " + shape_str(theta));
  const std::size_t n = theta.rows();
  Tensor ths = theta;
  if (flow.theta_dim > 0 && flow.th_mean.numel() == flow.theta_dim)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < flow.theta_dim; ++j)
        ths.at(i, j) = (ths.at(i, j) - flow.th_mean[j]) / flow.th_std[j];

  Tensor y = rng.normal_tensor({n, flow.base_dim});
  for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
    if (const auto* maf = std::get_if<AffineMafLayer>(&*it)) {
      y = maf_forward(*maf, y, ths);
    } else if (std::get_if<ReversePermutation>(&*it)) {
      Tensor rev(y.shape());
      const std::size_t m = y.cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) rev.at(i, j) = y.at(i, m - 1 - j);
      y = rev;
    } else {
      y = surjection_forward_sample(std::get<SurjectionLayer>(*it), y, ths, rng);
    }
  }
  if (flow.y_mean.numel() == flow.d_in)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < flow.d_in; ++j)
        y.at(i, j) = y.at(i, j) * flow.y_std[j] + flow.y_mean[j];
  return y;
}

inline FlowStack build_snl_flow(std::size_t d, std::size_t theta_dim, Rng& rng,
                                std::vector<std::size_t> hidden = {50, 50}) {
  if (d < 1) throw ConfigError("build_snl_flow: data dim must be >= 1");
  FlowStack f;
  f.d_in = d;
  f.theta_dim = theta_dim;
  f.base_dim = d;
  f.kind = "snl";
  f.hidden = hidden;
  for (int k = 0; k < 5; ++k) {
    if (k > 0) f.layers.push_back(ReversePermutation{d});
    f.layers.push_back(AffineMafLayer{build_made(d, hidden, theta_dim, {}, rng)});
  }
  f.reset_standardization();
  return f;
}

// Five affine layers with the middle one surjective; reduction is the
// retained fraction, so the latent keeps floor(reduction * d) coords.
inline FlowStack build_ssnl_flow(std::size_t d, std::size_t theta_dim, double reduction, Rng& rng,
                                 std::vector<std::size_t> hidden = {50, 50}) {
  if (d < 2) throw ConfigError("build_ssnl_flow: data dim must be >= 2");
  const bool known = std::abs(reduction - 0.25) < 1e-12 || std::abs(reduction - 0.5) < 1e-12 ||
                     std::abs(reduction - 0.75) < 1e-12;
  if (!known)
    throw ConfigError("build_ssnl_flow: reduction must be one of 0.25, 0.5, 0.75, got " +
                      std::to_string(reduction));
  const std::size_t q = static_cast<std::size_t>(std::floor(reduction * static_cast<double>(d)));
  if (q < 1)
    throw ConfigError("build_ssnl_flow: floor(reduction * d) = 0; data dim too small for " +
                      std::to_string(reduction));

  FlowStack f;
  f.d_in = d;
  f.theta_dim = theta_dim;
  f.base_dim = q;
  f.kind = "ssnl";
  f.reduction = reduction;
  f.hidden = hidden;

  f.layers.push_back(AffineMafLayer{build_made(d, hidden, theta_dim, {}, rng)});
  f.layers.push_back(ReversePermutation{d});
  f.layers.push_back(AffineMafLayer{build_made(d, hidden, theta_dim, {}, rng)});
  f.layers.push_back(ReversePermutation{d});

  SurjectionLayer surj;
  surj.dim = d;
  surj.n_keep = q;
  surj.inner = AffineMafLayer{build_made(q, hidden, (d - q) + theta_dim, {}, rng)};
  surj.decoder = build_mlp(q + theta_dim, hidden, 2 * (d - q), rng, detail::kOutputInitScale);
  f.layers.push_back(std::move(surj));

  f.layers.push_back(ReversePermutation{q});
  f.layers.push_back(AffineMafLayer{build_made(q, hidden, theta_dim, {}, rng)});
  f.layers.push_back(ReversePermutation{q});
  f.layers.push_back(AffineMafLayer{build_made(q, hidden, theta_dim, {}, rng)});

  f.reset_standardization();
  return f;
}

}  // namespace ssnl
