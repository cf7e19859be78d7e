#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "ssnl/autodiff.hpp"
#include "ssnl/common.hpp"
#include "ssnl/rng.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

namespace detail {

// Conditioner output layers start at 1% of Glorot so a fresh network emits
// near-zero shifts and log-scales: a freshly built flow stays close to the
// identity map and keeps its mass where the base measure puts it.
constexpr double kOutputInitScale = 0.01;

inline std::shared_ptr<Tensor> glorot(std::size_t fan_out, std::size_t fan_in, Rng& rng,
                                      double scale = 1.0) {
  double b = scale * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto w = std::make_shared<Tensor>(std::vector<std::size_t>{fan_out, fan_in});
  if (fan_in > 0)
    for (double& v : w->data()) v = rng.uniform(-b, b);
  return w;
}

}  // namespace detail

// Plain feed-forward net: tanh hidden layers, linear output. Weights are
// stored [out x in] so a batched pass is x * W^T.
struct MlpParams {
  std::size_t d_in = 0, d_out = 0;
  std::vector<std::size_t> hidden;
  std::vector<std::shared_ptr<Tensor>> weights;
  std::vector<std::shared_ptr<Tensor>> biases;
};

inline MlpParams build_mlp(std::size_t d_in, std::vector<std::size_t> hidden, std::size_t d_out,
                           Rng& rng, double out_scale = 1.0) {
  if (d_out == 0) throw ConfigError("build_mlp: output width must be >= 1");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("build_mlp: hidden widths must be >= 1");
  MlpParams p;
  p.d_in = d_in;
  p.d_out = d_out;
  p.hidden = std::move(hidden);
  std::size_t prev = d_in;
  for (std::size_t h : p.hidden) {
    p.weights.push_back(detail::glorot(h, prev, rng));
    p.biases.push_back(std::make_shared<Tensor>(std::vector<std::size_t>{h}, 0.0));
    prev = h;
  }
  p.weights.push_back(detail::glorot(d_out, prev, rng, out_scale));
  p.biases.push_back(std::make_shared<Tensor>(std::vector<std::size_t>{d_out}, 0.0));
  return p;
}

// x: [n x d_in] -> [n x d_out].
inline Var mlp_forward(const MlpParams& p, const Var& x, Binder& bind) {
  if (x.t().rank() != 2 || x.t().cols() != p.d_in)
    throw ShapeError("mlp_forward: input " + shape_str(x.t()) + " does not match d_in " +
                     std::to_string(p.d_in));
  Var h = x;
  for (std::size_t l = 0; l + 1 < p.weights.size(); ++l)
    h = vtanh(add_rowvec(vmatmul_nt(h, bind(p.weights[l])), bind(p.biases[l])));
  return add_rowvec(vmatmul_nt(h, bind(p.weights.back())), bind(p.biases.back()));
}

// Masked autoregressive conditioner. The output layer emits 2*d_in
// values per sample, laid out [mu_1..mu_d, s_1..s_d]; coordinate i may
// depend only on inputs of strictly smaller degree and on context, which
// carries degree 0 and connects everywhere.
struct MadeParams {
  std::size_t d_in = 0, d_ctx = 0;
  std::vector<std::size_t> order;  // input degrees, a permutation of 1..d_in
  std::vector<std::vector<std::size_t>> hidden_degrees;
  std::vector<std::shared_ptr<Tensor>> weights;
  std::vector<std::shared_ptr<Tensor>> biases;
  std::vector<std::shared_ptr<const Tensor>> masks;
};

inline MadeParams build_made(std::size_t d_in, const std::vector<std::size_t>& hidden,
                             std::size_t d_ctx, std::vector<std::size_t> order, Rng& rng) {
  if (d_in == 0) throw ConfigError("build_made: d_in must be >= 1");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("build_made: hidden widths must be >= 1");
  if (order.empty()) {
    order.resize(d_in);
    for (std::size_t i = 0; i < d_in; ++i) order[i] = i + 1;
  }
  {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < d_in; ++i)
      if (sorted.size() != d_in || sorted[i] != i + 1)
        throw ConfigError("build_made: order must be a permutation of 1..d_in");
  }

  MadeParams p;
  p.d_in = d_in;
  p.d_ctx = d_ctx;
  p.order = std::move(order);

  // With a single data dimension no hidden unit may see data at all, so
  // the whole hidden stack runs at context level (degree 0).
  for (std::size_t h : hidden) {
    std::vector<std::size_t> deg(h, 0);
    if (d_in >= 2)
      for (std::size_t u = 0; u < h; ++u) deg[u] = 1 + (u % (d_in - 1));
    p.hidden_degrees.push_back(std::move(deg));
  }

  std::size_t prev_w = d_in + d_ctx;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const std::size_t h = hidden[l];
    p.weights.push_back(detail::glorot(h, prev_w, rng));
    p.biases.push_back(std::make_shared<Tensor>(std::vector<std::size_t>{h}, 0.0));
    auto mask = std::make_shared<Tensor>(std::vector<std::size_t>{h, prev_w}, 0.0);
    for (std::size_t u = 0; u < h; ++u) {
      std::size_t du = p.hidden_degrees[l][u];
      if (l == 0) {
        for (std::size_t j = 0; j < d_in; ++j)
          if (du >= p.order[j]) mask->at(u, j) = 1.0;
        for (std::size_t j = d_in; j < prev_w; ++j) mask->at(u, j) = 1.0;
      } else {
        for (std::size_t v = 0; v < prev_w; ++v)
          if (du >= p.hidden_degrees[l - 1][v]) mask->at(u, v) = 1.0;
      }
    }
    p.masks.push_back(std::move(mask));
    prev_w = h;
  }

  // Output layer: strict inequality so coordinate i never sees itself.
  const std::size_t d_out = 2 * d_in;
  p.weights.push_back(detail::glorot(d_out, prev_w, rng, detail::kOutputInitScale));
  p.biases.push_back(std::make_shared<Tensor>(std::vector<std::size_t>{d_out}, 0.0));
  auto mask = std::make_shared<Tensor>(std::vector<std::size_t>{d_out, prev_w}, 0.0);
  for (std::size_t i = 0; i < d_out; ++i) {
    std::size_t di = p.order[i % d_in];
    if (hidden.empty()) {
      // Degenerate no-hidden case: direct masked connection from inputs.
      for (std::size_t j = 0; j < d_in; ++j)
        if (di > p.order[j]) mask->at(i, j) = 1.0;
      for (std::size_t j = d_in; j < prev_w; ++j) mask->at(i, j) = 1.0;
    } else {
      const std::vector<std::size_t>& last_deg = p.hidden_degrees.back();
      for (std::size_t u = 0; u < prev_w; ++u)
        if (di > last_deg[u]) mask->at(i, u) = 1.0;
    }
  }
  p.masks.push_back(std::move(mask));
  return p;
}

// x: [n x d_in], ctx: [n x d_ctx] -> [n x 2 d_in] as [mu | s].
inline Var made_forward(const MadeParams& p, const Var& x, const Var& ctx, Binder& bind) {
  if (x.t().rank() != 2 || x.t().cols() != p.d_in)
    throw ShapeError("made_forward: input " + shape_str(x.t()) + " does not match d_in " +
                     std::to_string(p.d_in));
  if (ctx.t().rank() != 2 || ctx.t().cols() != p.d_ctx || ctx.t().rows() != x.t().rows())
    throw ShapeError("made_forward: context " + shape_str(ctx.t()) + " does not match d_ctx " +
                     std::to_string(p.d_ctx));
  Var h = p.d_ctx > 0 ? concat_cols(x, ctx) : x;
  for (std::size_t l = 0; l + 1 < p.weights.size(); ++l) {
    Var w = bind(p.weights[l]) * bind(p.masks[l]);
    h = vtanh(add_rowvec(vmatmul_nt(h, w), bind(p.biases[l])));
  }
  Var w = bind(p.weights.back()) * bind(p.masks.back());
  return add_rowvec(vmatmul_nt(h, w), bind(p.biases.back()));
}

inline void append_params(std::vector<std::shared_ptr<Tensor>>& out, const MlpParams& p) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    out.push_back(p.weights[l]);
    out.push_back(p.biases[l]);
  }
}

inline void append_params(std::vector<std::shared_ptr<Tensor>>& out, const MadeParams& p) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    out.push_back(p.weights[l]);
    out.push_back(p.biases[l]);
  }
}

inline std::size_t count_params(const std::vector<std::shared_ptr<Tensor>>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p->numel();
  return n;
}

}  // namespace ssnl
