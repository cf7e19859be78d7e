#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssnl/common.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

class Tape;

// Value in a computation. id == -1 means constant (no gradient slot);
// tape == nullptr means the value is outside any recording, which is the
// cheap pure-forward path used by samplers.
struct Var {
  std::shared_ptr<const Tensor> v;
  int id = -1;
  Tape* tape = nullptr;

  const Tensor& t() const { return *v; }
  double value() const { return v->value(); }
};

inline Var vconst(Tensor t) { return Var{std::make_shared<Tensor>(std::move(t)), -1, nullptr}; }
inline Var vconst(double x) { return vconst(Tensor::scalar(x)); }
inline Var vconst(std::shared_ptr<const Tensor> t) { return Var{std::move(t), -1, nullptr}; }

// Reverse-mode tape over tensor ops. Each op pushes one closure; inputs
// are always created before outputs, so running closures in reverse push
// order is a valid topological sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(std::shared_ptr<const Tensor> t) {
    if (!all_finite(*t)) throw NumericError("leaf: non-finite input");
    int id = alloc(*t);
    return Var{std::move(t), id, this};
  }
  Var leaf(Tensor t) { return leaf(std::make_shared<const Tensor>(std::move(t))); }

  int alloc(const Tensor& like) {
    grads_.emplace_back(like.shape(), 0.0);
    return static_cast<int>(grads_.size()) - 1;
  }

  void push(std::function<void(Tape&)> node) { nodes_.push_back(std::move(node)); }

  void backward(const Var& loss) {
    if (loss.tape != this || loss.id < 0)
      throw Error("backward: loss is not recorded on this tape");
    if (loss.v->numel() != 1) throw ShapeError("backward: loss must be a scalar");
    for (auto& g : grads_) g.fill(0.0);
    grads_[static_cast<std::size_t>(loss.id)].data()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
  }

  const Tensor& grad(const Var& v) const {
    if (v.tape != this || v.id < 0) throw Error("grad: variable is not recorded on this tape");
    return grads_[static_cast<std::size_t>(v.id)];
  }

  // Internal: adjoint slot for node id. Exposed for op closures.
  Tensor& slot(int id) { return grads_[static_cast<std::size_t>(id)]; }

  void accum(int id, const Tensor& g) {
    if (id < 0) return;
    Tensor& dst = grads_[static_cast<std::size_t>(id)];
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  friend struct Var;
  std::vector<Tensor> grads_;
  std::vector<std::function<void(Tape&)>> nodes_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  if (!all_finite(t)) throw NumericError(std::string(op) + ": produced a non-finite value");
}

inline Tape* joint_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape && b.tape && a.tape != b.tape)
    throw Error(std::string(op) + ": operands recorded on different tapes");
  return a.tape ? a.tape : b.tape;
}

// Elementwise binary with scalar broadcast on either side. dfa/dfb give
// the partial wrt each operand as a function of (a_i, b_i, y_i).
template <class F, class DA, class DB>
Var binary_op(const Var& a, const Var& b, const char* name, F f, DA dfa, DB dfb) {
  const Tensor& ta = *a.v;
  const Tensor& tb = *b.v;
  const bool as = ta.numel() == 1, bs = tb.numel() == 1;
  if (!as && !bs && ta.shape() != tb.shape())
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
  // Both single-element: keep the higher-rank shape so [1x1] wins over rank 0.
  const Tensor& shape_src = !as ? ta : (!bs ? tb : (ta.rank() >= tb.rank() ? ta : tb));
  auto out = std::make_shared<Tensor>(shape_src.shape());
  const std::size_t n = out->numel();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = f(ta[as ? 0 : i], tb[bs ? 0 : i]);
  check_finite(*out, name);

  Tape* tp = joint_tape(a, b, name);
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([av = a.v, bv = b.v, out, aid = a.id, bid = b.id, rid = r.id, as, bs, dfa,
              dfb](Tape& t) {
      const Tensor& g = t.slot(rid);
      const std::size_t n = g.numel();
      if (aid >= 0) {
        Tensor& da = t.slot(aid);
        if (as) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            s += g[i] * dfa((*av)[0], (*bv)[bs ? 0 : i], (*out)[i]);
          da[0] += s;
        } else {
          for (std::size_t i = 0; i < n; ++i)
            da[i] += g[i] * dfa((*av)[i], (*bv)[bs ? 0 : i], (*out)[i]);
        }
      }
      if (bid >= 0) {
        Tensor& db = t.slot(bid);
        if (bs) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            s += g[i] * dfb((*av)[as ? 0 : i], (*bv)[0], (*out)[i]);
          db[0] += s;
        } else {
          for (std::size_t i = 0; i < n; ++i)
            db[i] += g[i] * dfb((*av)[as ? 0 : i], (*bv)[i], (*out)[i]);
        }
      }
    });
  }
  return r;
}

// Elementwise unary; df receives (x_i, y_i).
template <class F, class DF>
Var unary_op(const Var& a, const char* name, F f, DF df) {
  auto out = std::make_shared<Tensor>(a.v->shape());
  const std::size_t n = out->numel();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = f((*a.v)[i]);
  check_finite(*out, name);
  Var r{out, -1, a.tape};
  if (a.tape) {
    r.id = a.tape->alloc(*out);
    a.tape->push([av = a.v, out, aid = a.id, rid = r.id, df](Tape& t) {
      if (aid < 0) return;
      const Tensor& g = t.slot(rid);
      Tensor& da = t.slot(aid);
      for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i] * df((*av)[i], (*out)[i]);
    });
  }
  return r;
}

}  // namespace detail

// Maps shared parameter tensors to Vars. With a tape, each parameter
// becomes one leaf (memoized, so repeated use shares a gradient slot);
// without one, parameters pass through as constants and evaluation is
// pure forward.
struct Binder {
  Tape* tape = nullptr;
  std::unordered_map<const Tensor*, Var> cache;

  Var operator()(const std::shared_ptr<Tensor>& p) {
    if (!tape) return Var{p, -1, nullptr};
    auto it = cache.find(p.get());
    if (it != cache.end()) return it->second;
    Var v = tape->leaf(std::shared_ptr<const Tensor>(p));
    cache.emplace(p.get(), v);
    return v;
  }
  Var operator()(const std::shared_ptr<const Tensor>& p) const { return Var{p, -1, nullptr}; }
};

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Var operator-(const Var& a, const Var& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Var operator*(const Var& a, const Var& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Var operator/(const Var& a, const Var& b) {
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

// Affine with plain doubles: no extra nodes beyond one unary.
inline Var scale(const Var& a, double c) {
  return detail::unary_op(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}
inline Var shift(const Var& a, double c) {
  return detail::unary_op(
      a, "shift", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
inline Var operator-(const Var& a) { return scale(a, -1.0); }

inline Var vtanh(const Var& a) {
  return detail::unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var vexp(const Var& a) {
  return detail::unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var vlog(const Var& a) {
  return detail::unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var vsigmoid(const Var& a) {
  return detail::unary_op(
      a, "sigmoid",
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var verf(const Var& a) {
  return detail::unary_op(
      a, "erf", [](double x) { return std::erf(x); },
      [](double x, double) { return 1.1283791670955126 * std::exp(-x * x); });
}

inline Var vsquare(const Var& a) {
  return detail::unary_op(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// y = a * b with a [n x k], b [k x m].
inline Var vmatmul(const Var& a, const Var& b) {
  Tensor out_t = matmul_raw(*a.v, *b.v);
  detail::check_finite(out_t, "matmul");
  Tape* tp = detail::joint_tape(a, b, "matmul");
  auto out = std::make_shared<Tensor>(std::move(out_t));
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([av = a.v, bv = b.v, aid = a.id, bid = b.id, rid = r.id](Tape& t) {
      const Tensor& g = t.slot(rid);
      if (aid >= 0) t.accum(aid, matmul_nt_raw(g, *bv));
      if (bid >= 0) t.accum(bid, matmul_tn_raw(*av, g));
    });
  }
  return r;
}

// y = a * b^T with a [n x p], b [q x p]. This is the layout used by
// weight matrices stored as [out x in].
inline Var vmatmul_nt(const Var& a, const Var& b) {
  Tensor out_t = matmul_nt_raw(*a.v, *b.v);
  detail::check_finite(out_t, "matmul_nt");
  Tape* tp = detail::joint_tape(a, b, "matmul_nt");
  auto out = std::make_shared<Tensor>(std::move(out_t));
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([av = a.v, bv = b.v, aid = a.id, bid = b.id, rid = r.id](Tape& t) {
      const Tensor& g = t.slot(rid);
      if (aid >= 0) t.accum(aid, matmul_raw(g, *bv));
      if (bid >= 0) t.accum(bid, matmul_tn_raw(g, *av));
    });
  }
  return r;
}

// Broadcast a length-m vector across the rows of an [n x m] matrix.
inline Var add_rowvec(const Var& a, const Var& b) {
  const Tensor& ta = *a.v;
  const Tensor& tb = *b.v;
  if (ta.rank() != 2 || tb.rank() != 1 || ta.cols() != tb.rows())
    throw ShapeError("add_rowvec: want [n x m] + [m], got " + shape_str(ta) + " + " + shape_str(tb));
  auto out = std::make_shared<Tensor>(ta.shape());
  const std::size_t n = ta.rows(), m = ta.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out->at(i, j) = ta.at(i, j) + tb[j];
  detail::check_finite(*out, "add_rowvec");
  Tape* tp = detail::joint_tape(a, b, "add_rowvec");
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([aid = a.id, bid = b.id, rid = r.id, n, m](Tape& t) {
      const Tensor& g = t.slot(rid);
      if (aid >= 0) t.accum(aid, g);
      if (bid >= 0) {
        Tensor& db = t.slot(bid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) db[j] += g.at(i, j);
      }
    });
  }
  return r;
}

inline Var vsum(const Var& a) {
  double s = 0.0;
  for (double x : a.v->data()) s += x;
  auto out = std::make_shared<Tensor>(Tensor::scalar(s));
  detail::check_finite(*out, "sum");
  Var r{out, -1, a.tape};
  if (a.tape) {
    r.id = a.tape->alloc(*out);
    a.tape->push([aid = a.id, rid = r.id, n = a.v->numel()](Tape& t) {
      if (aid < 0) return;
      double g = t.slot(rid)[0];
      Tensor& da = t.slot(aid);
      for (std::size_t i = 0; i < n; ++i) da[i] += g;
    });
  }
  return r;
}

inline Var vmean(const Var& a) {
  if (a.v->numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(vsum(a), 1.0 / static_cast<double>(a.v->numel()));
}

// [n x m] -> [n], summing each row.
inline Var row_sum(const Var& a) {
  const Tensor& ta = *a.v;
  if (ta.rank() != 2) throw ShapeError("row_sum: want rank-2, got " + shape_str(ta));
  const std::size_t n = ta.rows(), m = ta.cols();
  auto out = std::make_shared<Tensor>(std::vector<std::size_t>{n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += ta.at(i, j);
    (*out)[i] = s;
  }
  detail::check_finite(*out, "row_sum");
  Var r{out, -1, a.tape};
  if (a.tape) {
    r.id = a.tape->alloc(*out);
    a.tape->push([aid = a.id, rid = r.id, n, m](Tape& t) {
      if (aid < 0) return;
      const Tensor& g = t.slot(rid);
      Tensor& da = t.slot(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) da[i * m + j] += g[i];
    });
  }
  return r;
}

// Stable log-sum-exp over each row of an [n x m] matrix.
inline Var logsumexp_rows(const Var& a) {
  const Tensor& ta = *a.v;
  if (ta.rank() != 2 || ta.cols() == 0)
    throw ShapeError("logsumexp_rows: want [n x m] with m >= 1, got " + shape_str(ta));
  const std::size_t n = ta.rows(), m = ta.cols();
  auto out = std::make_shared<Tensor>(std::vector<std::size_t>{n});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = ta.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, ta.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(ta.at(i, j) - mx);
    (*out)[i] = mx + std::log(s);
  }
  detail::check_finite(*out, "logsumexp_rows");
  Var r{out, -1, a.tape};
  if (a.tape) {
    r.id = a.tape->alloc(*out);
    a.tape->push([av = a.v, out, aid = a.id, rid = r.id, n, m](Tape& t) {
      if (aid < 0) return;
      const Tensor& g = t.slot(rid);
      Tensor& da = t.slot(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          da[i * m + j] += g[i] * std::exp(av->at(i, j) - (*out)[i]);
    });
  }
  return r;
}

// Elementwise Gaussian log-density with the scale given on log scale:
// lp = -log(2*pi)/2 - ls - (x - mu)^2 * exp(-2 ls) / 2. Fused so the
// standardized residual is computed once.
inline Var normal_logpdf(const Var& x, const Var& mu, const Var& ls) {
  const Tensor& tx = *x.v;
  if (tx.shape() != mu.v->shape() || tx.shape() != ls.v->shape())
    throw ShapeError("normal_logpdf: x, mu, log-scale must share a shape");
  constexpr double kHalfLog2Pi = 0.9189385332046727;
  auto out = std::make_shared<Tensor>(tx.shape());
  const std::size_t n = tx.numel();
  for (std::size_t i = 0; i < n; ++i) {
    double w = (tx[i] - (*mu.v)[i]) * std::exp(-(*ls.v)[i]);
    (*out)[i] = -kHalfLog2Pi - (*ls.v)[i] - 0.5 * w * w;
  }
  detail::check_finite(*out, "normal_logpdf");
  Tape* tp = detail::joint_tape(x, mu, "normal_logpdf");
  if (!tp) tp = ls.tape;
  if (ls.tape && tp != ls.tape) throw Error("normal_logpdf: operands recorded on different tapes");
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([xv = x.v, mv = mu.v, sv = ls.v, xid = x.id, mid = mu.id, sid = ls.id,
              rid = r.id](Tape& t) {
      const Tensor& g = t.slot(rid);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double inv_s = std::exp(-(*sv)[i]);
        double w = ((*xv)[i] - (*mv)[i]) * inv_s;
        if (xid >= 0) t.slot(xid)[i] += g[i] * (-w * inv_s);
        if (mid >= 0) t.slot(mid)[i] += g[i] * (w * inv_s);
        if (sid >= 0) t.slot(sid)[i] += g[i] * (w * w - 1.0);
      }
    });
  }
  return r;
}

// [n x p] ++ [n x q] -> [n x (p+q)]. Zero-width blocks are fine.
inline Var concat_cols(const Var& a, const Var& b) {
  const Tensor& ta = *a.v;
  const Tensor& tb = *b.v;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows())
    throw ShapeError("concat_cols: want same row count, got " + shape_str(ta) + " and " + shape_str(tb));
  const std::size_t n = ta.rows(), p = ta.cols(), q = tb.cols();
  auto out = std::make_shared<Tensor>(std::vector<std::size_t>{n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) out->at(i, j) = ta.at(i, j);
    for (std::size_t j = 0; j < q; ++j) out->at(i, p + j) = tb.at(i, j);
  }
  Tape* tp = detail::joint_tape(a, b, "concat_cols");
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([aid = a.id, bid = b.id, rid = r.id, n, p, q](Tape& t) {
      const Tensor& g = t.slot(rid);
      if (aid >= 0) {
        Tensor& da = t.slot(aid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < p; ++j) da[i * p + j] += g.at(i, j);
      }
      if (bid >= 0) {
        Tensor& db = t.slot(bid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < q; ++j) db[i * q + j] += g.at(i, p + j);
      }
    });
  }
  return r;
}

// Multiply each row of an [n x m] matrix by a length-m vector.
inline Var mul_rowvec(const Var& a, const Var& b) {
  const Tensor& ta = *a.v;
  const Tensor& tb = *b.v;
  if (ta.rank() != 2 || tb.rank() != 1 || ta.cols() != tb.rows())
    throw ShapeError("mul_rowvec: want [n x m] * [m], got " + shape_str(ta) + " * " + shape_str(tb));
  auto out = std::make_shared<Tensor>(ta.shape());
  const std::size_t n = ta.rows(), m = ta.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out->at(i, j) = ta.at(i, j) * tb[j];
  detail::check_finite(*out, "mul_rowvec");
  Tape* tp = detail::joint_tape(a, b, "mul_rowvec");
  Var r{out, -1, tp};
  if (tp) {
    r.id = tp->alloc(*out);
    tp->push([av = a.v, bv = b.v, aid = a.id, bid = b.id, rid = r.id, n, m](Tape& t) {
      const Tensor& g = t.slot(rid);
      if (aid >= 0) {
        Tensor& da = t.slot(aid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) da[i * m + j] += g.at(i, j) * (*bv)[j];
      }
      if (bid >= 0) {
        Tensor& db = t.slot(bid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) db[j] += g.at(i, j) * av->at(i, j);
      }
    });
  }
  return r;
}

// Reverse the column order of an [n x m] matrix. Self-inverse.
inline Var reverse_cols(const Var& a) {
  const Tensor& ta = *a.v;
  if (ta.rank() != 2) throw ShapeError("reverse_cols: want rank-2, got " + shape_str(ta));
  const std::size_t n = ta.rows(), m = ta.cols();
  auto out = std::make_shared<Tensor>(ta.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out->at(i, j) = ta.at(i, m - 1 - j);
  Var r{out, -1, a.tape};
  if (a.tape) {
    r.id = a.tape->alloc(*out);
    a.tape->push([aid = a.id, rid = r.id, n, m](Tape& t) {
      if (aid < 0) return;
      const Tensor& g = t.slot(rid);
      Tensor& da = t.slot(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) da[i * m + j] += g.at(i, m - 1 - j);
    });
  }
  return r;
}

// Columns [j0, j1) of an [n x m] matrix; the result may be zero-width.
inline Var slice_cols(const Var& a, std::size_t j0, std::size_t j1) {
  const Tensor& ta = *a.v;
  if (ta.rank() != 2 || j0 > j1 || j1 > ta.cols())
    throw ShapeError("slice_cols: bad range [" + std::to_string(j0) + ", " + std::to_string(j1) +
                     ") for " + shape_str(ta));
  const std::size_t n = ta.rows(), m = ta.cols(), w = j1 - j0;
  auto out = std::make_shared<Tensor>(std::vector<std::size_t>{n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out->at(i, j) = ta.at(i, j0 + j);
  Var r{out, -1, a.tape};
  if (a.tape) {
    r.id = a.tape->alloc(*out);
    a.tape->push([aid = a.id, rid = r.id, n, m, j0, w](Tape& t) {
      if (aid < 0) return;
      const Tensor& g = t.slot(rid);
      Tensor& da = t.slot(aid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) da[i * m + j0 + j] += g.at(i, j);
    });
  }
  return r;
}

}  // namespace ssnl
