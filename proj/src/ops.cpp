#include "unicodec/ops.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numeric>

namespace unicodec::ad {
namespace {

template <typename S>
using Mat = Matrix<S>;

template <typename S>
bool any_grad(std::initializer_list<Var<S>> vars) {
  for (const auto& v : vars) {
    if (v.tape->needs_grad(v)) return true;
  }
  return false;
}

template <typename S>
void require_same_tape(Var<S> a, Var<S> b) {
  if (a.tape != b.tape) throw InputError("operands live on different tapes");
}

[[noreturn]] void shape_mismatch(const char* op, const std::string& a, const std::string& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}

template <typename S, typename F, typename D>
Var<S> unary(const char* op, Var<S> x, F forward, D derivative) {
  Tape<S>& t = *x.tape;
  Mat<S> y = x.value().unaryExpr(forward);
  const std::size_t xi = x.id;
  return t.record(op, std::move(y), t.needs_grad(x), [xi, derivative](Tape<S>& tp, const Mat<S>& g) {
    const Mat<S>& xv = tp.value(xi);
    Mat<S> d = xv.unaryExpr(derivative);
    tp.accumulate(xi, (g.array() * d.array()).matrix());
  });
}

}  // namespace

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  Tape<S>& t = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t ai = a.id, bi = b.id;
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return t.record("add", av + bv, any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
      tp.accumulate(ai, g);
      tp.accumulate(bi, g);
    });
  }
  if (bv.rows() == 1 && bv.cols() == av.cols()) {
    Mat<S> y = av.rowwise() + bv.row(0);
    return t.record("add", std::move(y), any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
      tp.accumulate(ai, g);
      tp.accumulate(bi, g.colwise().sum());
    });
  }
  shape_mismatch("add", shape_of(av), shape_of(bv));
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    shape_mismatch("sub", shape_of(av), shape_of(bv));
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record("sub", av - bv, any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
    tp.accumulate(ai, g);
    tp.accumulate(bi, -g);
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  Tape<S>& t = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t ai = a.id, bi = b.id;
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    Mat<S> y = (av.array() * bv.array()).matrix();
    return t.record("mul", std::move(y), any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
      tp.accumulate(ai, (g.array() * tp.value(bi).array()).matrix());
      tp.accumulate(bi, (g.array() * tp.value(ai).array()).matrix());
    });
  }
  if (bv.rows() == 1 && bv.cols() == av.cols()) {
    Mat<S> y = (av.array().rowwise() * bv.row(0).array()).matrix();
    return t.record("mul", std::move(y), any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
      const auto& bvv = tp.value(bi);
      tp.accumulate(ai, (g.array().rowwise() * bvv.row(0).array()).matrix());
      tp.accumulate(bi, (g.array() * tp.value(ai).array()).matrix().colwise().sum());
    });
  }
  if (bv.cols() == 1 && bv.rows() == av.rows()) {
    Mat<S> y = (av.array().colwise() * bv.col(0).array()).matrix();
    return t.record("mul", std::move(y), any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
      const auto& bvv = tp.value(bi);
      tp.accumulate(ai, (g.array().colwise() * bvv.col(0).array()).matrix());
      tp.accumulate(bi, (g.array() * tp.value(ai).array()).matrix().rowwise().sum());
    });
  }
  shape_mismatch("mul", shape_of(av), shape_of(bv));
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  const std::size_t ai = a.id;
  return a.tape->record("scale", a.value() * factor, a.tape->needs_grad(a),
                        [ai, factor](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(ai, g * factor); });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S offset) {
  const std::size_t ai = a.id;
  Mat<S> y = (a.value().array() + offset).matrix();
  return a.tape->record("add_scalar", std::move(y), a.tape->needs_grad(a),
                        [ai](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(ai, g); });
}

template <typename S>
Var<S> gelu(Var<S> x) {
  return unary<S>(
      "gelu", x,
      [](S v) { return S(0.5) * v * (S(1) + std::erf(v / std::sqrt(S(2)))); },
      [](S v) {
        const S cdf = S(0.5) * (S(1) + std::erf(v / std::sqrt(S(2))));
        const S pdf = std::exp(-S(0.5) * v * v) / std::sqrt(S(2) * S(M_PI));
        return cdf + v * pdf;
      });
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
  return unary<S>(
      "sigmoid", x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S v) {
        const S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) - s);
      });
}

template <typename S>
Var<S> tanh(Var<S> x) {
  return unary<S>(
      "tanh", x, [](S v) { return std::tanh(v); },
      [](S v) {
        const S th = std::tanh(v);
        return S(1) - th * th;
      });
}

template <typename S>
Var<S> exp(Var<S> x) {
  return unary<S>(
      "exp", x, [](S v) { return std::exp(v); }, [](S v) { return std::exp(v); });
}

template <typename S>
Var<S> log(Var<S> x) {
  return unary<S>(
      "log", x, [](S v) { return std::log(v); }, [](S v) { return S(1) / v; });
}

template <typename S>
Var<S> square(Var<S> x) {
  return unary<S>(
      "square", x, [](S v) { return v * v; }, [](S v) { return S(2) * v; });
}

template <typename S>
Var<S> abs(Var<S> x) {
  Tape<S>& t = *x.tape;
  std::uint64_t h = 0;
  const auto& xv = x.value();
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const S v = xv.data()[i];
    const std::uint64_t s = v > 0 ? 1 : (v < 0 ? 2 : 3);
    h = h * 1315423911ULL + s;
  }
  t.note_decision(h);
  return unary<S>(
      "abs", x, [](S v) { return std::abs(v); },
      [](S v) { return v > 0 ? S(1) : (v < 0 ? S(-1) : S(0)); });
}

template <typename S>
Var<S> sum(Var<S> x) {
  const std::size_t xi = x.id;
  const Eigen::Index r = x.rows(), c = x.cols();
  Mat<S> y(1, 1);
  y(0, 0) = x.value().sum();
  return x.tape->record("sum", std::move(y), x.tape->needs_grad(x),
                        [xi, r, c](Tape<S>& tp, const Mat<S>& g) {
                          tp.accumulate(xi, Mat<S>::Constant(r, c, g(0, 0)));
                        });
}

template <typename S>
Var<S> mean(Var<S> x) {
  const S n = static_cast<S>(x.value().size());
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), S(1) / n);
}

template <typename S>
Var<S> sum_cols(Var<S> x) {
  const std::size_t xi = x.id;
  const Eigen::Index c = x.cols();
  Mat<S> y = x.value().rowwise().sum();
  return x.tape->record("sum_cols", std::move(y), x.tape->needs_grad(x),
                        [xi, c](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(xi, g.replicate(1, c)); });
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) shape_mismatch("matmul", shape_of(av), shape_of(bv));
  const std::size_t ai = a.id, bi = b.id;
  Mat<S> y = av * bv;
  return a.tape->record("matmul", std::move(y), any_grad({a, b}), [ai, bi](Tape<S>& tp, const Mat<S>& g) {
    if (tp.needs_grad(ai)) tp.accumulate(ai, g * tp.value(bi).transpose());
    if (tp.needs_grad(bi)) tp.accumulate(bi, tp.value(ai).transpose() * g);
  });
}

template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols()) shape_mismatch("matmul_nt", shape_of(av), shape_of(bv));
  const std::size_t ai = a.id, bi = b.id;
  Mat<S> y = av * bv.transpose();
  return a.tape->record("matmul_nt", std::move(y), any_grad({a, b}),
                        [ai, bi](Tape<S>& tp, const Mat<S>& g) {
                          if (tp.needs_grad(ai)) tp.accumulate(ai, g * tp.value(bi));
                          if (tp.needs_grad(bi)) tp.accumulate(bi, g.transpose() * tp.value(ai));
                        });
}

template <typename S>
Var<S> transpose(Var<S> x) {
  const std::size_t xi = x.id;
  Mat<S> y = x.value().transpose();
  return x.tape->record("transpose", std::move(y), x.tape->needs_grad(x),
                        [xi](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(xi, g.transpose()); });
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> weight, Var<S> bias) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  if (xv.cols() != wv.cols()) shape_mismatch("linear", shape_of(xv), shape_of(wv));
  if (bv.rows() != 1 || bv.cols() != wv.rows()) shape_mismatch("linear bias", shape_of(wv), shape_of(bv));
  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  Mat<S> y = xv * wv.transpose();
  y.rowwise() += bv.row(0);
  return x.tape->record("linear", std::move(y), any_grad({x, weight, bias}),
                        [xi, wi, bi](Tape<S>& tp, const Mat<S>& g) {
                          if (tp.needs_grad(xi)) tp.accumulate(xi, g * tp.value(wi));
                          if (tp.needs_grad(wi)) tp.accumulate(wi, g.transpose() * tp.value(xi));
                          if (tp.needs_grad(bi)) tp.accumulate(bi, g.colwise().sum());
                        });
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> weight) {
  return matmul_nt(x, weight);
}

template <typename S>
Var<S> softmax_rows(Var<S> x) {
  const auto& xv = x.value();
  Mat<S> y = xv.colwise() - xv.rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  const std::size_t xi = x.id;
  auto yv = std::make_shared<Mat<S>>(y);
  return x.tape->record("softmax", std::move(y), x.tape->needs_grad(x),
                        [xi, yv](Tape<S>& tp, const Mat<S>& g) {
                          const Mat<S>& s = *yv;
                          Vector<S> dot = (g.array() * s.array()).matrix().rowwise().sum();
                          Mat<S> d = g.colwise() - dot;
                          tp.accumulate(xi, (s.array() * d.array()).matrix());
                        });
}

template <typename S>
Var<S> log_softmax_rows(Var<S> x) {
  const auto& xv = x.value();
  Vector<S> mx = xv.rowwise().maxCoeff();
  Mat<S> shifted = xv.colwise() - mx;
  Vector<S> lse = shifted.array().exp().matrix().rowwise().sum().array().log().matrix();
  Mat<S> y = shifted.colwise() - lse;
  const std::size_t xi = x.id;
  auto yv = std::make_shared<Mat<S>>(y);
  return x.tape->record("log_softmax", std::move(y), x.tape->needs_grad(x),
                        [xi, yv](Tape<S>& tp, const Mat<S>& g) {
                          Mat<S> sm = yv->array().exp().matrix();
                          Vector<S> gs = g.rowwise().sum();
                          Mat<S> d = g - (sm.array().colwise() * gs.array()).matrix();
                          tp.accumulate(xi, d);
                        });
}

template <typename S>
Var<S> layer_norm_rows(Var<S> x, S eps) {
  const auto& xv = x.value();
  const Eigen::Index c = xv.cols();
  Vector<S> mu = xv.rowwise().mean();
  Mat<S> centered = xv.colwise() - mu;
  Vector<S> var = centered.array().square().matrix().rowwise().sum() / static_cast<S>(c);
  Vector<S> inv = (var.array() + eps).rsqrt().matrix();
  Mat<S> y = (centered.array().colwise() * inv.array()).matrix();
  const std::size_t xi = x.id;
  auto yv = std::make_shared<Mat<S>>(y);
  return x.tape->record("layer_norm", std::move(y), x.tape->needs_grad(x),
                        [xi, yv, inv, c](Tape<S>& tp, const Mat<S>& g) {
                          const Mat<S>& yy = *yv;
                          Vector<S> gm = g.rowwise().mean();
                          Vector<S> gym = (g.array() * yy.array()).matrix().rowwise().sum() / static_cast<S>(c);
                          Mat<S> d = g.colwise() - gm;
                          d -= (yy.array().colwise() * gym.array()).matrix();
                          d.array().colwise() *= inv.array();
                          tp.accumulate(xi, d);
                        });
}

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps) {
  return add(mul(layer_norm_rows(x, eps), gain), bias);
}

template <typename S>
Var<S> l2_normalize_rows(Var<S> x) {
  const auto& xv = x.value();
  // tiny floor keeps all-zero rows finite without moving nonzero results
  Vector<S> norm = (xv.array().square().matrix().rowwise().sum().array() + S(1e-30)).sqrt().matrix();
  Mat<S> y = (xv.array().colwise() / norm.array()).matrix();
  const std::size_t xi = x.id;
  auto yv = std::make_shared<Mat<S>>(y);
  return x.tape->record("l2_normalize", std::move(y), x.tape->needs_grad(x),
                        [xi, yv, norm](Tape<S>& tp, const Mat<S>& g) {
                          const Mat<S>& yy = *yv;
                          Vector<S> dot = (g.array() * yy.array()).matrix().rowwise().sum();
                          Mat<S> d = g - (yy.array().colwise() * dot.array()).matrix();
                          d.array().colwise() /= norm.array();
                          tp.accumulate(xi, d);
                        });
}

template <typename S>
Var<S> cosine_similarity(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_mismatch("cosine_similarity", shape_of(a.value()), shape_of(b.value()));
  }
  return sum_cols(mul(l2_normalize_rows(a), l2_normalize_rows(b)));
}

template <typename S>
Var<S> slice_rows(Var<S> x, Eigen::Index start, Eigen::Index count) {
  const auto& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_of(xv));
  }
  const std::size_t xi = x.id;
  const Eigen::Index r = xv.rows(), c = xv.cols();
  Mat<S> y = xv.middleRows(start, count);
  return x.tape->record("slice_rows", std::move(y), x.tape->needs_grad(x),
                        [xi, r, c, start, count](Tape<S>& tp, const Mat<S>& g) {
                          Mat<S> full = Mat<S>::Zero(r, c);
                          full.middleRows(start, count) = g;
                          tp.accumulate(xi, full);
                        });
}

template <typename S>
Var<S> slice_cols(Var<S> x, Eigen::Index start, Eigen::Index count) {
  const auto& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_of(xv));
  }
  const std::size_t xi = x.id;
  const Eigen::Index r = xv.rows(), c = xv.cols();
  Mat<S> y = xv.middleCols(start, count);
  return x.tape->record("slice_cols", std::move(y), x.tape->needs_grad(x),
                        [xi, r, c, start, count](Tape<S>& tp, const Mat<S>& g) {
                          Mat<S> full = Mat<S>::Zero(r, c);
                          full.middleCols(start, count) = g;
                          tp.accumulate(xi, full);
                        });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_mismatch("concat_rows", shape_of(parts[0].value()), shape_of(p.value()));
    r += p.rows();
    ng = ng || p.tape->needs_grad(p);
  }
  Mat<S> y(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    spans.emplace_back(p.id, off);
    off += p.rows();
  }
  return parts[0].tape->record("concat_rows", std::move(y), ng, [spans](Tape<S>& tp, const Mat<S>& g) {
    for (const auto& [id, o] : spans) {
      if (tp.needs_grad(id)) tp.accumulate(id, g.middleRows(o, tp.value(id).rows()));
    }
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_mismatch("concat_cols", shape_of(parts[0].value()), shape_of(p.value()));
    c += p.cols();
    ng = ng || p.tape->needs_grad(p);
  }
  Mat<S> y(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id, off);
    off += p.cols();
  }
  return parts[0].tape->record("concat_cols", std::move(y), ng, [spans](Tape<S>& tp, const Mat<S>& g) {
    for (const auto& [id, o] : spans) {
      if (tp.needs_grad(id)) tp.accumulate(id, g.middleCols(o, tp.value(id).cols()));
    }
  });
}

template <typename S>
Var<S> gather_rows(Var<S> x, const std::vector<Eigen::Index>& rows) {
  const auto& xv = x.value();
  Mat<S> y(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) {
      throw DimensionError("gather_rows index " + std::to_string(rows[i]) + " out of range for " +
                           shape_of(xv));
    }
    y.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  const std::size_t xi = x.id;
  const Eigen::Index r = xv.rows(), c = xv.cols();
  return x.tape->record("gather_rows", std::move(y), x.tape->needs_grad(x),
                        [xi, r, c, rows](Tape<S>& tp, const Mat<S>& g) {
                          Mat<S> full = Mat<S>::Zero(r, c);
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            full.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                          }
                          tp.accumulate(xi, full);
                        });
}

template <typename S>
Var<S> scatter_rows(Var<S> x, const std::vector<Eigen::Index>& rows, Eigen::Index total_rows) {
  const auto& xv = x.value();
  if (static_cast<Eigen::Index>(rows.size()) != xv.rows()) {
    throw DimensionError("scatter_rows: " + std::to_string(rows.size()) + " targets for " + shape_of(xv));
  }
  Mat<S> y = Mat<S>::Zero(total_rows, xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= total_rows) {
      throw DimensionError("scatter_rows target " + std::to_string(rows[i]) + " out of range");
    }
    y.row(rows[i]) += xv.row(static_cast<Eigen::Index>(i));
  }
  const std::size_t xi = x.id;
  return x.tape->record("scatter_rows", std::move(y), x.tape->needs_grad(x),
                        [xi, rows](Tape<S>& tp, const Mat<S>& g) {
                          Mat<S> gx(static_cast<Eigen::Index>(rows.size()), g.cols());
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            gx.row(static_cast<Eigen::Index>(i)) = g.row(rows[i]);
                          }
                          tp.accumulate(xi, gx);
                        });
}

template <typename S>
Var<S> conv1d(Var<S> x, Var<S> weight, Var<S> bias, int kernel, int stride, int pad_left,
              int pad_right) {
  if (stride < 1 || kernel < 1 || pad_left < 0 || pad_right < 0) {
    throw DimensionError("conv1d: stride and kernel must be >= 1, padding >= 0");
  }
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  const Eigen::Index cin = xv.cols();
  const Eigen::Index cout = wv.rows();
  if (wv.cols() != kernel * cin) shape_mismatch("conv1d", shape_of(xv), shape_of(wv));
  if (bv.rows() != 1 || bv.cols() != cout) shape_mismatch("conv1d bias", shape_of(wv), shape_of(bv));
  const Eigen::Index tin = xv.rows();
  const Eigen::Index padded_len = tin + pad_left + pad_right;
  if (padded_len < kernel) {
    throw InputError("conv1d: input of length " + std::to_string(tin) + " shorter than kernel " +
                     std::to_string(kernel));
  }
  const Eigen::Index tout = (padded_len - kernel) / stride + 1;
  Mat<S> padded = Mat<S>::Zero(padded_len, cin);
  padded.middleRows(pad_left, tin) = xv;
  auto cols = std::make_shared<Mat<S>>(tout, kernel * cin);
  for (Eigen::Index t = 0; t < tout; ++t) {
    cols->row(t) = Eigen::Map<const RowVector<S>>(padded.data() + t * stride * cin, kernel * cin);
  }
  Mat<S> y = (*cols) * wv.transpose();
  y.rowwise() += bv.row(0);
  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  return x.tape->record(
      "conv1d", std::move(y), any_grad({x, weight, bias}),
      [=](Tape<S>& tp, const Mat<S>& g) {
        if (tp.needs_grad(wi)) tp.accumulate(wi, g.transpose() * (*cols));
        if (tp.needs_grad(bi)) tp.accumulate(bi, g.colwise().sum());
        if (tp.needs_grad(xi)) {
          Mat<S> dcols = g * tp.value(wi);
          Mat<S> dpad = Mat<S>::Zero(padded_len, cin);
          for (Eigen::Index t = 0; t < tout; ++t) {
            Eigen::Map<RowVector<S>>(dpad.data() + t * stride * cin, kernel * cin) += dcols.row(t);
          }
          tp.accumulate(xi, dpad.middleRows(pad_left, tin));
        }
      });
}

template <typename S>
Var<S> conv_transpose1d(Var<S> x, Var<S> weight, Var<S> bias, int kernel, int stride, int padding,
                        int output_padding) {
  if (stride < 1 || kernel < 1 || padding < 0 || output_padding < 0) {
    throw DimensionError("conv_transpose1d: stride and kernel must be >= 1, padding >= 0");
  }
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  const Eigen::Index cin = xv.cols();
  if (wv.rows() != cin || wv.cols() % kernel != 0) {
    shape_mismatch("conv_transpose1d", shape_of(xv), shape_of(wv));
  }
  const Eigen::Index cout = wv.cols() / kernel;
  if (bv.rows() != 1 || bv.cols() != cout) {
    shape_mismatch("conv_transpose1d bias", shape_of(wv), shape_of(bv));
  }
  const Eigen::Index tin = xv.rows();
  if (tin < 1) throw InputError("conv_transpose1d: empty input");
  const Eigen::Index full_len = (tin - 1) * stride + kernel;
  const Eigen::Index out_len = full_len - 2 * padding + output_padding;
  if (out_len < 1 || padding + out_len > full_len) {
    throw DimensionError("conv_transpose1d: padding/output_padding inconsistent with kernel");
  }
  Mat<S> patches = xv * wv;  // tin x (kernel * cout)
  Mat<S> full = Mat<S>::Zero(full_len, cout);
  for (Eigen::Index t = 0; t < tin; ++t) {
    Eigen::Map<RowVector<S>>(full.data() + t * stride * cout, kernel * cout) += patches.row(t);
  }
  Mat<S> y = full.middleRows(padding, out_len);
  y.rowwise() += bv.row(0);
  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  return x.tape->record(
      "conv_transpose1d", std::move(y), any_grad({x, weight, bias}),
      [=](Tape<S>& tp, const Mat<S>& g) {
        if (tp.needs_grad(bi)) tp.accumulate(bi, g.colwise().sum());
        Mat<S> gfull = Mat<S>::Zero(full_len, cout);
        gfull.middleRows(padding, out_len) = g;
        Mat<S> dpatches(tin, kernel * cout);
        for (Eigen::Index t = 0; t < tin; ++t) {
          dpatches.row(t) = Eigen::Map<const RowVector<S>>(gfull.data() + t * stride * cout, kernel * cout);
        }
        if (tp.needs_grad(xi)) tp.accumulate(xi, dpatches * tp.value(wi).transpose());
        if (tp.needs_grad(wi)) tp.accumulate(wi, tp.value(xi).transpose() * dpatches);
      });
}

template <typename S>
Var<S> rope(Var<S> x, int heads, S base, Eigen::Index position_offset) {
  const auto& xv = x.value();
  const Eigen::Index hidden = xv.cols();
  if (heads < 1 || hidden % heads != 0 || (hidden / heads) % 2 != 0) {
    throw DimensionError("rope: hidden " + std::to_string(hidden) + " not divisible into " +
                         std::to_string(heads) + " heads of even width");
  }
  const Eigen::Index hd = hidden / heads;
  const Eigen::Index half = hd / 2;
  const Eigen::Index steps = xv.rows();
  auto cosv = std::make_shared<Mat<S>>(steps, half);
  auto sinv = std::make_shared<Mat<S>>(steps, half);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const double pos = static_cast<double>(t + position_offset);
    for (Eigen::Index i = 0; i < half; ++i) {
      const double freq = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      (*cosv)(t, i) = static_cast<S>(std::cos(pos * freq));
      (*sinv)(t, i) = static_cast<S>(std::sin(pos * freq));
    }
  }
  auto rotate = [=](const Mat<S>& in, bool inverse) {
    Mat<S> out(in.rows(), in.cols());
    const S sign = inverse ? S(-1) : S(1);
    for (Eigen::Index t = 0; t < in.rows(); ++t) {
      for (Eigen::Index h = 0; h < heads; ++h) {
        for (Eigen::Index i = 0; i < half; ++i) {
          const Eigen::Index c0 = h * hd + 2 * i;
          const S a = in(t, c0), b = in(t, c0 + 1);
          const S cs = (*cosv)(t, i), sn = sign * (*sinv)(t, i);
          out(t, c0) = a * cs - b * sn;
          out(t, c0 + 1) = a * sn + b * cs;
        }
      }
    }
    return out;
  };
  const std::size_t xi = x.id;
  return x.tape->record("rope", rotate(xv, false), x.tape->needs_grad(x),
                        [xi, rotate](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(xi, rotate(g, true)); });
}

template <typename S>
Var<S> rope_attention(Var<S> q, Var<S> k, Var<S> v, int heads, Eigen::Index position_offset) {
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols()) {
    shape_mismatch("rope_attention", shape_of(q.value()), shape_of(k.value()));
  }
  const Eigen::Index hd = q.cols() / heads;
  Var<S> qr = rope(q, heads, S(10000), position_offset);
  Var<S> kr = rope(k, heads, S(10000), position_offset);
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
  std::vector<Var<S>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var<S> qh = slice_cols(qr, h * hd, hd);
    Var<S> kh = slice_cols(kr, h * hd, hd);
    Var<S> vh = slice_cols(v, h * hd, hd);
    Var<S> p = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    outs.push_back(matmul(p, vh));
  }
  return concat_cols(outs);
}

template <typename S>
Var<S> stop_gradient(Var<S> x) {
  return x.tape->constant(x.value());
}

template <typename S>
Var<S> passthrough(Var<S> source, Matrix<S> value) {
  if (value.rows() != source.rows() || value.cols() != source.cols()) {
    shape_mismatch("passthrough", shape_of(source.value()), shape_of(value));
  }
  const std::size_t si = source.id;
  return source.tape->record("passthrough", std::move(value), source.tape->needs_grad(source),
                             [si](Tape<S>& tp, const Mat<S>& g) { tp.accumulate(si, g); });
}

template <typename S>
Var<S> topk_normalize(Var<S> scores, int k) {
  const auto& sv = scores.value();
  const Eigen::Index n = sv.cols();
  if (k < 1 || k > n) {
    throw DimensionError("topk_normalize: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  auto selected = std::make_shared<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      sv.rows(), n);
  selected->setConstant(false);
  Vector<S> totals(sv.rows());
  Mat<S> y = Mat<S>::Zero(sv.rows(), n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < sv.rows(); ++r) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return sv(r, a) > sv(r, b); });
    std::uint64_t h = 0;
    S total = 0;
    for (int j = 0; j < k; ++j) {
      (*selected)(r, order[j]) = true;
      total += sv(r, order[j]);
      h |= std::uint64_t{1} << (order[j] % 64);
    }
    scores.tape->note_decision(h);
    totals(r) = total;
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((*selected)(r, i)) y(r, i) = sv(r, i) / total;
    }
  }
  const std::size_t si = scores.id;
  auto yv = std::make_shared<Mat<S>>(y);
  return scores.tape->record("topk_normalize", std::move(y), scores.tape->needs_grad(scores),
                             [si, selected, totals, yv](Tape<S>& tp, const Mat<S>& g) {
                               Mat<S> d = Mat<S>::Zero(g.rows(), g.cols());
                               for (Eigen::Index r = 0; r < g.rows(); ++r) {
                                 const S inner = (g.row(r).array() * yv->row(r).array()).sum();
                                 for (Eigen::Index i = 0; i < g.cols(); ++i) {
                                   if ((*selected)(r, i)) d(r, i) = (g(r, i) - inner) / totals(r);
                                 }
                               }
                               tp.accumulate(si, d);
                             });
}

template <typename S>
Var<S> mask_rows(Var<S> x, const std::vector<bool>& mask, Var<S> embedding) {
  const auto& xv = x.value();
  const auto& ev = embedding.value();
  if (static_cast<Eigen::Index>(mask.size()) != xv.rows()) {
    throw DimensionError("mask_rows: mask of length " + std::to_string(mask.size()) + " for " + shape_of(xv));
  }
  if (ev.rows() != 1 || ev.cols() != xv.cols()) shape_mismatch("mask_rows", shape_of(xv), shape_of(ev));
  Mat<S> y = xv;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t]) y.row(static_cast<Eigen::Index>(t)) = ev.row(0);
  }
  const std::size_t xi = x.id, ei = embedding.id;
  return x.tape->record("mask_rows", std::move(y), any_grad({x, embedding}),
                        [xi, ei, mask](Tape<S>& tp, const Mat<S>& g) {
                          Mat<S> gx = g;
                          RowVector<S> ge = RowVector<S>::Zero(g.cols());
                          for (std::size_t t = 0; t < mask.size(); ++t) {
                            if (mask[t]) {
                              ge += g.row(static_cast<Eigen::Index>(t));
                              gx.row(static_cast<Eigen::Index>(t)).setZero();
                            }
                          }
                          tp.accumulate(xi, gx);
                          tp.accumulate(ei, ge);
                        });
}

template <typename S>
Var<S> stft_magnitude(Var<S> signal, const Vector<S>& window, int fft_size, int hop) {
  using Complex = std::complex<S>;
  const auto& xv = signal.value();
  if (xv.cols() != 1) throw DimensionError("stft_magnitude expects a column signal, got " + shape_of(xv));
  if (window.size() != fft_size || hop < 1) throw DimensionError("stft_magnitude: bad window or hop");
  const Eigen::Index n = xv.rows();
  if (n < fft_size) {
    throw InputError("signal of " + std::to_string(n) + " samples is shorter than fft_size " +
                     std::to_string(fft_size));
  }
  const Eigen::Index frames = (n - fft_size) / hop + 1;
  const Eigen::Index bins = fft_size / 2 + 1;
  thread_local Eigen::FFT<S> fft;
  auto spectra = std::make_shared<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      frames, bins);
  Mat<S> mag(frames, bins);
  std::vector<S> buf(static_cast<std::size_t>(fft_size));
  std::vector<Complex> spec;
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (int i = 0; i < fft_size; ++i) buf[i] = xv(f * hop + i, 0) * window(i);
    fft.fwd(spec, buf);
    for (Eigen::Index b = 0; b < bins; ++b) {
      (*spectra)(f, b) = spec[static_cast<std::size_t>(b)];
      mag(f, b) = std::abs(spec[static_cast<std::size_t>(b)]);
    }
  }
  const std::size_t si = signal.id;
  auto mags = std::make_shared<Mat<S>>(mag);
  return signal.tape->record(
      "stft_magnitude", std::move(mag), signal.tape->needs_grad(signal),
      [=](Tape<S>& tp, const Mat<S>& g) {
        thread_local Eigen::FFT<S> inv_fft;
        inv_fft.SetFlag(Eigen::FFT<S>::Unscaled);
        Mat<S> dx = Mat<S>::Zero(n, 1);
        std::vector<Complex> z(static_cast<std::size_t>(fft_size));
        std::vector<Complex> time;
        for (Eigen::Index f = 0; f < frames; ++f) {
          std::fill(z.begin(), z.end(), Complex(0, 0));
          for (Eigen::Index b = 0; b < bins; ++b) {
            const S m = (*mags)(f, b);
            if (m > 0) z[static_cast<std::size_t>(b)] = (*spectra)(f, b) * (g(f, b) / m);
          }
          inv_fft.inv(time, z);
          for (int i = 0; i < fft_size; ++i) dx(f * hop + i, 0) += window(i) * time[i].real();
        }
        tp.accumulate(si, dx);
      });
}

#define UNICODEC_INSTANTIATE_OPS(S)                                                                  \
  template Var<S> add(Var<S>, Var<S>);                                                              \
  template Var<S> sub(Var<S>, Var<S>);                                                              \
  template Var<S> mul(Var<S>, Var<S>);                                                              \
  template Var<S> scale(Var<S>, S);                                                                 \
  template Var<S> add_scalar(Var<S>, S);                                                            \
  template Var<S> gelu(Var<S>);                                                                     \
  template Var<S> sigmoid(Var<S>);                                                                  \
  template Var<S> tanh(Var<S>);                                                                     \
  template Var<S> exp(Var<S>);                                                                      \
  template Var<S> log(Var<S>);                                                                      \
  template Var<S> square(Var<S>);                                                                   \
  template Var<S> abs(Var<S>);                                                                      \
  template Var<S> sum(Var<S>);                                                                      \
  template Var<S> mean(Var<S>);                                                                     \
  template Var<S> sum_cols(Var<S>);                                                                 \
  template Var<S> matmul(Var<S>, Var<S>);                                                           \
  template Var<S> matmul_nt(Var<S>, Var<S>);                                                        \
  template Var<S> transpose(Var<S>);                                                                \
  template Var<S> linear(Var<S>, Var<S>, Var<S>);                                                   \
  template Var<S> linear(Var<S>, Var<S>);                                                           \
  template Var<S> softmax_rows(Var<S>);                                                             \
  template Var<S> log_softmax_rows(Var<S>);                                                         \
  template Var<S> layer_norm_rows(Var<S>, S);                                                       \
  template Var<S> layer_norm(Var<S>, Var<S>, Var<S>, S);                                            \
  template Var<S> l2_normalize_rows(Var<S>);                                                        \
  template Var<S> cosine_similarity(Var<S>, Var<S>);                                                \
  template Var<S> slice_rows(Var<S>, Eigen::Index, Eigen::Index);                                   \
  template Var<S> slice_cols(Var<S>, Eigen::Index, Eigen::Index);                                   \
  template Var<S> concat_rows(const std::vector<Var<S>>&);                                          \
  template Var<S> concat_cols(const std::vector<Var<S>>&);                                          \
  template Var<S> gather_rows(Var<S>, const std::vector<Eigen::Index>&);                            \
  template Var<S> scatter_rows(Var<S>, const std::vector<Eigen::Index>&, Eigen::Index);             \
  template Var<S> conv1d(Var<S>, Var<S>, Var<S>, int, int, int, int);                               \
  template Var<S> conv_transpose1d(Var<S>, Var<S>, Var<S>, int, int, int, int);                     \
  template Var<S> rope(Var<S>, int, S, Eigen::Index);                                               \
  template Var<S> rope_attention(Var<S>, Var<S>, Var<S>, int, Eigen::Index);                        \
  template Var<S> stop_gradient(Var<S>);                                                            \
  template Var<S> passthrough(Var<S>, Matrix<S>);                                                   \
  template Var<S> topk_normalize(Var<S>, int);                                                      \
  template Var<S> mask_rows(Var<S>, const std::vector<bool>&, Var<S>);                              \
  template Var<S> stft_magnitude(Var<S>, const Vector<S>&, int, int);

UNICODEC_INSTANTIATE_OPS(float)
UNICODEC_INSTANTIATE_OPS(double)

}  // namespace unicodec::ad
