#include "mtl/ops.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <string>

#include "gemm.hpp"
#include "mtl/errors.hpp"
#include "mtl/rng.hpp"

namespace mtl {

namespace {

using detail::Node;
using Vjp = std::function<std::vector<Tensor>(const Tensor&, const std::vector<char>&)>;

Tensor record_op(const char* op, std::vector<Tensor> inputs, Tensor out, Vjp vjp) {
  Tape* tape = Tape::active();
  if (tape && grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      Node n;
      n.op = op;
      n.inputs = std::move(inputs);
      n.output = out;
      n.vjp = std::move(vjp);
      tape->record(std::move(n));
    }
  }
  return out;
}

// Ops whose gradient rule is a raw kernel must not take part in a recorded
// (higher-order) backward pass. They only appear on paths that are
// differentiated exactly once, and this guard keeps that honest.
void require_first_order(const char* op) {
  if (grad_enabled() && Tape::active())
    throw ContractError(std::string(op) +
                        ": gradient is first-order only and cannot be recorded");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void check_rank(const char* op, const Tensor& a, int rank) {
  if (a.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
}

template <typename F>
Tensor map1(const Tensor& a, F f) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

template <typename F>
Tensor map2(const char* op, const Tensor& a, const Tensor& b, F f) {
  check_same_shape(op, a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = map2("add", a, b, [](double x, double y) { return x + y; });
  return record_op("add", {a, b}, out, [](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(2);
    if (need[0]) gs[0] = g;
    if (need[1]) gs[1] = g;
    return gs;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = map2("sub", a, b, [](double x, double y) { return x - y; });
  return record_op("sub", {a, b}, out, [](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(2);
    if (need[0]) gs[0] = g;
    if (need[1]) gs[1] = neg(g);
    return gs;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = map2("mul", a, b, [](double x, double y) { return x * y; });
  return record_op("mul", {a, b}, out, [a, b](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(2);
    if (need[0]) gs[0] = mul(g, b);
    if (need[1]) gs[1] = mul(g, a);
    return gs;
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = map2("div", a, b, [](double x, double y) { return x / y; });
  return record_op("div", {a, b}, out,
                   [b, out](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = div(g, b);
                     if (need[1]) gs[1] = neg(mul(g, div(out, b)));
                     return gs;
                   });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = map1(a, [c](double x) { return x * c; });
  return record_op("scale", {a}, out, [c](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = scale(g, c);
    return gs;
  });
}

Tensor addc(const Tensor& a, double c) {
  Tensor out = map1(a, [c](double x) { return x + c; });
  return record_op("addc", {a}, out, [](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = g;
    return gs;
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  Tensor out = map1(a, [](double x) { return std::exp(x); });
  return record_op("exp", {a}, out, [out](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = mul(g, out);
    return gs;
  });
}

Tensor log(const Tensor& a) {
  Tensor out = map1(a, [](double x) { return std::log(x); });
  return record_op("log", {a}, out, [a](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = div(g, a);
    return gs;
  });
}

Tensor sqrt(const Tensor& a) {
  Tensor out = map1(a, [](double x) { return std::sqrt(x); });
  return record_op("sqrt", {a}, out, [out](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = div(g, scale(out, 2.0));
    return gs;
  });
}

Tensor relu(const Tensor& a) {
  Tensor out = map1(a, [](double x) { return x > 0.0 ? x : 0.0; });
  // out > 0 exactly where a > 0, so the output doubles as the backward mask.
  return record_op("relu", {a}, out, [out](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (!need[0]) return gs;
    if (grad_enabled() && Tape::active()) {
      // recorded (higher-order) pass: keep the grad differentiable in g
      Tensor mask = map1(out, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
      gs[0] = mul(g, mask);
    } else {
      gs[0] = Tensor::zeros(out.shape());
      const double* po = out.data();
      const double* pg = g.data();
      double* pd = gs[0].data();
      for (std::int64_t i = 0; i < out.size(); ++i) pd[i] = po[i] > 0.0 ? pg[i] : 0.0;
    }
    return gs;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be one-element");
  const double sv = s.data()[0];
  Tensor out = map1(a, [sv](double x) { return x * sv; });
  return record_op("scale_by", {a, s}, out,
                   [a, s](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = scale_by(g, s);
                     if (need[1]) gs[1] = sum_all(mul(g, a));
                     return gs;
                   });
}

// ---- structure ----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
  Tensor out = Tensor::zeros(new_shape);
  std::memcpy(out.data(), a.data(), static_cast<std::size_t>(a.size()) * sizeof(double));
  Shape orig = a.shape();
  return record_op("reshape", {a}, out,
                   [orig](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(1);
                     if (need[0]) gs[0] = reshape(g, orig);
                     return gs;
                   });
}

Tensor flatten2d(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("flatten2d: rank must be >= 2, got " + shape_str(a.shape()));
  return reshape(a, Shape{a.dim(0), a.size() / a.dim(0)});
}

// ---- 2-D helpers ---------------------------------------------------------------

namespace {
void check_mat_vec(const char* op, const Tensor& a, const Tensor& v, int axis) {
  check_rank(op, a, 2);
  check_rank(op, v, 1);
  if (v.dim(0) != a.dim(axis))
    throw DimensionError(std::string(op) + ": vector " + shape_str(v.shape()) +
                         " does not match matrix " + shape_str(a.shape()));
}
}  // namespace

Tensor add_bias(const Tensor& a, const Tensor& u) {
  check_mat_vec("add_bias", a, u, 1);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < M; ++j) out.data()[b * M + j] = a.data()[b * M + j] + u.data()[j];
  return record_op("add_bias", {a, u}, out, [](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(2);
    if (need[0]) gs[0] = g;
    if (need[1]) gs[1] = col_sum(g);
    return gs;
  });
}

Tensor sub_per_row(const Tensor& a, const Tensor& v) {
  check_mat_vec("sub_per_row", a, v, 0);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < M; ++j) out.data()[b * M + j] = a.data()[b * M + j] - v.data()[b];
  return record_op("sub_per_row", {a, v}, out,
                   [](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = g;
                     if (need[1]) gs[1] = neg(row_sum(g));
                     return gs;
                   });
}

Tensor div_per_row(const Tensor& a, const Tensor& v) {
  check_mat_vec("div_per_row", a, v, 0);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < M; ++j) out.data()[b * M + j] = a.data()[b * M + j] / v.data()[b];
  return record_op("div_per_row", {a, v}, out,
                   [v, out](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = div_per_row(g, v);
                     if (need[1]) gs[1] = neg(div(row_sum(mul(g, out)), v));
                     return gs;
                   });
}

Tensor div_per_col(const Tensor& a, const Tensor& u) {
  check_mat_vec("div_per_col", a, u, 1);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < M; ++j) out.data()[b * M + j] = a.data()[b * M + j] / u.data()[j];
  return record_op("div_per_col", {a, u}, out,
                   [u, out](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = div_per_col(g, u);
                     if (need[1]) gs[1] = neg(div(col_sum(mul(g, out)), u));
                     return gs;
                   });
}

Tensor row_sum(const Tensor& a) {
  check_rank("row_sum", a, 2);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(Shape{B});
  for (std::int64_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::int64_t j = 0; j < M; ++j) s += a.data()[b * M + j];
    out.data()[b] = s;
  }
  return record_op("row_sum", {a}, out, [M](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = repeat_cols(g, M);
    return gs;
  });
}

Tensor col_sum(const Tensor& a) {
  check_rank("col_sum", a, 2);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(Shape{M});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < M; ++j) out.data()[j] += a.data()[b * M + j];
  return record_op("col_sum", {a}, out, [B](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = repeat_rows(g, B);
    return gs;
  });
}

Tensor repeat_cols(const Tensor& v, std::int64_t m) {
  check_rank("repeat_cols", v, 1);
  if (m < 1) throw DimensionError("repeat_cols: m must be >= 1");
  const std::int64_t B = v.dim(0);
  Tensor out = Tensor::zeros(Shape{B, m});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < m; ++j) out.data()[b * m + j] = v.data()[b];
  return record_op("repeat_cols", {v}, out, [](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = row_sum(g);
    return gs;
  });
}

Tensor repeat_rows(const Tensor& u, std::int64_t b) {
  check_rank("repeat_rows", u, 1);
  if (b < 1) throw DimensionError("repeat_rows: b must be >= 1");
  const std::int64_t M = u.dim(0);
  Tensor out = Tensor::zeros(Shape{b, M});
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < M; ++j) out.data()[i * M + j] = u.data()[j];
  return record_op("repeat_rows", {u}, out, [](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = col_sum(g);
    return gs;
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) s += pa[i];
  Tensor out = Tensor::scalar(s);
  Shape orig = a.shape();
  return record_op("sum_all", {a}, out, [orig](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = broadcast_scalar(g, orig, 1.0);
    return gs;
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor broadcast_scalar(const Tensor& s, Shape shape, double factor) {
  if (s.size() != 1) throw DimensionError("broadcast_scalar: source must be one-element");
  Tensor out = Tensor::full(shape, s.data()[0] * factor);
  return record_op("broadcast_scalar", {s}, out,
                   [factor](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(1);
                     if (need[0]) gs[0] = scale(sum_all(g), factor);
                     return gs;
                   });
}

Tensor row_max_detached(const Tensor& a) {
  check_rank("row_max_detached", a, 2);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  Tensor out = Tensor::zeros(Shape{B});
  for (std::int64_t b = 0; b < B; ++b) {
    double m = a.data()[b * M];
    for (std::int64_t j = 1; j < M; ++j) m = std::max(m, a.data()[b * M + j]);
    out.data()[b] = m;
  }
  return out;  // deliberately never recorded
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& labels) {
  check_rank("gather_rows", a, 2);
  const std::int64_t B = a.dim(0), M = a.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw DimensionError("gather_rows: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " rows");
  for (int y : labels)
    if (y < 0 || y >= M)
      throw IndexError("gather_rows: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(M) + ")");
  Tensor out = Tensor::zeros(Shape{B});
  for (std::int64_t b = 0; b < B; ++b) out.data()[b] = a.data()[b * M + labels[static_cast<std::size_t>(b)]];
  return record_op("gather_rows", {a}, out,
                   [labels, M](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(1);
                     if (need[0]) gs[0] = scatter_rows(g, labels, M);
                     return gs;
                   });
}

Tensor scatter_rows(const Tensor& v, const std::vector<int>& labels, std::int64_t m) {
  check_rank("scatter_rows", v, 1);
  const std::int64_t B = v.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw DimensionError("scatter_rows: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= m) throw IndexError("scatter_rows: label outside [0, " + std::to_string(m) + ")");
  Tensor out = Tensor::zeros(Shape{B, m});
  for (std::int64_t b = 0; b < B; ++b) out.data()[b * m + labels[static_cast<std::size_t>(b)]] = v.data()[b];
  return record_op("scatter_rows", {v}, out,
                   [labels](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(1);
                     if (need[0]) gs[0] = gather_rows(g, labels);
                     return gs;
                   });
}

// ---- linear algebra -------------------------------------------------------------

namespace {
void check_matmul(const char* op, const Tensor& a, const Tensor& b, std::int64_t ka,
                  std::int64_t kb) {
  if (ka != kb)
    throw DimensionError(std::string(op) + ": inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  check_matmul("matmul", a, b, a.dim(1), b.dim(0));
  const std::int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros(Shape{M, N});
  detail::gemm_nn(a.data(), b.data(), out.data(), M, K, N, false);
  return record_op("matmul", {a, b}, out,
                   [a, b](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = matmul_nt(g, b);
                     if (need[1]) gs[1] = matmul_tn(a, g);
                     return gs;
                   });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank("matmul_nt", a, 2);
  check_rank("matmul_nt", b, 2);
  check_matmul("matmul_nt", a, b, a.dim(1), b.dim(1));
  const std::int64_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
  Tensor out = Tensor::zeros(Shape{M, N});
  detail::gemm_nt(a.data(), b.data(), out.data(), M, K, N, false);
  return record_op("matmul_nt", {a, b}, out,
                   [a, b](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = matmul(g, b);
                     if (need[1]) gs[1] = matmul_tn(g, a);
                     return gs;
                   });
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_rank("matmul_tn", a, 2);
  check_rank("matmul_tn", b, 2);
  check_matmul("matmul_tn", a, b, a.dim(0), b.dim(0));
  const std::int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros(Shape{K, N});
  detail::gemm_tn(a.data(), b.data(), out.data(), M, K, N, false);
  return record_op("matmul_tn", {a, b}, out,
                   [a, b](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = matmul_nt(b, g);
                     if (need[1]) gs[1] = matmul(a, g);
                     return gs;
                   });
}

// ---- neural-net ops ----------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t B, C, H, W, K, kh, kw, Ho, Wo;
  int stride, padding;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  check_rank("conv2d", x, 4);
  check_rank("conv2d", w, 4);
  check_rank("conv2d", bias, 1);
  if (x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " != filter channels " + std::to_string(w.dim(1)));
  if (bias.dim(0) != w.dim(0))
    throw DimensionError("conv2d: bias length " + std::to_string(bias.dim(0)) + " != filters " +
                         std::to_string(w.dim(0)));
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  ConvDims d;
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.K = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.padding = padding;
  if (d.H + 2 * padding < d.kh || d.W + 2 * padding < d.kw)
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
  return d;
}

// Patch matrix for one image: rows indexed by (c, dh, dw), columns by output
// position. Row-index order matches the naive summation order. `ld` is the
// row stride of the destination, so one image can fill a column block of a
// whole-batch matrix.
void im2col(const double* img, const ConvDims& d, double* cols, std::int64_t ld) {
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < d.C; ++c) {
    const double* ch = img + c * d.H * d.W;
    for (std::int64_t dh = 0; dh < d.kh; ++dh) {
      for (std::int64_t dw = 0; dw < d.kw; ++dw, ++r) {
        double* row = cols + r * ld;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * d.stride + dh - d.padding;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * d.stride + dw - d.padding;
            row[oh * d.Wo + ow] = (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W)
                                      ? ch[ih * d.W + iw]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvDims& d, std::int64_t ld, double* img) {
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < d.C; ++c) {
    double* ch = img + c * d.H * d.W;
    for (std::int64_t dh = 0; dh < d.kh; ++dh) {
      for (std::int64_t dw = 0; dw < d.kw; ++dw, ++r) {
        const double* row = cols + r * ld;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * d.stride + dh - d.padding;
          if (ih < 0 || ih >= d.H) continue;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * d.stride + dw - d.padding;
            if (iw < 0 || iw >= d.W) continue;
            ch[ih * d.W + iw] += row[oh * d.Wo + ow];
          }
        }
      }
    }
  }
}

// Reused per-thread GEMM staging buffers; each worker thread gets its own, so
// concurrent meta-batch workers never share scratch.
std::vector<double>& conv_scratch(int which, std::size_t n) {
  thread_local std::vector<double> bufs[2];
  if (bufs[which].size() < n) bufs[which].resize(n);
  return bufs[which];
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  const ConvDims d = conv_dims(x, w, bias, stride, padding);
  const std::int64_t P = d.Ho * d.Wo, CKK = d.C * d.kh * d.kw;
  // The per-sample patch matrices are kept for the backward pass, which needs
  // exactly the same patches for the filter gradient. Keeping the GEMMs
  // per-sample keeps every working set inside the cache.
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(d.B * CKK * P));
  Tensor out = Tensor::zeros(Shape{d.B, d.K, d.Ho, d.Wo});
  for (std::int64_t b = 0; b < d.B; ++b) {
    double* cb = cols->data() + b * CKK * P;
    im2col(x.data() + b * d.C * d.H * d.W, d, cb, P);
    double* ob = out.data() + b * d.K * P;
    for (std::int64_t k = 0; k < d.K; ++k)
      std::fill(ob + k * P, ob + (k + 1) * P, bias.data()[k]);
    detail::gemm_nn(w.data(), cb, ob, d.K, CKK, P, true);
  }
  const Shape x_shape = x.shape(), w_shape = w.shape();
  return record_op(
      "conv2d", {x, w, bias}, out,
      [w, cols, d, x_shape, w_shape](const Tensor& g, const std::vector<char>& need) {
        require_first_order("conv2d");
        const std::int64_t P = d.Ho * d.Wo, CKK = d.C * d.kh * d.kw;
        std::vector<Tensor> gs(3);
        if (need[0]) gs[0] = Tensor::zeros(x_shape);
        if (need[1]) gs[1] = Tensor::zeros(w_shape);
        if (need[2]) {
          gs[2] = Tensor::zeros(Shape{d.K});
          for (std::int64_t b = 0; b < d.B; ++b) {
            const double* gb = g.data() + b * d.K * P;
            for (std::int64_t k = 0; k < d.K; ++k) {
              double s = 0.0;
              for (std::int64_t p = 0; p < P; ++p) s += gb[k * P + p];
              gs[2].data()[k] += s;
            }
          }
        }
        if (need[0] || need[1]) {
          std::vector<double>& gcols = conv_scratch(0, static_cast<std::size_t>(CKK * P));
          std::vector<double>& colsT = conv_scratch(1, static_cast<std::size_t>(CKK * P));
          for (std::int64_t b = 0; b < d.B; ++b) {
            const double* gb = g.data() + b * d.K * P;
            const double* cb = cols->data() + b * CKK * P;
            if (need[1]) {
              // dW[k,c] = sum_p g[k,p]·cols[c,p]; feeding the transposed patch
              // block through the row-major kernel keeps the p-sweep in unit
              // stride, which the straight dot-product form cannot achieve.
              for (std::int64_t c = 0; c < CKK; ++c)
                for (std::int64_t p = 0; p < P; ++p) colsT[p * CKK + c] = cb[c * P + p];
              detail::gemm_nn(gb, colsT.data(), gs[1].data(), d.K, P, CKK, true);
            }
            if (need[0]) {
              detail::gemm_tn(w.data(), gb, gcols.data(), d.K, CKK, P, false);
              col2im_add(gcols.data(), d, P, gs[0].data() + b * d.C * d.H * d.W);
            }
          }
        }
        return gs;
      });
}

Tensor scale_filters(const Tensor& w, const Tensor& s) {
  if (w.rank() < 1) throw DimensionError("scale_filters: weight must have rank >= 1");
  check_rank("scale_filters", s, 1);
  const std::int64_t K = w.dim(0);
  if (s.dim(0) != K)
    throw BindingError("scale_filters: " + std::to_string(s.dim(0)) + " scales for " +
                       std::to_string(K) + " filters");
  const std::int64_t Q = w.size() / K;
  Tensor out = Tensor::zeros(w.shape());
  for (std::int64_t k = 0; k < K; ++k)
    for (std::int64_t q = 0; q < Q; ++q) out.data()[k * Q + q] = w.data()[k * Q + q] * s.data()[k];
  return record_op("scale_filters", {w, s}, out,
                   [w, s, K, Q](const Tensor& g, const std::vector<char>& need) {
                     std::vector<Tensor> gs(2);
                     if (need[0]) gs[0] = scale_filters(g, s);
                     if (need[1])
                       gs[1] = row_sum(mul(reshape(g, Shape{K, Q}), reshape(w, Shape{K, Q})));
                     return gs;
                   });
}

Tensor max_pool2d(const Tensor& x) {
  check_rank("max_pool2d", x, 4);
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = H / 2, Wo = W / 2;
  if (Ho < 1 || Wo < 1)
    throw DimensionError("max_pool2d: input " + shape_str(x.shape()) + " smaller than 2x2 window");
  Tensor out = Tensor::zeros(Shape{B, C, Ho, Wo});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(B * C * Ho * Wo));
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* im = px + bc * H * W;
    for (std::int64_t oh = 0; oh < Ho; ++oh) {
      for (std::int64_t ow = 0; ow < Wo; ++ow) {
        std::int64_t best = (2 * oh) * W + 2 * ow;
        double bv = im[best];
        const std::int64_t cand[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                      (2 * oh + 1) * W + 2 * ow + 1};
        for (std::int64_t c : cand) {
          if (im[c] > bv) {
            bv = im[c];
            best = c;
          }
        }
        po[bc * Ho * Wo + oh * Wo + ow] = bv;
        arg[static_cast<std::size_t>(bc * Ho * Wo + oh * Wo + ow)] = best;
      }
    }
  }
  Shape in_shape = x.shape();
  return record_op("max_pool2d", {x}, out,
                   [arg, in_shape, B, C, H, W, Ho, Wo](const Tensor& g,
                                                       const std::vector<char>& need) {
                     require_first_order("max_pool2d");
                     std::vector<Tensor> gs(1);
                     if (need[0]) {
                       gs[0] = Tensor::zeros(in_shape);
                       for (std::int64_t bc = 0; bc < B * C; ++bc)
                         for (std::int64_t p = 0; p < Ho * Wo; ++p)
                           gs[0].data()[bc * H * W + arg[static_cast<std::size_t>(bc * Ho * Wo + p)]] +=
                               g.data()[bc * Ho * Wo + p];
                     }
                     return gs;
                   });
}

Tensor mean_pool(const Tensor& x) {
  check_rank("mean_pool", x, 4);
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros(Shape{B, C});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    for (std::int64_t p = 0; p < HW; ++p) s += x.data()[bc * HW + p];
    out.data()[bc] = s / static_cast<double>(HW);
  }
  Shape in_shape = x.shape();
  return record_op("mean_pool", {x}, out,
                   [in_shape, B, C, HW](const Tensor& g, const std::vector<char>& need) {
                     require_first_order("mean_pool");
                     std::vector<Tensor> gs(1);
                     if (need[0]) {
                       gs[0] = Tensor::zeros(in_shape);
                       for (std::int64_t bc = 0; bc < B * C; ++bc)
                         for (std::int64_t p = 0; p < HW; ++p)
                           gs[0].data()[bc * HW + p] = g.data()[bc] / static_cast<double>(HW);
                     }
                     return gs;
                   });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_rank("batch_norm", x, 4);
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_rank("batch_norm", gamma, 1);
  check_rank("batch_norm", beta, 1);
  if (gamma.dim(0) != C || beta.dim(0) != C)
    throw DimensionError("batch_norm: scale/shift must have one entry per channel");
  if (B < 2)
    throw DegenerateBatchError("batch_norm: batch of " + std::to_string(B) +
                               " has no usable batch statistics (need >= 2)");
  const std::int64_t N = B * H * W, HW = H * W;
  Tensor out = Tensor::zeros(x.shape());
  Tensor xhat = Tensor::zeros(x.shape());
  // Sweeps run in memory order (b outer, c inner); each channel still
  // accumulates its terms batch-major, position-minor.
  std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* px = x.data() + (b * C + c) * HW;
      double& m = mean[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < HW; ++p) m += px[p];
    }
  for (double& m : mean) m /= static_cast<double>(N);
  std::vector<double> var(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* px = x.data() + (b * C + c) * HW;
      const double mc = mean[static_cast<std::size_t>(c)];
      double& v = var[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < HW; ++p) {
        const double dv = px[p] - mc;
        v += dv * dv;
      }
    }
  std::vector<double> invstd(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c)
    invstd[static_cast<std::size_t>(c)] =
        1.0 / std::sqrt(var[static_cast<std::size_t>(c)] / static_cast<double>(N) + eps);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* px = x.data() + (b * C + c) * HW;
      double* ph = xhat.data() + (b * C + c) * HW;
      double* po = out.data() + (b * C + c) * HW;
      const double mc = mean[static_cast<std::size_t>(c)];
      const double is = invstd[static_cast<std::size_t>(c)];
      const double gc = gamma.data()[c], bc = beta.data()[c];
      for (std::int64_t p = 0; p < HW; ++p) {
        const double xh = (px[p] - mc) * is;
        ph[p] = xh;
        po[p] = gc * xh + bc;
      }
    }
  return record_op(
      "batch_norm", {x, gamma, beta}, out,
      [xhat, gamma, invstd, B, C, H, W, N](const Tensor& g, const std::vector<char>& need) {
        require_first_order("batch_norm");
        const std::int64_t HW = H * W;
        std::vector<Tensor> gs(3);
        std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0);
        std::vector<double> sum_gx(static_cast<std::size_t>(C), 0.0);
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c) {
            const double* pg = g.data() + (b * C + c) * HW;
            const double* ph = xhat.data() + (b * C + c) * HW;
            double& sg = sum_g[static_cast<std::size_t>(c)];
            double& sgx = sum_gx[static_cast<std::size_t>(c)];
            for (std::int64_t p = 0; p < HW; ++p) {
              sg += pg[p];
              sgx += pg[p] * ph[p];
            }
          }
        if (need[1]) {
          gs[1] = Tensor::zeros(Shape{C});
          for (std::int64_t c = 0; c < C; ++c)
            gs[1].data()[c] = sum_gx[static_cast<std::size_t>(c)];
        }
        if (need[2]) {
          gs[2] = Tensor::zeros(Shape{C});
          for (std::int64_t c = 0; c < C; ++c)
            gs[2].data()[c] = sum_g[static_cast<std::size_t>(c)];
        }
        if (need[0]) {
          gs[0] = Tensor::zeros(xhat.shape());
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c) {
              const double* pg = g.data() + (b * C + c) * HW;
              const double* ph = xhat.data() + (b * C + c) * HW;
              double* pd = gs[0].data() + (b * C + c) * HW;
              const double k = gamma.data()[c] * invstd[static_cast<std::size_t>(c)] /
                               static_cast<double>(N);
              const double sg = sum_g[static_cast<std::size_t>(c)];
              const double sgx = sum_gx[static_cast<std::size_t>(c)];
              for (std::int64_t p = 0; p < HW; ++p)
                pd[p] = k * (static_cast<double>(N) * pg[p] - sg - ph[p] * sgx);
            }
        }
        return gs;
      });
}

Tensor dropout(const Tensor& x, double keep_prob, Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw ContractError("dropout: keep_prob must be in (0, 1], got " + std::to_string(keep_prob));
  Tensor mask = Tensor::zeros(x.shape());
  const double inv = 1.0 / keep_prob;
  for (std::int64_t i = 0; i < x.size(); ++i)
    mask.data()[i] = rng.uniform() < keep_prob ? inv : 0.0;
  Tensor out = map2("dropout", x, mask, [](double a, double m) { return a * m; });
  return record_op("dropout", {x}, out, [mask](const Tensor& g, const std::vector<char>& need) {
    std::vector<Tensor> gs(1);
    if (need[0]) gs[0] = mul(g, mask);
    return gs;
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_rank("softmax_cross_entropy", logits, 2);
  const std::int64_t B = logits.dim(0), M = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(B) + " rows");
  for (int y : labels)
    if (y < 0 || y >= M)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(M) + ")");
  // log-sum-exp with a detached shift: exact for any shift, so gradients of
  // every order pass through the remaining (recorded) ops untouched.
  Tensor m = row_max_detached(logits);
  Tensor z = sub_per_row(logits, m);
  Tensor lse = add(log(row_sum(exp(z))), m);
  Tensor picked = gather_rows(logits, labels);
  return mean_all(sub(lse, picked));
}

std::vector<int> argmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("argmax_rows: expected rank 2");
  const std::int64_t B = a.dim(0), M = a.dim(1);
  std::vector<int> out(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    int best = 0;
    double bv = a.data()[b * M];
    for (std::int64_t j = 1; j < M; ++j) {
      if (a.data()[b * M + j] > bv) {
        bv = a.data()[b * M + j];
        best = static_cast<int>(j);
      }
    }
    out[static_cast<std::size_t>(b)] = best;
  }
  return out;
}

}  // namespace mtl
