#pragma once

#include <cstdint>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

class Rng;

// All ops are pure: they allocate a fresh output and never alias inputs.
// When a tape is active, recording is enabled, and any input requires grad,
// the op records itself; gradient rules are themselves expressed with these
// ops wherever a gradient may need to be differentiated again.

// ---- elementwise (same shape unless stated) --------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);       // a * c
Tensor addc(const Tensor& a, double c);        // a + c
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor scale_by(const Tensor& a, const Tensor& s);  // a * s, s one-element

// ---- structure -------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor flatten2d(const Tensor& a);  // [B, ...] -> [B, prod(...)]

// ---- 2-D helpers: a is [B x M], v is [B], u is [M] -------------------------
Tensor add_bias(const Tensor& a, const Tensor& u);     // a[b,j] + u[j]
Tensor sub_per_row(const Tensor& a, const Tensor& v);  // a[b,j] - v[b]
Tensor div_per_row(const Tensor& a, const Tensor& v);  // a[b,j] / v[b]
Tensor div_per_col(const Tensor& a, const Tensor& u);  // a[b,j] / u[j]
Tensor row_sum(const Tensor& a);                       // -> [B]
Tensor col_sum(const Tensor& a);                       // -> [M]
Tensor repeat_cols(const Tensor& v, std::int64_t m);   // [B] -> [B x m]
Tensor repeat_rows(const Tensor& u, std::int64_t b);   // [M] -> [b x M]
Tensor sum_all(const Tensor& a);                       // -> [1]
Tensor mean_all(const Tensor& a);                      // -> [1]
// s one-element -> tensor of `shape` filled with s * factor
Tensor broadcast_scalar(const Tensor& s, Shape shape, double factor);
// Row-wise max as a constant (not differentiated; used for stable softmax,
// where any fixed shift gives the identical function and gradients).
Tensor row_max_detached(const Tensor& a);
Tensor gather_rows(const Tensor& a, const std::vector<int>& labels);  // -> [B]
Tensor scatter_rows(const Tensor& v, const std::vector<int>& labels, std::int64_t m);

// ---- linear algebra (2-D) --------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);     // [MxK]·[KxN]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [MxK]·[NxK]^T -> [MxN]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [MxK]^T·[MxN] -> [KxN]

// ---- neural-net ops --------------------------------------------------------
// Cross-correlation. x [B,C,H,W], w [K,C,kh,kw], bias [K].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1,
              int padding = 0);
// Per-output-filter modulation: out[k,...] = w[k,...] * s[k].
Tensor scale_filters(const Tensor& w, const Tensor& s);
// 2x2 window max, stride 2; trailing odd row/column is dropped.
Tensor max_pool2d(const Tensor& x);
// Spatial mean: [B,C,H,W] -> [B,C].
Tensor mean_pool(const Tensor& x);
// Per-channel batch statistics (training mode; batch must be >= 2).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12);
// Inverted dropout: kept activations are scaled by 1/keep_prob.
Tensor dropout(const Tensor& x, double keep_prob, Rng& rng);
// Mean cross-entropy of softmax(logits) against integer labels, stabilized
// by row-max subtraction. logits [B,M], labels in [0,M).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---- plain helpers (no autograd) -------------------------------------------
std::vector<int> argmax_rows(const Tensor& a);  // ties -> lowest index

}  // namespace mtl
