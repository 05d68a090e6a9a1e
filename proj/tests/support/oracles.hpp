#pragma once

// Independent reference implementations used to verify the library. These
// deliberately avoid every code path of the implementation under test: plain
// loops over plain buffers.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mtl/tensor.hpp"

namespace oracle {

// Quadruple-nested-loop cross-correlation.
struct NaiveConvResult {
  std::vector<double> out;
  std::int64_t Ho = 0, Wo = 0;
};

inline NaiveConvResult naive_conv2d(const std::vector<double>& x, std::int64_t B, std::int64_t C,
                                    std::int64_t H, std::int64_t W, const std::vector<double>& w,
                                    std::int64_t K, std::int64_t kh, std::int64_t kw,
                                    const std::vector<double>& bias, int stride, int pad) {
  NaiveConvResult r;
  r.Ho = (H + 2 * pad - kh) / stride + 1;
  r.Wo = (W + 2 * pad - kw) / stride + 1;
  r.out.assign(static_cast<std::size_t>(B * K * r.Ho * r.Wo), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t oh = 0; oh < r.Ho; ++oh)
        for (std::int64_t ow = 0; ow < r.Wo; ++ow) {
          double acc = bias[static_cast<std::size_t>(k)];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t dh = 0; dh < kh; ++dh)
              for (std::int64_t dw = 0; dw < kw; ++dw) {
                const std::int64_t ih = oh * stride + dh - pad;
                const std::int64_t iw = ow * stride + dw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w[static_cast<std::size_t>(((k * C + c) * kh + dh) * kw + dw)] *
                       x[static_cast<std::size_t>(((b * C + c) * H + ih) * W + iw)];
              }
          r.out[static_cast<std::size_t>(((b * K + k) * r.Ho + oh) * r.Wo + ow)] = acc;
        }
  return r;
}

// Central finite differences of a scalar function with respect to one tensor.
// `f` must recompute the value from the tensor's current contents.
inline std::vector<double> fd_grad(mtl::Tensor& param, const std::function<double()>& f,
                                   double h = 1e-5) {
  std::vector<double> g(static_cast<std::size_t>(param.size()));
  for (std::int64_t i = 0; i < param.size(); ++i) {
    const double orig = param.data()[i];
    param.data()[i] = orig + h;
    const double fp = f();
    param.data()[i] = orig - h;
    const double fm = f();
    param.data()[i] = orig;
    g[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double ad, double fd) { return std::fabs(ad - fd) / (std::fabs(fd) + 1e-8); }

}  // namespace oracle
