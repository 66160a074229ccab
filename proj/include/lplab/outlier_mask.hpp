#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lplab/tensor.hpp"

namespace lplab {

struct OutlierMaskParams {
  int down_f = 1;
  int opening = 5;
  int closing = 3;
  double quant = 0.02;
};

namespace detail_mask {

// Sliding-window maximum with stride 1 and padding (k-1)/2 (odd k keeps the
// spatial size). k = 1 is the identity.
template <typename T>
void window_max(const T* in, int H, int W, int k, T* out) {
  int pad = (k - 1) / 2;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      T best = in[static_cast<int64_t>(std::max(0, y - pad)) * W + std::max(0, x - pad)];
      for (int dy = -pad; dy < k - pad; ++dy) {
        int yy = y + dy;
        if (yy < 0 || yy >= H) continue;
        for (int dx = -pad; dx < k - pad; ++dx) {
          int xx = x + dx;
          if (xx < 0 || xx >= W) continue;
          best = std::max(best, in[static_cast<int64_t>(yy) * W + xx]);
        }
      }
      out[static_cast<int64_t>(y) * W + x] = best;
    }
  }
}

// k-th smallest value, 1-based k.
template <typename T>
T kth_value(std::vector<T> v, int64_t k) {
  std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
  return v[static_cast<size_t>(k - 1)];
}

inline int rescale_kernel(int k, int down_f) {
  int r = static_cast<int>(std::ceil(static_cast<double>(k) / static_cast<double>(down_f)));
  return r;
}

}  // namespace detail_mask

template <typename T>
struct OutlierMaskResult {
  Tensor<T> mask;             // same shape as input, entries in {0,1}
  Tensor<T> masked_features;  // features * mask
};

// Quantile-thresholded outlier removal on a single 2-d map, followed by a
// sliding-window maximum (the `closing` kernel) and a negated sliding-window
// maximum (the `opening` kernel) to smooth the keep-mask. The threshold test
// keeps f in [q1 - m, q2 + m] with m = 2 * sample std, non-strict so a
// constant map is fully kept.
template <typename T>
void detect_outliers_2d(const T* f, int H, int W, const OutlierMaskParams& p, T* mask_out,
                        T* masked_out) {
  if (p.quant <= 0.0 || p.quant >= 0.5)
    throw std::invalid_argument("detect_outliers: quant must lie in (0, 0.5)");
  int opening = detail_mask::rescale_kernel(p.opening, p.down_f);
  int closing = detail_mask::rescale_kernel(p.closing, p.down_f);
  if (opening == 2) opening = 3;
  if (closing == 2) closing = 1;
  if (opening % 2 == 0 || closing % 2 == 0)
    throw std::invalid_argument("detect_outliers: rescaled kernel size must be odd");
  if (opening > H || opening > W || closing > H || closing > W)
    throw std::invalid_argument("detect_outliers: kernel larger than map");

  int64_t n = static_cast<int64_t>(H) * W;
  std::vector<T> flat(f, f + n);
  int64_t k1 = static_cast<int64_t>(static_cast<double>(n) * p.quant);
  int64_t k2 = static_cast<int64_t>(static_cast<double>(n) * (1.0 - p.quant));
  k1 = std::clamp<int64_t>(k1, 1, n);
  k2 = std::clamp<int64_t>(k2, 1, n);
  T q1 = detail_mask::kth_value(flat, k1);
  T q2 = detail_mask::kth_value(flat, k2);

  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += static_cast<double>(f[i]);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(f[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n > 1 ? n - 1 : 1);  // sample std, as in the reference
  T m = static_cast<T>(2.0 * std::sqrt(var));

  std::vector<T> keep(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    keep[static_cast<size_t>(i)] = (f[i] >= q1 - m && f[i] <= q2 + m) ? T(1) : T(0);

  std::vector<T> tmp(static_cast<size_t>(n));
  if (closing > 1) {
    detail_mask::window_max(keep.data(), H, W, closing, tmp.data());
    keep.swap(tmp);
  }
  if (opening > 1) {
    for (int64_t i = 0; i < n; ++i) tmp[static_cast<size_t>(i)] = -keep[static_cast<size_t>(i)];
    detail_mask::window_max(tmp.data(), H, W, opening, keep.data());
    for (int64_t i = 0; i < n; ++i) keep[static_cast<size_t>(i)] = -keep[static_cast<size_t>(i)];
  }

  for (int64_t i = 0; i < n; ++i) {
    mask_out[i] = keep[static_cast<size_t>(i)];
    masked_out[i] = f[i] * keep[static_cast<size_t>(i)];
  }
}

// Per-channel application over a [C,H,W] or [B,C,H,W] tensor.
template <typename T>
OutlierMaskResult<T> detect_outliers(const Tensor<T>& features, const OutlierMaskParams& p) {
  if (features.ndim() < 2) throw std::invalid_argument("detect_outliers: need at least 2 dims");
  int W = features.dim(features.ndim() - 1);
  int H = features.dim(features.ndim() - 2);
  int64_t maps = features.numel() / (static_cast<int64_t>(H) * W);
  Tensor<T> mask(features.shape());
  Tensor<T> masked(features.shape());
  for (int64_t c = 0; c < maps; ++c) {
    const T* src = features.ptr() + c * H * W;
    detect_outliers_2d(src, H, W, p, mask.ptr() + c * H * W, masked.ptr() + c * H * W);
  }
  return {std::move(mask), std::move(masked)};
}

}  // namespace lplab
