#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lplab/tensor.hpp"

namespace lplab {

enum class Resample { nearest, bilinear, bicubic, area };

inline Resample resample_from(const std::string& s) {
  if (s == "nearest") return Resample::nearest;
  if (s == "bilinear") return Resample::bilinear;
  if (s == "bicubic") return Resample::bicubic;
  if (s == "area") return Resample::area;
  throw std::invalid_argument("unknown resample method: " + s);
}

namespace detail_resample {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Catmull-Rom kernel (a = -0.5).
inline double cubic_kernel(double x) {
  x = std::abs(x);
  if (x < 1.0) return 1.0 + x * x * (1.5 * x - 2.5);
  if (x < 2.0) return 2.0 + x * (-4.0 + x * (2.5 - 0.5 * x));
  return 0.0;
}

}  // namespace detail_resample

// Single-plane resize with half-pixel center alignment. Identity when the
// sizes match (all methods hit source samples exactly).
template <typename T>
void resize_plane(const T* src, int sh, int sw, T* dst, int dh, int dw, Resample method) {
  using namespace detail_resample;
  double sy = static_cast<double>(sh) / dh, sx = static_cast<double>(sw) / dw;
  if (method == Resample::area) {
    for (int y = 0; y < dh; ++y) {
      double y0 = y * sy, y1 = (y + 1) * sy;
      for (int x = 0; x < dw; ++x) {
        double x0 = x * sx, x1 = (x + 1) * sx;
        double acc = 0.0, w = 0.0;
        for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)); ++iy) {
          double fy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          if (fy <= 0.0) continue;
          int cy = clampi(iy, 0, sh - 1);
          for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)); ++ix) {
            double fx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            if (fx <= 0.0) continue;
            int cx = clampi(ix, 0, sw - 1);
            acc += fy * fx * static_cast<double>(src[static_cast<int64_t>(cy) * sw + cx]);
            w += fy * fx;
          }
        }
        dst[static_cast<int64_t>(y) * dw + x] = static_cast<T>(acc / w);
      }
    }
    return;
  }
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      double v = 0.0;
      switch (method) {
        case Resample::nearest: {
          int iy = clampi(static_cast<int>(std::lround(fy)), 0, sh - 1);
          int ix = clampi(static_cast<int>(std::lround(fx)), 0, sw - 1);
          v = static_cast<double>(src[static_cast<int64_t>(iy) * sw + ix]);
          break;
        }
        case Resample::bilinear: {
          int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
          double wy = fy - y0, wx = fx - x0;
          int y0c = clampi(y0, 0, sh - 1), y1c = clampi(y0 + 1, 0, sh - 1);
          int x0c = clampi(x0, 0, sw - 1), x1c = clampi(x0 + 1, 0, sw - 1);
          double v00 = src[static_cast<int64_t>(y0c) * sw + x0c];
          double v01 = src[static_cast<int64_t>(y0c) * sw + x1c];
          double v10 = src[static_cast<int64_t>(y1c) * sw + x0c];
          double v11 = src[static_cast<int64_t>(y1c) * sw + x1c];
          v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
          break;
        }
        case Resample::bicubic: {
          int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
          double acc = 0.0, wsum = 0.0;
          for (int dy = -1; dy <= 2; ++dy) {
            double wy = cubic_kernel(fy - (y0 + dy));
            if (wy == 0.0) continue;
            int cy = clampi(y0 + dy, 0, sh - 1);
            for (int dx = -1; dx <= 2; ++dx) {
              double wx = cubic_kernel(fx - (x0 + dx));
              if (wx == 0.0) continue;
              int cx = clampi(x0 + dx, 0, sw - 1);
              acc += wy * wx * static_cast<double>(src[static_cast<int64_t>(cy) * sw + cx]);
              wsum += wy * wx;
            }
          }
          v = acc / wsum;
          break;
        }
        case Resample::area:
          break;  // handled above
      }
      dst[static_cast<int64_t>(y) * dw + x] = static_cast<T>(v);
    }
  }
}

// Resize every channel plane of a [B,C,H,W] tensor.
template <typename T>
Tensor<T> resize_tensor(const Tensor<T>& x, int dh, int dw, Resample method) {
  if (x.ndim() != 4) throw std::invalid_argument("resize_tensor: expected 4-d tensor");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({B, C, dh, dw});
  for (int64_t p = 0; p < static_cast<int64_t>(B) * C; ++p)
    resize_plane(x.ptr() + p * H * W, H, W, out.ptr() + p * static_cast<int64_t>(dh) * dw, dh, dw,
                 method);
  return out;
}

}  // namespace lplab
