#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "lplab/outlier_mask.hpp"
#include "lplab/rng.hpp"

using namespace lplab;

namespace {

// Independent brute-force oracle: sort-based order statistics and naive
// sliding-window maxima.
std::vector<float> oracle_mask(const std::vector<float>& f, int H, int W,
                               const OutlierMaskParams& p) {
  int opening = static_cast<int>(std::ceil(double(p.opening) / p.down_f));
  int closing = static_cast<int>(std::ceil(double(p.closing) / p.down_f));
  if (opening == 2) opening = 3;
  if (closing == 2) closing = 1;

  int64_t n = static_cast<int64_t>(H) * W;
  std::vector<float> sorted = f;
  std::sort(sorted.begin(), sorted.end());
  int64_t k1 = std::clamp<int64_t>(static_cast<int64_t>(n * p.quant), 1, n);
  int64_t k2 = std::clamp<int64_t>(static_cast<int64_t>(n * (1.0 - p.quant)), 1, n);
  float q1 = sorted[static_cast<size_t>(k1 - 1)];
  float q2 = sorted[static_cast<size_t>(k2 - 1)];

  double mean = 0;
  for (float v : f) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (float v : f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  float m = static_cast<float>(2.0 * std::sqrt(var));

  std::vector<float> keep(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    keep[static_cast<size_t>(i)] = (f[static_cast<size_t>(i)] >= q1 - m && f[static_cast<size_t>(i)] <= q2 + m) ? 1.0f : 0.0f;

  auto win_max = [&](const std::vector<float>& in, int k) {
    std::vector<float> out(static_cast<size_t>(n));
    int pad = (k - 1) / 2;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float best = -1e30f;
        for (int dy = -pad; dy < k - pad; ++dy)
          for (int dx = -pad; dx < k - pad; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            best = std::max(best, in[static_cast<size_t>(yy) * W + xx]);
          }
        out[static_cast<size_t>(y) * W + x] = best;
      }
    return out;
  };
  if (closing > 1) keep = win_max(keep, closing);
  if (opening > 1) {
    std::vector<float> neg(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) neg[static_cast<size_t>(i)] = -keep[static_cast<size_t>(i)];
    neg = win_max(neg, opening);
    for (int64_t i = 0; i < n; ++i) keep[static_cast<size_t>(i)] = -neg[static_cast<size_t>(i)];
  }
  return keep;
}

// Places a 3x3 patch of `value` with its top-left corner at (y, x).
void inject_patch(Tensor<float>& map, int y, int x, float value) {
  int W = map.dim(map.ndim() - 1);
  for (int dy = 0; dy < 3; ++dy)
    for (int dx = 0; dx < 3; ++dx) map[static_cast<int64_t>(y + dy) * W + x + dx] = value;
}

}  // namespace

TEST_CASE("k-th order statistic uses 1-based floor indexing") {
  std::vector<float> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<size_t>(i)] = static_cast<float>(100 - i);
  // N=100, quant=0.02 -> k1 = 2 -> second smallest value.
  CHECK(detail_mask::kth_value(v, 2) == doctest::Approx(2.0f));
  CHECK(detail_mask::kth_value(v, 98) == doctest::Approx(98.0f));
}

TEST_CASE("spiked standard-normal map: patch masked, inliers kept, oracle-exact") {
  Rng rng(100);
  int masked_trials = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> map = rng.randn<float>({32, 32});
    inject_patch(map, 5 + trial % 20, 7 + trial % 17, 1000.0f);
    OutlierMaskParams p;
    auto res = detect_outliers(map, p);

    std::vector<float> flat(map.ptr(), map.ptr() + map.numel());
    std::vector<float> om = oracle_mask(flat, 32, 32, p);
    bool exact = true;
    for (int64_t i = 0; i < map.numel(); ++i) exact &= (res.mask[i] == om[static_cast<size_t>(i)]);
    CHECK(exact);

    bool patch_masked = true;
    int W = 32;
    for (int dy = 0; dy < 3; ++dy)
      for (int dx = 0; dx < 3; ++dx)
        patch_masked &= res.mask[static_cast<int64_t>(5 + trial % 20 + dy) * W + 7 + trial % 17 + dx] == 0.0f;
    masked_trials += patch_masked ? 1 : 0;

    int64_t kept = 0, inliers = 0;
    for (int64_t i = 0; i < map.numel(); ++i) {
      if (map[i] == 1000.0f) continue;
      ++inliers;
      kept += res.mask[i] > 0.0f ? 1 : 0;
    }
    CHECK(static_cast<double>(kept) / static_cast<double>(inliers) >= 0.95);
  }
  CHECK(masked_trials == 20);
}

TEST_CASE("constant map keeps everything bitwise") {
  Tensor<float> map = Tensor<float>::full({16, 16}, 3.25f);
  auto res = detect_outliers(map, OutlierMaskParams{});
  for (int64_t i = 0; i < map.numel(); ++i) {
    CHECK(res.mask[i] == 1.0f);
    CHECK(res.masked_features[i] == map[i]);
  }
}

TEST_CASE("clean standard-normal maps keep at least 90 percent") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> map = rng.randn<float>({32, 32});
    auto res = detect_outliers(map, OutlierMaskParams{});
    int64_t kept = 0;
    for (int64_t i = 0; i < map.numel(); ++i) kept += res.mask[i] > 0.0f ? 1 : 0;
    CHECK(static_cast<double>(kept) / static_cast<double>(map.numel()) >= 0.90);
  }
}

TEST_CASE("mask monotone in spike magnitude") {
  Rng rng(11);
  Tensor<float> base = rng.randn<float>({32, 32});
  bool was_masked = false;
  for (float v : {20.0f, 100.0f, 1000.0f, 1e6f}) {
    Tensor<float> map = base.clone();
    inject_patch(map, 10, 12, v);
    auto res = detect_outliers(map, OutlierMaskParams{});
    bool masked = true;
    for (int dy = 0; dy < 3; ++dy)
      for (int dx = 0; dx < 3; ++dx) masked &= res.mask[static_cast<int64_t>(10 + dy) * 32 + 12 + dx] == 0.0f;
    if (was_masked) CHECK(masked);  // enlarging never unmasks
    was_masked = was_masked || masked;
  }
  CHECK(was_masked);
}

TEST_CASE("kernel rescale by down_f with the documented special cases") {
  // down_f=4: opening ceil(5/4)=2 -> 3, closing ceil(3/4)=1. With closing=1
  // a single-pixel spike survives thresholding and is widened by the opening.
  Rng rng(13);
  Tensor<float> map = rng.randn<float>({16, 16});
  map[static_cast<int64_t>(8) * 16 + 8] = 1000.0f;
  OutlierMaskParams p;
  p.down_f = 4;
  auto res = detect_outliers(map, p);
  CHECK(res.mask[static_cast<int64_t>(8) * 16 + 8] == 0.0f);

  // Same spike at down_f=1: the closing pass treats the lone pixel as noise.
  auto res1 = detect_outliers(map, OutlierMaskParams{});
  CHECK(res1.mask[static_cast<int64_t>(8) * 16 + 8] == 1.0f);
}

TEST_CASE("per-channel batched application matches single-map calls") {
  Rng rng(17);
  Tensor<float> maps = rng.randn<float>({2, 3, 16, 16});
  auto res = detect_outliers(maps, OutlierMaskParams{});
  for (int c = 0; c < 6; ++c) {
    Tensor<float> one({16, 16});
    std::copy_n(maps.ptr() + static_cast<int64_t>(c) * 256, 256, one.ptr());
    auto r1 = detect_outliers(one, OutlierMaskParams{});
    for (int64_t i = 0; i < 256; ++i) CHECK(res.mask[static_cast<int64_t>(c) * 256 + i] == r1.mask[i]);
  }
}

TEST_CASE("configuration errors") {
  Tensor<float> tiny = Tensor<float>::full({3, 3}, 0.0f);
  OutlierMaskParams p;
  p.opening = 9;
  CHECK_THROWS(detect_outliers(tiny, p));  // kernel larger than map

  OutlierMaskParams q;
  q.quant = 0.7;
  CHECK_THROWS(detect_outliers(tiny, q));

  OutlierMaskParams e;
  e.opening = 4;  // even after rescale
  Tensor<float> map = Tensor<float>::full({16, 16}, 0.0f);
  CHECK_THROWS(detect_outliers(map, e));
}
