#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lplab/toydata.hpp"

using namespace lplab;
namespace fs = std::filesystem;

namespace {

// Naive separable DFT power spectrum of the luma plane (test-side oracle,
// independent of the FFTW-based implementation in evalsuite).
std::vector<double> dft_power_grid(const Tensor<float>& images, int index) {
  int H = images.dim(2), W = images.dim(3);
  int64_t hw = static_cast<int64_t>(H) * W;
  const float* r = images.ptr() + static_cast<int64_t>(index) * 3 * hw;
  const float* g = r + hw;
  const float* b = g + hw;
  std::vector<std::complex<double>> rows(static_cast<size_t>(hw));
  for (int y = 0; y < H; ++y)
    for (int kx = 0; kx < W; ++kx) {
      std::complex<double> acc = 0.0;
      for (int x = 0; x < W; ++x) {
        double v = 0.299 * r[static_cast<int64_t>(y) * W + x] + 0.587 * g[static_cast<int64_t>(y) * W + x] +
                   0.114 * b[static_cast<int64_t>(y) * W + x];
        double ang = -2.0 * M_PI * kx * x / W;
        acc += v * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      rows[static_cast<size_t>(y) * W + kx] = acc;
    }
  std::vector<double> power(static_cast<size_t>(hw));
  for (int kx = 0; kx < W; ++kx)
    for (int ky = 0; ky < H; ++ky) {
      std::complex<double> acc = 0.0;
      for (int y = 0; y < H; ++y) {
        double ang = -2.0 * M_PI * ky * y / H;
        acc += rows[static_cast<size_t>(y) * W + kx] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      power[static_cast<size_t>(ky) * W + kx] = std::norm(acc);
    }
  return power;
}

double radial_centroid(const std::vector<double>& power, int H, int W) {
  double num = 0.0, den = 0.0;
  for (int ky = 0; ky < H; ++ky) {
    int fy = ky <= H / 2 ? ky : ky - H;
    for (int kx = 0; kx < W; ++kx) {
      int fx = kx <= W / 2 ? kx : kx - W;
      double rad = std::sqrt(static_cast<double>(fy) * fy + static_cast<double>(fx) * fx);
      if (rad < 0.5) continue;  // skip DC
      double p = power[static_cast<size_t>(ky) * W + kx];
      num += rad * p;
      den += p;
    }
  }
  return num / den;
}

}  // namespace

TEST_CASE("generated corpus matches the contract shape and range") {
  DataSpec spec;
  spec.count = 128;
  spec.resolution = 64;
  ImageSet set = generate_textured_dataset(spec);
  CHECK(set.count() == 128);
  CHECK(set.images.shape() == std::vector<int>({128, 3, 64, 64}));
  float lo = 1e9f, hi = -1e9f;
  for (int64_t i = 0; i < set.images.numel(); ++i) {
    lo = std::min(lo, set.images[i]);
    hi = std::max(hi, set.images[i]);
  }
  CHECK(lo >= -1.0f);
  CHECK(hi <= 1.0f);
  for (int i = 0; i < set.count(); ++i) CHECK(set.labels[static_cast<size_t>(i)] == i % 4);
}

TEST_CASE("zero texture amplitude leaves almost no high-frequency power") {
  DataSpec spec;
  spec.count = 12;
  spec.resolution = 64;
  spec.texture_amplitude = 0.0;
  spec.seed = 3;
  ImageSet set = generate_textured_dataset(spec);
  double nyquist = 32.0;
  for (int i = 0; i < set.count(); ++i) {
    std::vector<double> power = dft_power_grid(set.images, i);
    double total = 0.0, high = 0.0;
    for (int ky = 0; ky < 64; ++ky) {
      int fy = ky <= 32 ? ky : ky - 64;
      for (int kx = 0; kx < 64; ++kx) {
        int fx = kx <= 32 ? kx : kx - 64;
        double rad = std::sqrt(static_cast<double>(fy) * fy + static_cast<double>(fx) * fx);
        double p = power[static_cast<size_t>(ky) * 64 + kx];
        total += p;
        if (rad > 0.25 * nyquist) high += p;
      }
    }
    CHECK(high / total < 0.01);
  }
}

TEST_CASE("same seed gives a bit-identical corpus") {
  DataSpec spec;
  spec.count = 400;
  spec.classes = 4;
  spec.seed = 7;
  ImageSet a = generate_textured_dataset(spec);
  ImageSet b = generate_textured_dataset(spec);
  REQUIRE(a.images.numel() == b.images.numel());
  bool identical = true;
  for (int64_t i = 0; i < a.images.numel(); ++i) identical &= (a.images[i] == b.images[i]);
  CHECK(identical);
  CHECK(a.labels == b.labels);
}

TEST_CASE("raising the texture frequency band raises the spectral centroid") {
  DataSpec low;
  low.count = 100;
  low.texture_freq_min = 4.0;
  low.texture_freq_max = 8.0;
  low.seed = 11;
  DataSpec high = low;
  high.texture_freq_min = 16.0;
  high.texture_freq_max = 24.0;
  ImageSet a = generate_textured_dataset(low);
  ImageSet b = generate_textured_dataset(high);
  double ca = 0.0, cb = 0.0;
  for (int i = 0; i < 100; ++i) {
    ca += radial_centroid(dft_power_grid(a.images, i), 64, 64);
    cb += radial_centroid(dft_power_grid(b.images, i), 64, 64);
  }
  CHECK(cb / 100.0 > ca / 100.0);
}

TEST_CASE("invalid specs are rejected") {
  DataSpec s;
  s.count = 0;
  CHECK_THROWS_AS(generate_textured_dataset(s), ConfigError);
  DataSpec r;
  r.resolution = 62;
  CHECK_THROWS_AS(generate_textured_dataset(r), ConfigError);
  DataSpec f;
  f.texture_freq_max = 40.0;  // beyond Nyquist at 64
  CHECK_THROWS_AS(generate_textured_dataset(f), ConfigError);
}

TEST_CASE("png round trip and folder ingestion") {
  fs::path dir = fs::temp_directory_path() / "lplab_toydata_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  DataSpec spec;
  spec.count = 10;
  spec.resolution = 64;
  spec.seed = 21;
  ImageSet set = generate_textured_dataset(spec);
  save_image_set(set, spec, (dir / "ds").string());
  ImageSet loaded = load_image_set((dir / "ds").string());
  CHECK(loaded.count() == 10);
  CHECK(loaded.labels == set.labels);
  double max_err = 0.0;
  for (int64_t i = 0; i < set.images.numel(); ++i)
    max_err = std::max(max_err, std::abs(double(loaded.images[i]) - double(set.images[i])));
  CHECK(max_err <= 1.0 / 127.5 + 1e-6);  // 8-bit quantization

  // Folder ingestion of the same files.
  ImageSet folder = load_image_folder((dir / "ds").string(), 64);
  CHECK(folder.count() == 10);
  for (int l : folder.labels) CHECK(l == 0);

  // Downscale path: 128-px inputs, 64-px request.
  DataSpec big = spec;
  big.resolution = 128;
  big.count = 3;
  ImageSet bigset = generate_textured_dataset(big);
  save_image_set(bigset, big, (dir / "big").string());
  ImageSet shrunk = load_image_folder((dir / "big").string(), 64);
  CHECK(shrunk.images.shape() == std::vector<int>({3, 3, 64, 64}));

  // Corrupt file is reported by name.
  fs::path corrupt = dir / "ds" / "img_00003.png";
  {
    std::ofstream f(corrupt, std::ios::trunc);
    f << "not a png";
  }
  try {
    load_image_folder((dir / "ds").string(), 64);
    CHECK(false);
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("img_00003.png") != std::string::npos);
  }

  // Empty folder.
  fs::create_directories(dir / "empty");
  CHECK_THROWS_AS(load_image_folder((dir / "empty").string(), 64), IngestError);
  fs::remove_all(dir);
}
