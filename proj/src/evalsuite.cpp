#include "lplab/evalsuite.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <fftw3.h>

#include "lplab/toydata.hpp"

namespace lplab {

FeatureSet embed_for_metrics(const Tensor<float>& images, const Autoencoder<float>& ae,
                             const std::string& provenance) {
  Tensor<float> z = encode_corpus(ae, images);
  int N = z.dim(0), C = z.dim(1), r = z.dim(2);
  if (r % 4 != 0) throw std::invalid_argument("embed_for_metrics: latent resolution not divisible by 4");
  int pool = r / 4;
  FeatureSet out;
  out.provenance = provenance;
  out.features = Tensor<double>({N, C * 16});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* p = z.ptr() + (static_cast<int64_t>(n) * C + c) * r * r;
      for (int gy = 0; gy < 4; ++gy)
        for (int gx = 0; gx < 4; ++gx) {
          double acc = 0.0;
          for (int y = gy * pool; y < (gy + 1) * pool; ++y)
            for (int x = gx * pool; x < (gx + 1) * pool; ++x)
              acc += static_cast<double>(p[static_cast<int64_t>(y) * r + x]);
          out.features[(static_cast<int64_t>(n) * C + c) * 16 + gy * 4 + gx] =
              acc / (static_cast<double>(pool) * pool);
        }
    }
  }
  return out;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void moments(const FeatureSet& s, Vec& mean, Mat& cov) {
  int N = s.count(), F = s.dim();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
      s.features.ptr(), N, F);
  mean = X.colwise().mean();
  Mat centered = X.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / std::max(1, N - 1);
}

// Symmetric PSD square root by eigendecomposition, negative rounding clamped.
Mat psd_sqrt(const Mat& m, double* min_eig = nullptr) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  Vec ev = es.eigenvalues();
  if (min_eig) *min_eig = ev.minCoeff();
  Vec root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  if (a.count() == 0 || b.count() == 0) throw std::invalid_argument("frechet_distance: empty set");
  if (a.dim() != b.dim()) throw std::invalid_argument("frechet_distance: dimension mismatch");
  if (a.count() < a.dim() + 1 || b.count() < b.dim() + 1)
    std::fprintf(stderr, "[evalsuite] warning: fewer samples than dim+1, covariance is rank-deficient\n");
  Vec mu_a, mu_b;
  Mat cov_a, cov_b;
  moments(a, mu_a, cov_a);
  moments(b, mu_b, cov_b);
  int F = a.dim();
  cov_a += 1e-6 * Mat::Identity(F, F);
  cov_b += 1e-6 * Mat::Identity(F, F);

  Mat sa = psd_sqrt(cov_a);
  Mat inner = sa * cov_b * sa;
  double min_eig = 0.0;
  Mat sqrt_inner = psd_sqrt(inner, &min_eig);
  double scale = std::max(1.0, inner.norm());
  if (min_eig < -1e-8 * scale)
    throw NumericalError("frechet_distance: product matrix not PSD after jitter (min eig " +
                         std::to_string(min_eig) + ")");
  double mean_term = (mu_a - mu_b).squaredNorm();
  double trace_term = cov_a.trace() + cov_b.trace() - 2.0 * sqrt_inner.trace();
  return mean_term + trace_term;
}

PrdcResult prdc(const FeatureSet& real, const FeatureSet& fake, int k) {
  int Nr = real.count(), Nf = fake.count(), F = real.dim();
  if (fake.dim() != F) throw std::invalid_argument("prdc: dimension mismatch");
  if (Nr <= k || Nf <= k) throw std::invalid_argument("prdc: need more than k samples per set");

  auto dist = [F](const double* x, const double* y) {
    double acc = 0.0;
    for (int i = 0; i < F; ++i) {
      double d = x[i] - y[i];
      acc += d * d;
    }
    return std::sqrt(acc);
  };
  auto radii = [&](const FeatureSet& s, int k_) {
    int N = s.count();
    std::vector<double> r(static_cast<size_t>(N));
    std::vector<double> row(static_cast<size_t>(N - 1));
    for (int i = 0; i < N; ++i) {
      size_t m = 0;
      for (int j = 0; j < N; ++j) {
        if (j == i) continue;
        row[m++] = dist(s.features.ptr() + static_cast<int64_t>(i) * F,
                        s.features.ptr() + static_cast<int64_t>(j) * F);
      }
      std::nth_element(row.begin(), row.begin() + (k_ - 1), row.end());
      r[static_cast<size_t>(i)] = row[static_cast<size_t>(k_ - 1)];
    }
    return r;
  };

  std::vector<double> rr = radii(real, k), rf = radii(fake, k);
  PrdcResult out;
  int64_t density_hits = 0;
  int prec_hits = 0;
  for (int j = 0; j < Nf; ++j) {
    const double* fj = fake.features.ptr() + static_cast<int64_t>(j) * F;
    bool inside = false;
    for (int i = 0; i < Nr; ++i) {
      double d = dist(fj, real.features.ptr() + static_cast<int64_t>(i) * F);
      if (d <= rr[static_cast<size_t>(i)]) {
        inside = true;
        ++density_hits;
      }
    }
    prec_hits += inside ? 1 : 0;
  }
  int rec_hits = 0, cov_hits = 0;
  for (int i = 0; i < Nr; ++i) {
    const double* ri = real.features.ptr() + static_cast<int64_t>(i) * F;
    bool inside_fake = false;
    double min_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < Nf; ++j) {
      double d = dist(ri, fake.features.ptr() + static_cast<int64_t>(j) * F);
      min_d = std::min(min_d, d);
      if (d <= rf[static_cast<size_t>(j)]) inside_fake = true;
    }
    rec_hits += inside_fake ? 1 : 0;
    cov_hits += (min_d <= rr[static_cast<size_t>(i)]) ? 1 : 0;
  }
  out.precision = static_cast<double>(prec_hits) / Nf;
  out.recall = static_cast<double>(rec_hits) / Nr;
  out.density = static_cast<double>(density_hits) / (static_cast<double>(k) * Nf);
  out.coverage = static_cast<double>(cov_hits) / Nr;
  return out;
}

SpectrumProfile radial_power_spectrum(const Tensor<float>& images) {
  if (images.ndim() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("radial_power_spectrum: expected [N,3,H,W] images");
  int N = images.dim(0), H = images.dim(2), W = images.dim(3);
  int64_t hw = static_cast<int64_t>(H) * W;

  SpectrumProfile out;
  out.height = H;
  out.width = W;
  out.mean_power = Tensor<double>({H, W});

  fftw_complex* in = fftw_alloc_complex(static_cast<size_t>(hw));
  fftw_complex* freq = fftw_alloc_complex(static_cast<size_t>(hw));
  fftw_plan plan = fftw_plan_dft_2d(H, W, in, freq, FFTW_FORWARD, FFTW_ESTIMATE);

  for (int n = 0; n < N; ++n) {
    const float* r = images.ptr() + static_cast<int64_t>(n) * 3 * hw;
    const float* g = r + hw;
    const float* b = g + hw;
    for (int64_t i = 0; i < hw; ++i) {
      in[i][0] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
      in[i][1] = 0.0;
    }
    fftw_execute(plan);
    for (int64_t i = 0; i < hw; ++i)
      out.mean_power[i] += freq[i][0] * freq[i][0] + freq[i][1] * freq[i][1];
  }
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(freq);
  for (int64_t i = 0; i < hw; ++i) out.mean_power[i] /= static_cast<double>(N);

  out.mean_log_power = Tensor<double>({H, W});
  for (int64_t i = 0; i < hw; ++i) out.mean_log_power[i] = std::log10(out.mean_power[i] + 1e-10);

  int len = std::min(H, W) / 2;
  out.radial.assign(static_cast<size_t>(len), 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(len), 0);
  for (int ky = 0; ky < H; ++ky) {
    int fy = ky <= H / 2 ? ky : ky - H;
    for (int kx = 0; kx < W; ++kx) {
      int fx = kx <= W / 2 ? kx : kx - W;
      int rad = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fy) * fy +
                                                       static_cast<double>(fx) * fx)));
      if (rad >= len) continue;
      out.radial[static_cast<size_t>(rad)] += out.mean_log_power[static_cast<int64_t>(ky) * W + kx];
      counts[static_cast<size_t>(rad)] += 1;
    }
  }
  for (int i = 0; i < len; ++i)
    out.radial[static_cast<size_t>(i)] /= static_cast<double>(std::max<int64_t>(1, counts[static_cast<size_t>(i)]));
  return out;
}

BandErrors band_errors(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("band_errors: profile length mismatch");
  double nyquist = static_cast<double>(a.size());
  BandErrors out;
  double acc[3] = {0, 0, 0};
  int64_t cnt[3] = {0, 0, 0};
  for (size_t r = 0; r < a.size(); ++r) {
    double rr = static_cast<double>(r);
    int band = rr < 0.15 * nyquist ? 0 : (rr > 0.5 * nyquist ? 2 : 1);
    acc[band] += std::abs(a[r] - b[r]);
    cnt[band] += 1;
  }
  out.low = cnt[0] ? acc[0] / static_cast<double>(cnt[0]) : 0.0;
  out.mid = cnt[1] ? acc[1] / static_cast<double>(cnt[1]) : 0.0;
  out.high = cnt[2] ? acc[2] / static_cast<double>(cnt[2]) : 0.0;
  return out;
}

SpectrumDifference spectrum_difference(const SpectrumProfile& a, const SpectrumProfile& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("spectrum_difference: resolution mismatch");
  SpectrumDifference out;
  out.grid = Tensor<double>({a.height, a.width});
  for (int64_t i = 0; i < out.grid.numel(); ++i)
    out.grid[i] = a.mean_log_power[i] - b.mean_log_power[i];
  out.bands = band_errors(a.radial, b.radial);
  return out;
}

void write_spectrum_csv(const std::string& path, const SpectrumProfile& p) {
  std::ofstream f(path);
  f << "radius,log10_power\n";
  for (size_t r = 0; r < p.radial.size(); ++r) f << r << "," << p.radial[r] << "\n";
}

void write_heatmap_png(const std::string& path, const Tensor<double>& grid) {
  int H = grid.dim(0), W = grid.dim(1);
  double vmax = 1e-12;
  for (int64_t i = 0; i < grid.numel(); ++i) vmax = std::max(vmax, std::abs(grid[i]));
  // fftshift for viewing, diverging blue-white-red map
  Tensor<float> rgb({1, 3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int sy = (y + H / 2) % H, sx = (x + W / 2) % W;
      double v = grid[static_cast<int64_t>(sy) * W + sx] / vmax;  // [-1, 1]
      double rr = v > 0 ? 1.0 : 1.0 + v;
      double gg = 1.0 - std::abs(v);
      double bb = v < 0 ? 1.0 : 1.0 - v;
      rgb[(0 * static_cast<int64_t>(H) + y) * W + x] = static_cast<float>(2 * rr - 1);
      rgb[(1 * static_cast<int64_t>(H) + y) * W + x] = static_cast<float>(2 * gg - 1);
      rgb[(2 * static_cast<int64_t>(H) + y) * W + x] = static_cast<float>(2 * bb - 1);
    }
  write_png(path, rgb, 0);
}

}  // namespace lplab
