#pragma once

#include <string>
#include <vector>

#include "lplab/autoencoder.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

struct FeatureSet {
  Tensor<double> features;  // [N, F]
  std::string provenance;

  int count() const { return features.empty() ? 0 : features.dim(0); }
  int dim() const { return features.empty() ? 0 : features.dim(1); }
};

// AE-encoder embedding: latents average-pooled to a 4x4 grid and flattened
// (64-d for the 4-channel latent space).
FeatureSet embed_for_metrics(const Tensor<float>& images, const Autoencoder<float>& ae,
                             const std::string& provenance = "");

// Frechet distance between Gaussian fits of the two sets, with a 1e-6
// diagonal jitter and a symmetric matrix square root.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

struct PrdcResult {
  double precision = 0.0, recall = 0.0, density = 0.0, coverage = 0.0;
};

// k-NN manifold precision/recall/density/coverage (radii from the k-th
// neighbor excluding self; ties count as inside).
PrdcResult prdc(const FeatureSet& real, const FeatureSet& fake, int k = 5);

struct SpectrumProfile {
  std::vector<double> radial;     // log10 power per integer radius, length floor(min(H,W)/2)
  Tensor<double> mean_log_power;  // [H, W], DC at (0,0)
  Tensor<double> mean_power;      // pre-log, for Parseval-style checks
  int height = 0, width = 0;
};

// Mean |FFT|^2 over luma-converted images, log10 after adding 1e-10, and its
// radial average over integer-radius annuli.
SpectrumProfile radial_power_spectrum(const Tensor<float>& images);

struct BandErrors {
  double low = 0.0, mid = 0.0, high = 0.0;  // <0.15 Nq | middle | >0.5 Nq
};

struct SpectrumDifference {
  Tensor<double> grid;  // elementwise log-power difference, [H, W]
  BandErrors bands;     // mean absolute radial error per band vs the reference (b)
};

SpectrumDifference spectrum_difference(const SpectrumProfile& a, const SpectrumProfile& b);

// Mean absolute radial log-power error of `a` against reference `b`, split by band.
BandErrors band_errors(const std::vector<double>& a, const std::vector<double>& b);

void write_spectrum_csv(const std::string& path, const SpectrumProfile& p);
void write_heatmap_png(const std::string& path, const Tensor<double>& grid);

}  // namespace lplab
