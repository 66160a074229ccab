#pragma once

#include <string>
#include <vector>

#include "lplab/autoencoder.hpp"
#include "lplab/resample.hpp"
#include "lplab/rng.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

// Random full-row-rank linear decoder A (image_dim x latent_dim,
// image_dim <= latent_dim so A A^T is invertible).
struct LinearDecoderModel {
  Tensor<double> a;  // [image_dim, latent_dim]
  int image_dim = 0, latent_dim = 0;
};

LinearDecoderModel make_linear_decoder(int image_dim, int latent_dim, Rng& rng);

// Gaussian pair in image space: N(mu1, beta_tilde A A^T), N(mu2, sigma2 A A^T).
struct GaussianPair {
  Tensor<double> mu1, mu2;  // [image_dim]
  Tensor<double> cov1, cov2;  // [image_dim, image_dim], positive definite
};

// Generic Gaussian KL(N1 || N2) via log-determinants, trace and Mahalanobis term.
double gaussian_kl(const GaussianPair& p);

struct PenaltyReport {
  double kl = 0.0;
  double quadratic_term = 0.0;   // 0.5/sigma2 * (A dmu)^T (A A^T)^-1 (A dmu)
  double constant_term = 0.0;    // mean-independent remainder
  double identity_error = 0.0;   // |kl - (quadratic + constant)|
  double lambda_max_bound = 0.0; // 0.5/sigma2 * lambda_max((A A^T)^-1) * ||A dmu||^2
  bool identity_ok = false;      // identity_error <= 1e-8
  bool bound_ok = false;         // quadratic_term <= bound + 1e-10
};

// Checks that the image-space posterior KL equals the quadratic projection
// penalty plus a mean-independent constant, and respects the largest-eigenvalue
// bound of the pseudo-inverse.
PenaltyReport verify_projection_penalty(const LinearDecoderModel& dec,
                                        const std::vector<double>& mu1_latent,
                                        const std::vector<double>& mu2_latent, double beta_tilde,
                                        double sigma2);

struct InterpRoundtripRow {
  int image_index = 0;
  std::string method;
  std::string space;  // pixel | latent
  double latent_mse = 0.0;  // 0 in pixel space
  double pixel_mse = 0.0;
  Tensor<float> reconstruction;  // [1,3,H,W]
};

// Downscale by 1/s then upscale back in the chosen space; decode when the
// round trip happens on latents.
std::vector<InterpRoundtripRow> interp_roundtrip_probe(const Autoencoder<float>& ae,
                                                       const Tensor<float>& images, double s,
                                                       const std::vector<Resample>& methods,
                                                       const std::string& space);

struct PerturbationReport {
  Tensor<float> error_map;  // [H, W], mean absolute pixel error over channels
  double error_norm = 0.0;  // L2 over all pixels and channels
  double noise_variance = 0.0;
};

// Adds masked gaussian noise (variance `scale`, default half the latent
// variance) to the latent and reports the decoded error.
PerturbationReport perturbation_probe(const Autoencoder<float>& ae, const Tensor<float>& image,
                                      const Tensor<float>& region_mask, double scale, uint64_t seed);

struct LinearityReport {
  double delta_norm = 0.0;
  double residual_norm = 0.0;  // ||decode(z+d) - decode(z) - J d||
  double response_norm = 0.0;  // ||decode(z+d) - decode(z)||
};

// First-order linearity of the decoder around z: J d estimated by a central
// difference along d. Reported without a pass/fail threshold.
LinearityReport decoder_linearity_probe(const Autoencoder<float>& ae, const Tensor<float>& latent,
                                        double delta_scale, uint64_t seed);

}  // namespace lplab
