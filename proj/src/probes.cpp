#include "lplab/probes.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "lplab/toydata.hpp"

namespace lplab {

namespace {
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Tensor<double>& t) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.ptr(), t.dim(0), t.ndim() == 2 ? t.dim(1) : 1);
}
}  // namespace

LinearDecoderModel make_linear_decoder(int image_dim, int latent_dim, Rng& rng) {
  if (image_dim > latent_dim)
    throw std::invalid_argument("linear decoder: need image_dim <= latent_dim for full row rank");
  LinearDecoderModel m;
  m.image_dim = image_dim;
  m.latent_dim = latent_dim;
  for (int attempt = 0; attempt < 16; ++attempt) {
    m.a = rng.randn<double>({image_dim, latent_dim});
    Mat a = to_eigen(m.a);
    Eigen::FullPivLU<Mat> lu(a * a.transpose());
    if (lu.isInvertible()) return m;
  }
  throw NumericalError("linear decoder: could not sample a full-row-rank matrix");
}

double gaussian_kl(const GaussianPair& p) {
  int n = p.mu1.dim(0);
  Mat c1 = to_eigen(p.cov1), c2 = to_eigen(p.cov2);
  Vec d = to_eigen(p.mu2) - to_eigen(p.mu1);
  Eigen::LLT<Mat> l1(c1), l2(c2);
  if (l1.info() != Eigen::Success || l2.info() != Eigen::Success)
    throw NumericalError("gaussian_kl: covariance not positive definite");
  // log|C| from Cholesky factors
  double logdet1 = 0.0, logdet2 = 0.0;
  for (int i = 0; i < n; ++i) {
    logdet1 += 2.0 * std::log(l1.matrixL()(i, i));
    logdet2 += 2.0 * std::log(l2.matrixL()(i, i));
  }
  double trace = l2.solve(c1).trace();
  double maha = d.dot(l2.solve(d));
  return 0.5 * (logdet2 - logdet1 - n + trace + maha);
}

PenaltyReport verify_projection_penalty(const LinearDecoderModel& dec,
                                        const std::vector<double>& mu1_latent,
                                        const std::vector<double>& mu2_latent, double beta_tilde,
                                        double sigma2) {
  if (beta_tilde <= 0.0 || sigma2 <= 0.0)
    throw std::invalid_argument("verify_projection_penalty: variances must be positive");
  int n = dec.image_dim;
  Mat a = to_eigen(dec.a);
  Mat aat = a * a.transpose();
  Vec m1 = a * Eigen::Map<const Vec>(mu1_latent.data(), dec.latent_dim);
  Vec m2 = a * Eigen::Map<const Vec>(mu2_latent.data(), dec.latent_dim);

  GaussianPair pair;
  pair.mu1 = Tensor<double>({n});
  pair.mu2 = Tensor<double>({n});
  pair.cov1 = Tensor<double>({n, n});
  pair.cov2 = Tensor<double>({n, n});
  for (int i = 0; i < n; ++i) {
    pair.mu1[i] = m1(i);
    pair.mu2[i] = m2(i);
    for (int j = 0; j < n; ++j) {
      pair.cov1[static_cast<int64_t>(i) * n + j] = beta_tilde * aat(i, j);
      pair.cov2[static_cast<int64_t>(i) * n + j] = sigma2 * aat(i, j);
    }
  }

  PenaltyReport rep;
  rep.kl = gaussian_kl(pair);

  Vec dmu = m1 - m2;
  Eigen::LLT<Mat> llt(aat);
  if (llt.info() != Eigen::Success) throw NumericalError("verify_projection_penalty: rank-deficient A A^T");
  rep.quadratic_term = 0.5 / sigma2 * dmu.dot(llt.solve(dmu));
  // Mean-independent remainder of the closed-form KL for covariances
  // beta * S vs sigma2 * S: 0.5 [ n log(sigma2/beta) - n + n beta/sigma2 ].
  rep.constant_term =
      0.5 * (n * std::log(sigma2 / beta_tilde) - n + n * beta_tilde / sigma2);
  rep.identity_error = std::abs(rep.kl - (rep.quadratic_term + rep.constant_term));

  Eigen::SelfAdjointEigenSolver<Mat> es(aat);
  double lambda_max_inv = 1.0 / es.eigenvalues().minCoeff();  // largest eigenvalue of (A A^T)^-1
  rep.lambda_max_bound = 0.5 / sigma2 * lambda_max_inv * dmu.squaredNorm();

  rep.identity_ok = rep.identity_error <= 1e-8;
  rep.bound_ok = rep.quadratic_term <= rep.lambda_max_bound + 1e-10;
  return rep;
}

std::vector<InterpRoundtripRow> interp_roundtrip_probe(const Autoencoder<float>& ae,
                                                       const Tensor<float>& images, double s,
                                                       const std::vector<Resample>& methods,
                                                       const std::string& space) {
  if (s < 1.0) throw std::invalid_argument("interp_roundtrip_probe: s must be >= 1");
  if (space != "pixel" && space != "latent")
    throw std::invalid_argument("interp_roundtrip_probe: space must be pixel or latent");
  int N = images.dim(0), H = images.dim(2), W = images.dim(3);
  std::vector<InterpRoundtripRow> rows;
  for (int i = 0; i < N; ++i) {
    Tensor<float> img({1, 3, H, W});
    std::copy_n(images.ptr() + static_cast<int64_t>(i) * 3 * H * W, static_cast<int64_t>(3) * H * W,
                img.ptr());
    Tensor<float> latent = ae.encode(img);
    int r = latent.dim(2);
    for (Resample method : methods) {
      InterpRoundtripRow row;
      row.image_index = i;
      switch (method) {
        case Resample::nearest: row.method = "nearest"; break;
        case Resample::bilinear: row.method = "bilinear"; break;
        case Resample::bicubic: row.method = "bicubic"; break;
        case Resample::area: row.method = "area"; break;
      }
      row.space = space;
      if (space == "pixel") {
        int dh = std::max(1, static_cast<int>(std::lround(H / s)));
        Tensor<float> small = resize_tensor(img, dh, dh, method);
        row.reconstruction = resize_tensor(small, H, W, method);
      } else {
        int dr = std::max(1, static_cast<int>(std::lround(r / s)));
        Tensor<float> small = resize_tensor(latent, dr, dr, method);
        Tensor<float> back = resize_tensor(small, r, r, method);
        double acc = 0.0;
        for (int64_t j = 0; j < latent.numel(); ++j) {
          double d = static_cast<double>(back[j]) - static_cast<double>(latent[j]);
          acc += d * d;
        }
        row.latent_mse = acc / static_cast<double>(latent.numel());
        row.reconstruction = ae.decode(back);
      }
      double acc = 0.0;
      for (int64_t j = 0; j < img.numel(); ++j) {
        double d = static_cast<double>(row.reconstruction[j]) - static_cast<double>(img[j]);
        acc += d * d;
      }
      row.pixel_mse = acc / static_cast<double>(img.numel());
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

PerturbationReport perturbation_probe(const Autoencoder<float>& ae, const Tensor<float>& image,
                                      const Tensor<float>& region_mask, double scale,
                                      uint64_t seed) {
  Tensor<float> z = ae.encode(image);
  if (!region_mask.same_shape(z))
    throw std::invalid_argument("perturbation_probe: mask must match latent shape " + shape_str(z));
  bool any = false;
  for (int64_t i = 0; i < region_mask.numel(); ++i)
    if (region_mask[i] != 0.0f) any = true;
  if (!any) throw std::invalid_argument("perturbation_probe: empty region mask");

  if (scale < 0.0) {
    // default: half the variance of the latents
    double mean = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) mean += static_cast<double>(z[i]);
    mean /= static_cast<double>(z.numel());
    double var = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) {
      double d = static_cast<double>(z[i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(z.numel());
    scale = 0.5 * var;
  }

  Rng rng = Rng(seed).child("perturbation");
  Tensor<float> zp = z.clone();
  double sd = std::sqrt(scale);
  for (int64_t i = 0; i < z.numel(); ++i)
    zp[i] += region_mask[i] * static_cast<float>(rng.gaussian() * sd);

  Tensor<float> base = ae.decode(z);
  Tensor<float> pert = ae.decode(zp);
  int H = base.dim(2), W = base.dim(3);
  PerturbationReport rep;
  rep.noise_variance = scale;
  rep.error_map = Tensor<float>({H, W});
  double norm = 0.0;
  int64_t hw = static_cast<int64_t>(H) * W;
  for (int64_t p = 0; p < hw; ++p) {
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
      double d = static_cast<double>(pert[c * hw + p]) - static_cast<double>(base[c * hw + p]);
      acc += std::abs(d);
      norm += d * d;
    }
    rep.error_map[p] = static_cast<float>(acc / 3.0);
  }
  rep.error_norm = std::sqrt(norm);
  return rep;
}

LinearityReport decoder_linearity_probe(const Autoencoder<float>& ae, const Tensor<float>& latent,
                                        double delta_scale, uint64_t seed) {
  Rng rng = Rng(seed).child("linearity");
  Tensor<float> delta = rng.randn<float>(latent.shape(), delta_scale);
  Tensor<float> zp = latent.clone(), zm = latent.clone(), zd = latent.clone();
  double h = 1e-3;  // central-difference step along the unit direction
  double dn = 0.0;
  for (int64_t i = 0; i < delta.numel(); ++i) dn += static_cast<double>(delta[i]) * delta[i];
  dn = std::sqrt(dn);
  for (int64_t i = 0; i < delta.numel(); ++i) {
    double u = static_cast<double>(delta[i]) / dn;
    zp[i] += static_cast<float>(h * u);
    zm[i] -= static_cast<float>(h * u);
    zd[i] += delta[i];
  }
  Tensor<float> base = ae.decode(latent);
  Tensor<float> fp = ae.decode(zp);
  Tensor<float> fm = ae.decode(zm);
  Tensor<float> fd = ae.decode(zd);

  LinearityReport rep;
  rep.delta_norm = dn;
  double resid = 0.0, resp = 0.0;
  for (int64_t i = 0; i < base.numel(); ++i) {
    double jd = (static_cast<double>(fp[i]) - static_cast<double>(fm[i])) / (2.0 * h) * dn;
    double change = static_cast<double>(fd[i]) - static_cast<double>(base[i]);
    resid += (change - jd) * (change - jd);
    resp += change * change;
  }
  rep.residual_norm = std::sqrt(resid);
  rep.response_norm = std::sqrt(resp);
  return rep;
}

}  // namespace lplab
