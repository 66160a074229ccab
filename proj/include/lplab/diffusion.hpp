#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lplab/tensor.hpp"

namespace lplab {

enum class ScheduleKind { ddpm_discrete, flow_ot };
enum class PredictionKind { eps, v, flow };

inline PredictionKind prediction_kind_from(const std::string& s) {
  if (s == "eps") return PredictionKind::eps;
  if (s == "v") return PredictionKind::v;
  if (s == "flow") return PredictionKind::flow;
  throw std::invalid_argument("unknown prediction kind: " + s);
}

inline std::string to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::eps: return "eps";
    case PredictionKind::v: return "v";
    case PredictionKind::flow: return "flow";
  }
  return "?";
}

// Noise schedule for discrete DDPM (1-based t in [1,T]) or continuous
// flow with the optimal-transport path (t in [0,1], alpha=1-t, sigma=t).
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::flow_ot;
  int T = 0;  // discrete step count; unused for flow
  bool zero_terminal = false;
  // Discrete tables, index 0 holds t=1.
  std::vector<double> beta, alpha_bar, alpha, sigma;

  bool discrete() const { return kind == ScheduleKind::ddpm_discrete; }

  void check_t(double t) const {
    if (discrete()) {
      int ti = static_cast<int>(t);
      if (ti < 1 || ti > T || static_cast<double>(ti) != t)
        throw std::invalid_argument("schedule: discrete t must be an integer in [1,T]");
    } else {
      if (t < 0.0 || t > 1.0) throw std::invalid_argument("schedule: flow t must lie in [0,1]");
    }
  }

  double alpha_at(double t) const {
    check_t(t);
    return discrete() ? alpha[static_cast<size_t>(t) - 1] : 1.0 - t;
  }

  double sigma_at(double t) const {
    check_t(t);
    return discrete() ? sigma[static_cast<size_t>(t) - 1] : t;
  }
};

inline NoiseSchedule make_flow_schedule() {
  NoiseSchedule s;
  s.kind = ScheduleKind::flow_ot;
  return s;
}

// Quadratic beta schedule: linear interpolation in sqrt(beta) between the
// endpoints, squared.
inline NoiseSchedule make_ddpm_schedule(int T, double beta_start, double beta_end) {
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_ddpm_schedule: need 0 < beta_start < beta_end < 1");
  if (T < 2) throw std::invalid_argument("make_ddpm_schedule: T must be >= 2");
  NoiseSchedule s;
  s.kind = ScheduleKind::ddpm_discrete;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.sigma.resize(static_cast<size_t>(T));
  double r0 = std::sqrt(beta_start), r1 = std::sqrt(beta_end);
  double cum = 1.0;
  for (int t = 1; t <= T; ++t) {
    double r = r0 + (r1 - r0) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
    double b = r * r;
    cum *= 1.0 - b;
    s.beta[static_cast<size_t>(t - 1)] = b;
    s.alpha_bar[static_cast<size_t>(t - 1)] = cum;
    s.alpha[static_cast<size_t>(t - 1)] = std::sqrt(cum);
    s.sigma[static_cast<size_t>(t - 1)] = std::sqrt(1.0 - cum);
  }
  return s;
}

// Affinely rescales sqrt(alpha_bar) so the terminal value is exactly zero
// while the first value is preserved; betas are re-derived.
inline NoiseSchedule enforce_zero_terminal_snr(const NoiseSchedule& in) {
  if (!in.discrete()) throw std::invalid_argument("enforce_zero_terminal_snr: discrete DDPM only");
  int T = in.T;
  double a1 = std::sqrt(in.alpha_bar.front());
  double aT = std::sqrt(in.alpha_bar.back());
  if (std::abs(a1 - aT) < 1e-300)
    throw std::invalid_argument("enforce_zero_terminal_snr: degenerate rescale denominator");
  NoiseSchedule s = in;
  s.zero_terminal = true;
  double prev_bar = 1.0;
  for (int t = 1; t <= T; ++t) {
    double root = std::sqrt(in.alpha_bar[static_cast<size_t>(t - 1)]);
    double scaled = (root - aT) * a1 / (a1 - aT);
    double bar = scaled * scaled;
    if (t == T) bar = 0.0;  // exact by construction, pin against rounding
    s.alpha_bar[static_cast<size_t>(t - 1)] = bar;
    s.alpha[static_cast<size_t>(t - 1)] = std::sqrt(bar);
    s.sigma[static_cast<size_t>(t - 1)] = std::sqrt(1.0 - bar);
    s.beta[static_cast<size_t>(t - 1)] = 1.0 - bar / prev_bar;
    prev_bar = bar;
  }
  return s;
}

// Noise-to-signal ratio sigma_t / alpha_t; +inf when alpha_t = 0.
inline double nsr(const NoiseSchedule& s, double t) {
  double a = s.alpha_at(t), sg = s.sigma_at(t);
  if (a == 0.0) return std::numeric_limits<double>::infinity();
  return sg / a;
}

// The loss gate: active (true) only at low noise-to-signal ratios.
inline bool gate(const NoiseSchedule& s, double t, double tau_sigma) {
  return nsr(s, t) <= tau_sigma;
}

inline double scale_threshold(double tau_base, double base_resolution, double resolution) {
  if (base_resolution <= 0.0 || resolution <= 0.0)
    throw std::invalid_argument("scale_threshold: resolutions must be positive");
  return tau_base * (resolution / base_resolution);
}

// ---- elementwise batch ops (z-shaped tensors, per-sample t) -----------------

namespace detail_diff {
template <typename T>
void per_sample_affine(const Tensor<T>& x, const Tensor<T>& y, const std::vector<double>& a,
                       const std::vector<double>& b, Tensor<T>& out) {
  int B = x.dim(0);
  int64_t row = x.numel() / B;
  for (int s = 0; s < B; ++s) {
    const T* xp = x.ptr() + s * row;
    const T* yp = y.ptr() + s * row;
    T* op = out.ptr() + s * row;
    T as = static_cast<T>(a[static_cast<size_t>(s)]), bs = static_cast<T>(b[static_cast<size_t>(s)]);
    for (int64_t i = 0; i < row; ++i) op[i] = as * xp[i] + bs * yp[i];
  }
}
}  // namespace detail_diff

// z_t = alpha_t z0 + sigma_t eps
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& eps, const std::vector<double>& t,
                    const NoiseSchedule& s) {
  if (!z0.same_shape(eps)) throw std::invalid_argument("add_noise: shape mismatch");
  std::vector<double> a(t.size()), b(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    a[i] = s.alpha_at(t[i]);
    b[i] = s.sigma_at(t[i]);
  }
  Tensor<T> out(z0.shape());
  detail_diff::per_sample_affine(z0, eps, a, b, out);
  return out;
}

// eps -> eps; v -> alpha*eps - sigma*z0; flow -> eps - z0
template <typename T>
Tensor<T> training_target(PredictionKind kind, const Tensor<T>& z0, const Tensor<T>& eps,
                          const std::vector<double>& t, const NoiseSchedule& s) {
  if (!z0.same_shape(eps)) throw std::invalid_argument("training_target: shape mismatch");
  Tensor<T> out(z0.shape());
  std::vector<double> a(t.size()), b(t.size());
  switch (kind) {
    case PredictionKind::eps:
      return eps.clone();
    case PredictionKind::v:
      for (size_t i = 0; i < t.size(); ++i) {
        a[i] = -s.sigma_at(t[i]);
        b[i] = s.alpha_at(t[i]);
      }
      break;
    case PredictionKind::flow:
      for (size_t i = 0; i < t.size(); ++i) {
        a[i] = -1.0;
        b[i] = 1.0;
      }
      break;
  }
  detail_diff::per_sample_affine(z0, eps, a, b, out);
  return out;
}

// Per-sample recovery coefficients (zhat0 = a * z_t + b * prediction),
// from the clean-image estimate table:
//   eps:  (z_t - sigma*pred)/alpha ; v: alpha*z_t - sigma*pred ; flow: z_t - sigma*pred
struct RecoveryCoeffs {
  std::vector<double> a, b;
};

inline RecoveryCoeffs recovery_coeffs(PredictionKind kind, const std::vector<double>& t,
                                      const NoiseSchedule& s) {
  RecoveryCoeffs rc;
  rc.a.resize(t.size());
  rc.b.resize(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    double alpha = s.alpha_at(t[i]), sigma = s.sigma_at(t[i]);
    switch (kind) {
      case PredictionKind::eps:
        if (alpha == 0.0)
          throw std::domain_error("recover_x0: epsilon recovery undefined at alpha_t = 0");
        rc.a[i] = 1.0 / alpha;
        rc.b[i] = -sigma / alpha;
        break;
      case PredictionKind::v:
        rc.a[i] = alpha;
        rc.b[i] = -sigma;
        break;
      case PredictionKind::flow:
        rc.a[i] = 1.0;
        rc.b[i] = -sigma;
        break;
    }
  }
  return rc;
}

template <typename T>
Tensor<T> recover_x0(PredictionKind kind, const Tensor<T>& z_t, const Tensor<T>& prediction,
                     const std::vector<double>& t, const NoiseSchedule& s) {
  if (!z_t.same_shape(prediction)) throw std::invalid_argument("recover_x0: shape mismatch");
  RecoveryCoeffs rc = recovery_coeffs(kind, t, s);
  Tensor<T> out(z_t.shape());
  detail_diff::per_sample_affine(z_t, prediction, rc.a, rc.b, out);
  return out;
}

// Mean squared error over all elements.
template <typename T>
double diffusion_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (!prediction.same_shape(target)) throw std::invalid_argument("diffusion_loss: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < prediction.numel(); ++i) {
    double d = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(prediction.numel());
}

// Standard DDPM forward-process posterior q(z_{t-1} | z_t, z0), t >= 2.
struct PosteriorParams {
  double coef_z0 = 0.0, coef_zt = 0.0, beta_tilde = 0.0;
};

inline PosteriorParams posterior_params(const NoiseSchedule& s, int t) {
  if (!s.discrete()) throw std::invalid_argument("posterior_params: discrete DDPM only");
  if (t < 2 || t > s.T) throw std::invalid_argument("posterior_params: t must be in [2,T]");
  double b = s.beta[static_cast<size_t>(t - 1)];
  double abar = s.alpha_bar[static_cast<size_t>(t - 1)];
  double abar_prev = s.alpha_bar[static_cast<size_t>(t - 2)];
  PosteriorParams p;
  p.coef_z0 = std::sqrt(abar_prev) * b / (1.0 - abar);
  p.coef_zt = std::sqrt(1.0 - b) * (1.0 - abar_prev) / (1.0 - abar);
  p.beta_tilde = (1.0 - abar_prev) * b / (1.0 - abar);
  return p;
}

// Control-arm reweighting: amplifies gated timesteps by the loss-variance
// ratio so they contribute as much as they would with the perceptual term.
inline double timestep_reweighting(bool gated, double w_lpl, double variance_ratio) {
  if (variance_ratio < 0.0) throw std::invalid_argument("timestep_reweighting: ratio must be >= 0");
  return gated ? 1.0 + w_lpl * variance_ratio : 1.0;
}

// CSV table (t, beta, alpha_bar, alpha, sigma, nsr) for inspection.
std::string schedule_csv(const NoiseSchedule& s);

}  // namespace lplab
