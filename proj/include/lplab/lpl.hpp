#pragma once

#include <array>
#include <string>
#include <vector>

#include "lplab/autoencoder.hpp"
#include "lplab/outlier_mask.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

enum class OmegaPolicy { prose_inverse_upscale, uniform, literal_pow2 };

inline OmegaPolicy omega_policy_from(const std::string& s) {
  if (s == "prose_inverse_upscale") return OmegaPolicy::prose_inverse_upscale;
  if (s == "uniform") return OmegaPolicy::uniform;
  if (s == "literal_pow2") return OmegaPolicy::literal_pow2;
  throw std::invalid_argument("unknown omega policy: " + s);
}

inline std::string to_string(OmegaPolicy p) {
  switch (p) {
    case OmegaPolicy::prose_inverse_upscale: return "prose_inverse_upscale";
    case OmegaPolicy::uniform: return "uniform";
    case OmegaPolicy::literal_pow2: return "literal_pow2";
  }
  return "?";
}

struct LplConfig {
  bool enabled = true;
  double tau_sigma = 1.5;       // noise-to-signal threshold at base_resolution
  double base_resolution = 64;  // threshold reference resolution
  double w_lpl = 3.0;
  OmegaPolicy omega_policy = OmegaPolicy::prose_inverse_upscale;
  double quant = 0.02;
  int opening = 5;
  int closing = 3;
  double std_floor = 1e-6;
  bool detach_stats = true;

  void validate() const {
    if (tau_sigma <= 0.0) throw std::invalid_argument("lpl: tau_sigma must be > 0");
    if (w_lpl < 0.0) throw std::invalid_argument("lpl: w_lpl must be >= 0");
  }
};

// Layer weights. prose_inverse_upscale halves the weight per resolution
// doubling (r1/rl); literal_pow2 is the 2^(-r_l/r_1) variant kept for
// comparison; uniform is all ones.
inline std::vector<double> depth_weights(const std::vector<int>& resolutions, OmegaPolicy policy) {
  std::vector<double> w(resolutions.size(), 1.0);
  if (resolutions.empty()) return w;
  double r1 = static_cast<double>(resolutions.front());
  for (size_t l = 0; l < resolutions.size(); ++l) {
    double rl = static_cast<double>(resolutions[l]);
    if (rl < r1) throw std::invalid_argument("depth_weights: resolutions must be non-decreasing");
    switch (policy) {
      case OmegaPolicy::prose_inverse_upscale: w[l] = r1 / rl; break;
      case OmegaPolicy::uniform: w[l] = 1.0; break;
      case OmegaPolicy::literal_pow2: w[l] = std::pow(2.0, -rl / r1); break;
    }
  }
  return w;
}

// Per-(sample, channel) statistics of the predicted-branch features over
// mask-kept spatial positions. inv = 1 / max(std, std_floor); an empty
// channel gets mean = 0, inv = 0 so it contributes nothing.
template <typename T>
struct ChannelStats {
  Tensor<T> neg_mean;  // [B, C]
  Tensor<T> inv_std;   // [B, C]
  int empty_channels = 0;
};

template <typename T>
ChannelStats<T> shared_channel_stats(const Tensor<T>& phi_hat, const Tensor<T>& mask,
                                     double std_floor) {
  if (!phi_hat.same_shape(mask)) throw std::invalid_argument("shared_channel_stats: shape mismatch");
  int B = phi_hat.dim(0), C = phi_hat.dim(1);
  int64_t hw = static_cast<int64_t>(phi_hat.dim(2)) * phi_hat.dim(3);
  ChannelStats<T> st;
  st.neg_mean = Tensor<T>({B, C});
  st.inv_std = Tensor<T>({B, C});
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T* f = phi_hat.ptr() + bc * hw;
    const T* m = mask.ptr() + bc * hw;
    double cnt = 0.0, sum = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      cnt += static_cast<double>(m[i]);
      sum += static_cast<double>(m[i]) * static_cast<double>(f[i]);
    }
    if (cnt == 0.0) {
      st.neg_mean[bc] = T(0);
      st.inv_std[bc] = T(0);
      ++st.empty_channels;
      continue;
    }
    double mean = sum / cnt;
    double var = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      double d = static_cast<double>(f[i]) - mean;
      var += static_cast<double>(m[i]) * d * d;
    }
    var /= cnt;
    double sd = std::max(std::sqrt(var), std_floor);
    st.neg_mean[bc] = static_cast<T>(-mean);
    st.inv_std[bc] = static_cast<T>(1.0 / sd);
  }
  return st;
}

// Standardizes both feature tensors with the predicted-branch statistics:
// out = (x + neg_mean) * inv_std, computed in that exact order on both sides.
template <typename T>
void standardize_with_stats(const Tensor<T>& x, const ChannelStats<T>& st, Tensor<T>& out) {
  int B = x.dim(0), C = x.dim(1);
  int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T* xp = x.ptr() + bc * hw;
    T* op = out.ptr() + bc * hw;
    T nm = st.neg_mean[bc], inv = st.inv_std[bc];
    for (int64_t i = 0; i < hw; ++i) op[i] = (xp[i] + nm) * inv;
  }
}

// The standardize_shared operation: statistics come from phi_hat (over
// mask-kept positions) and are applied to both tensors.
template <typename T>
struct StandardizedPair {
  Tensor<T> phi;
  Tensor<T> phi_hat;
  int empty_channels = 0;
};

template <typename T>
StandardizedPair<T> standardize_shared(const Tensor<T>& phi, const Tensor<T>& phi_hat,
                                       const Tensor<T>& mask, double std_floor) {
  if (!phi.same_shape(phi_hat)) throw std::invalid_argument("standardize_shared: shape mismatch");
  ChannelStats<T> st = shared_channel_stats(phi_hat, mask, std_floor);
  StandardizedPair<T> out;
  out.phi = Tensor<T>(phi.shape());
  out.phi_hat = Tensor<T>(phi.shape());
  out.empty_channels = st.empty_channels;
  standardize_with_stats(phi, st, out.phi);
  standardize_with_stats(phi_hat, st, out.phi_hat);
  return out;
}

// Per-layer mask kernel rescale factor: deeper (lower-resolution) taps get
// proportionally smaller morphology kernels.
inline int mask_down_factor(const std::vector<int>& resolutions, size_t layer) {
  int rmax = *std::max_element(resolutions.begin(), resolutions.end());
  return rmax / resolutions[layer];
}

template <typename T>
std::vector<Tensor<T>> pyramid_masks(const FeaturePyramid<T>& phi_hat, const LplConfig& cfg) {
  std::vector<Tensor<T>> masks;
  masks.reserve(phi_hat.features.size());
  for (size_t l = 0; l < phi_hat.features.size(); ++l) {
    OutlierMaskParams p;
    p.down_f = mask_down_factor(phi_hat.resolutions, l);
    p.opening = cfg.opening;
    p.closing = cfg.closing;
    p.quant = cfg.quant;
    masks.push_back(detect_outliers(phi_hat.features[l], p).mask);
  }
  return masks;
}

struct LplValue {
  double total = 0.0;                // batch mean (gated-off samples count as 0)
  std::vector<double> per_layer;     // per-layer contribution to `total`
  int empty_channels = 0;
};

// Plain-tensor evaluation of the perceptual loss over full pyramids with
// per-sample gate flags. Loss per sample: sum_l w_l / C_l * sum_c
// mean_{h,w} [mask * (phi' - phi_hat')]^2; batch value is the mean over all
// samples with gated-off samples contributing zero.
template <typename T>
LplValue lpl_loss(const FeaturePyramid<T>& phi, const FeaturePyramid<T>& phi_hat,
                  const std::vector<Tensor<T>>& masks, const std::vector<double>& omega,
                  const std::vector<bool>& gate_flags, double std_floor) {
  size_t L = phi.features.size();
  if (phi_hat.features.size() != L || masks.size() != L || omega.size() != L)
    throw std::invalid_argument("lpl_loss: pyramid/mask/weight layer counts differ");
  int B = L ? phi.features[0].dim(0) : 0;
  if (static_cast<int>(gate_flags.size()) != B)
    throw std::invalid_argument("lpl_loss: gate flag count mismatch");

  LplValue out;
  out.per_layer.assign(L, 0.0);
  for (size_t l = 0; l < L; ++l) {
    const Tensor<T>& f = phi.features[l];
    const Tensor<T>& fh = phi_hat.features[l];
    if (!f.same_shape(fh) || !f.same_shape(masks[l]))
      throw std::invalid_argument("lpl_loss: layer " + std::to_string(l) + " shape mismatch");
    if (!all_finite(fh) || !all_finite(f))
      throw std::runtime_error("lpl_loss: non-finite features at layer " + std::to_string(l + 1));
    int C = f.dim(1);
    int64_t hw = static_cast<int64_t>(f.dim(2)) * f.dim(3);
    ChannelStats<T> st = shared_channel_stats(fh, masks[l], std_floor);
    out.empty_channels += st.empty_channels;
    double layer_acc = 0.0;
    for (int b = 0; b < B; ++b) {
      if (!gate_flags[static_cast<size_t>(b)]) continue;
      double sample_acc = 0.0;
      for (int c = 0; c < C; ++c) {
        int64_t bc = static_cast<int64_t>(b) * C + c;
        const T* fp = f.ptr() + bc * hw;
        const T* fhp = fh.ptr() + bc * hw;
        const T* mp = masks[l].ptr() + bc * hw;
        T nm = st.neg_mean[bc], inv = st.inv_std[bc];
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) {
          T a = (fp[i] + nm) * inv;
          T bql = (fhp[i] + nm) * inv;
          T d = mp[i] * (a - bql);
          acc += static_cast<double>(d) * static_cast<double>(d);
        }
        sample_acc += acc / static_cast<double>(hw);
      }
      layer_acc += sample_acc / static_cast<double>(C);
    }
    out.per_layer[l] = omega[l] * layer_acc / static_cast<double>(B);
    out.total += out.per_layer[l];
  }
  return out;
}

inline double total_loss(double l_diff, double l_lpl, double w_lpl) {
  return l_diff + w_lpl * l_lpl;
}

// ---- autograd builder --------------------------------------------------------

// Precomputed masks/stats; used by the finite-difference gradient check to
// hold the non-differentiable pieces fixed across evaluations.
template <typename T>
struct LplFixed {
  std::vector<Tensor<T>> masks;
  std::vector<ChannelStats<T>> stats;  // only honored when cfg.detach_stats
};

template <typename T>
struct LplGraphResult {
  Var<T> total;
  std::vector<double> per_layer;
  int empty_channels = 0;
};

// Builds the loss sub-graph for the gated sub-batch. zhat_gated carries
// gradients; the clean branch is decoded as a constant. `full_batch` is the
// denominator of the batch mean.
template <typename T>
LplGraphResult<T> build_lpl_loss(Graph<T>& g, const Autoencoder<T>& ae, const Binding<T>& ae_bind,
                                 Var<T> zhat_gated, const Tensor<T>& z0_gated, int full_batch,
                                 const LplConfig& cfg, const LplFixed<T>* fixed = nullptr) {
  auto pred = ae.decode_taps_g(g, ae_bind, zhat_gated);
  auto clean = ae.decode_taps_g(g, ae_bind, g.constant(z0_gated));

  std::vector<int> resolutions;
  for (int l = 0; l < Autoencoder<T>::kTapCount; ++l)
    resolutions.push_back(g.value(pred.taps[static_cast<size_t>(l)]).dim(2));
  std::vector<double> omega = depth_weights(resolutions, cfg.omega_policy);

  LplGraphResult<T> out;
  out.per_layer.assign(resolutions.size(), 0.0);
  Var<T> total;
  for (size_t l = 0; l < resolutions.size(); ++l) {
    Var<T> fh = pred.taps[l];
    const Tensor<T>& fh_v = g.value(fh);
    const Tensor<T>& f_v = g.value(clean.taps[l]);
    if (!all_finite(fh_v))
      throw std::runtime_error("lpl: non-finite predicted features at layer " + std::to_string(l + 1));

    Tensor<T> mask;
    if (fixed && l < fixed->masks.size()) {
      mask = fixed->masks[l];
    } else {
      OutlierMaskParams p;
      p.down_f = mask_down_factor(resolutions, l);
      p.opening = cfg.opening;
      p.closing = cfg.closing;
      p.quant = cfg.quant;
      mask = detect_outliers(fh_v, p).mask;
    }

    int C = fh_v.dim(1);
    int64_t hw = static_cast<int64_t>(fh_v.dim(2)) * fh_v.dim(3);
    Var<T> mask_leaf = g.constant(mask);

    Var<T> diff;
    if (cfg.detach_stats) {
      ChannelStats<T> st;
      if (fixed && l < fixed->stats.size()) {
        st = fixed->stats[l];
      } else {
        st = shared_channel_stats(fh_v, mask, cfg.std_floor);
      }
      out.empty_channels += st.empty_channels;
      Tensor<T> phi_std(f_v.shape());
      standardize_with_stats(f_v, st, phi_std);
      Var<T> fh_std = mul_bc(add_bc(fh, g.constant(st.neg_mean)), g.constant(st.inv_std));
      diff = sub(g.constant(phi_std), fh_std);
    } else {
      // Differentiable statistics: mean/std over mask-kept positions as graph ops.
      Tensor<T> count({fh_v.dim(0), C});
      for (int64_t bc = 0; bc < count.numel(); ++bc) {
        double cnt = 0.0;
        const T* mp = mask.ptr() + bc * hw;
        for (int64_t i = 0; i < hw; ++i) cnt += static_cast<double>(mp[i]);
        if (cnt == 0.0) ++out.empty_channels;
        count[bc] = static_cast<T>(cnt > 0.0 ? 1.0 / cnt : 0.0);  // reciprocal, 0 for empty
      }
      Var<T> inv_count = g.constant(count);
      Var<T> masked_fh = mul(fh, mask_leaf);
      Var<T> mean = mul(sum_spatial(masked_fh), inv_count);
      Var<T> neg_mean = scale(mean, T(-1));
      Var<T> centered = add_bc(fh, neg_mean);
      Var<T> var_bc = mul(sum_spatial(mul(square(centered), mask_leaf)), inv_count);
      Var<T> inv_std = div(g.constant(Tensor<T>::full({fh_v.dim(0), C}, T(1))),
                           clamp_min(sqrt_op(var_bc), static_cast<T>(cfg.std_floor)));
      Var<T> fh_std = mul_bc(centered, inv_std);
      Var<T> phi_std = mul_bc(add_bc(g.constant(f_v), neg_mean), inv_std);
      diff = sub(phi_std, fh_std);
    }

    Var<T> sq = square(mul(diff, mask_leaf));
    Var<T> term = scale(sum_all(sq), static_cast<T>(omega[l] / (static_cast<double>(C) *
                                                                static_cast<double>(hw) *
                                                                static_cast<double>(full_batch))));
    out.per_layer[l] = static_cast<double>(g.value(term).item());
    total = total.valid() ? add(total, term) : term;
  }
  out.total = total;
  return out;
}

}  // namespace lplab
