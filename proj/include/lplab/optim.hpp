#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "lplab/nn.hpp"
#include "lplab/tensor.hpp"

namespace lplab {

// Adam with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  template <typename Model>
  void step(Model& model, const Binding<T>& bind) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    model.visit_params([&](const std::string& name, Tensor<T>& p) {
      const Tensor<T>* gp = bind.grad_of(p);
      if (!gp) return;
      State& st = states_[name];
      if (st.m.empty()) {
        st.m = Tensor<T>(p.shape());
        st.v = Tensor<T>(p.shape());
      }
      const Tensor<T>& g = *gp;
      for (int64_t i = 0; i < p.numel(); ++i) {
        double gi = static_cast<double>(g[i]);
        double m = beta1 * static_cast<double>(st.m[i]) + (1.0 - beta1) * gi;
        double v = beta2 * static_cast<double>(st.v[i]) + (1.0 - beta2) * gi * gi;
        st.m[i] = static_cast<T>(m);
        st.v[i] = static_cast<T>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + eps) + weight_decay * static_cast<double>(p[i]);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * update);
      }
    });
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct State {
    Tensor<T> m, v;
  };
  std::unordered_map<std::string, State> states_;
  int64_t t_ = 0;
};

// ema <- gamma * ema + (1 - gamma) * params, elementwise.
template <typename T>
void ema_update(Tensor<T>& ema, const Tensor<T>& params, double gamma) {
  if (!ema.same_shape(params)) throw std::invalid_argument("ema_update: shape mismatch");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("ema_update: gamma outside [0,1]");
  for (int64_t i = 0; i < ema.numel(); ++i)
    ema[i] = static_cast<T>(gamma * static_cast<double>(ema[i]) +
                            (1.0 - gamma) * static_cast<double>(params[i]));
}

template <typename T, typename Model>
double grad_global_norm(Model& model, const Binding<T>& bind) {
  double acc = 0.0;
  model.visit_params([&](const std::string&, Tensor<T>& p) {
    const Tensor<T>* gp = bind.grad_of(p);
    if (!gp) return;
    for (int64_t i = 0; i < gp->numel(); ++i) {
      double v = static_cast<double>((*gp)[i]);
      acc += v * v;
    }
  });
  return std::sqrt(acc);
}

}  // namespace lplab
