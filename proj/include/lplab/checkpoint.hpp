#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lplab/tensor.hpp"

namespace lplab {

using TensorAny = std::variant<Tensor<float>, Tensor<double>>;
using TensorEntry = std::pair<std::string, TensorAny>;

// Container layout: 8-byte little-endian unsigned header length, UTF-8 JSON
// header mapping tensor names to {dtype, shape, byte_offset} (offsets into
// the data section, non-overlapping, in header order), then contiguous
// row-major little-endian tensor data.
void save_checkpoint(const std::string& path, const std::vector<TensorEntry>& tensors);

// Loads entries whose names start with `prefix` (empty = all).
std::vector<TensorEntry> load_checkpoint(const std::string& path, const std::string& prefix = "");

// Model helpers: persist/restore visit_params tensors under `prefix`.
template <typename Model>
std::vector<TensorEntry> model_entries(Model& m, const std::string& prefix) {
  std::vector<TensorEntry> out;
  m.visit_params([&](const std::string& name, Tensor<float>& t) {
    out.emplace_back(prefix + name, t.clone());
  });
  return out;
}

template <typename Model>
void restore_model(Model& m, const std::vector<TensorEntry>& entries, const std::string& prefix) {
  m.visit_params([&](const std::string& name, Tensor<float>& t) {
    for (const auto& [ename, value] : entries) {
      if (ename != prefix + name) continue;
      const auto& src = std::get<Tensor<float>>(value);
      if (!src.same_shape(t))
        throw std::runtime_error("restore_model: shape mismatch for " + ename);
      std::copy_n(src.ptr(), src.numel(), t.ptr());
      return;
    }
    throw std::runtime_error("restore_model: missing tensor " + prefix + name);
  });
}

}  // namespace lplab
