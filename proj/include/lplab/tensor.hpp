#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lplab {

// Dense row-major tensor with shared storage. Copies are shallow; use clone()
// for a deep copy. Layout convention across the project is NCHW.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(numel_of(shape_)), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> values) : shape_(std::move(shape)) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape_))
      throw std::invalid_argument("Tensor: value count does not match shape");
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }

  int64_t numel() const { return numel_of(shape_); }
  bool empty() const { return !data_ || data_->empty(); }

  std::vector<T>& data() { return *data_; }
  const std::vector<T>& data() const { return *data_; }
  T* ptr() { return data_->data(); }
  const T* ptr() const { return data_->data(); }

  T& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  T item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return (*data_)[0];
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel()) throw std::invalid_argument("reshape: numel mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape_);
    for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>((*data_)[static_cast<size_t>(i)]);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::string s = "[";
  for (int i = 0; i < t.ndim(); ++i) s += (i ? "," : "") + std::to_string(t.dim(i));
  return s + "]";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace lplab
