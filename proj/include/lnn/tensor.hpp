#pragma once

// Dense row-major tensor. Rank is small (<= 3 in practice); most operations
// view the data as [lead x last] where last is the trailing axis.

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lnn/common.hpp"

namespace lnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (std::size_t d : shape_)
      if (d == 0) throw dim_error("zero-sized axis in " + shape_str(shape_));
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw dim_error("data length " + std::to_string(data_.size()) + " does not match " +
                      shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor from(Shape shape, std::initializer_list<T> vals) {
    return Tensor(std::move(shape), std::vector<T>(vals));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Trailing axis length and the flattened product of the leading axes.
  std::size_t last() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t lead() const { return shape_.empty() ? 0 : size() / last(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * last() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * last() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// True when `small` may broadcast against `big`: equal shapes, a size-1
// scalar on either side, or `small` a strict suffix of `big`'s axes.
inline bool broadcast_as_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i]) return false;
  return true;
}

}  // namespace lnn
