#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace misode {

// Dense row-major 2D tensor. Vectors are (n, 1) or (1, n); scalars (1, 1).
template <typename T>
class Tensor {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using ConstMap = Eigen::Map<const Mat>;

  Tensor() = default;
  Tensor(long rows, long cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), T(0)) {}

  // Uniform allocation alignment keeps Eigen's vectorized kernels on the same
  // code path for every buffer, making forward passes bit-reproducible.
  using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

  static Tensor zeros(long rows, long cols) { return Tensor(rows, cols); }

  long rows() const { return rows_; }
  long cols() const { return cols_; }
  long size() const { return rows_ * cols_; }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& at(long r, long c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  const T& at(long r, long c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

  Map map() { return Map(data_.data(), rows_, cols_); }
  ConstMap map() const { return ConstMap(data_.data(), rows_, cols_); }

  void set_zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (long i = 0; i < size(); ++i) out.data()[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  long rows_ = 0;
  long cols_ = 0;
  Storage data_;
};

}  // namespace misode
