#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "ftv/common.hpp"
#include "ftv/rng.hpp"

namespace ftv {

using EigenMatrix =
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenMatrix>;
using EigenConstMap = Eigen::Map<const EigenMatrix>;

// Dense row-major 2-D tensor. Vectors are columns (n x 1) or rows (1 x n)
// by convention of the call site; scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Real fill = 0)
      : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

  static Tensor scalar(Real x) {
    Tensor t(1, 1);
    t.v_[0] = x;
    return t;
  }

  static Tensor row(std::initializer_list<Real> xs) {
    Tensor t(1, xs.size());
    std::copy(xs.begin(), xs.end(), t.v_.begin());
    return t;
  }

  static Tensor column(const std::vector<Real>& xs) {
    Tensor t(xs.size(), 1);
    t.v_ = xs;
    return t;
  }

  static Tensor randn(std::size_t rows, std::size_t cols, Rng& rng,
                      Real stddev = 1.0) {
    Tensor t(rows, cols);
    for (auto& x : t.v_) x = stddev * rng.next_normal();
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  Real& at(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }
  Real at(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }
  Real& operator[](std::size_t i) { return v_[i]; }
  Real operator[](std::size_t i) const { return v_[i]; }

  Real* data() { return v_.data(); }
  const Real* data() const { return v_.data(); }
  std::vector<Real>& vec() { return v_; }
  const std::vector<Real>& vec() const { return v_; }

  EigenMap mat() {
    return EigenMap(v_.data(), static_cast<Eigen::Index>(rows_),
                    static_cast<Eigen::Index>(cols_));
  }
  EigenConstMap mat() const {
    return EigenConstMap(v_.data(), static_cast<Eigen::Index>(rows_),
                         static_cast<Eigen::Index>(cols_));
  }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  void fill(Real x) { std::fill(v_.begin(), v_.end(), x); }

  bool all_finite() const {
    for (Real x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  Real sum() const {
    Real s = 0;
    for (Real x : v_) s += x;
    return s;
  }

  Real min() const {
    Real m = v_.empty() ? 0 : v_[0];
    for (Real x : v_) m = std::min(m, x);
    return m;
  }

  Real max() const {
    Real m = v_.empty() ? 0 : v_[0];
    for (Real x : v_) m = std::max(m, x);
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> v_;
};

}  // namespace ftv
