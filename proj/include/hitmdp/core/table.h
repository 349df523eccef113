#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace hitmdp {

// Dense row-major tables used by the finite solvers.
class Table2 {
 public:
  Table2() = default;
  Table2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }
  double* row(std::size_t i) { return v_.data() + i * cols_; }
  const double* row(std::size_t i) const { return v_.data() + i * cols_; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

class Table3 {
 public:
  Table3() = default;
  Table3(std::size_t d0, std::size_t d1, std::size_t d2, double fill = 0.0)
      : d0_(d0), d1_(d1), d2_(d2), v_(d0 * d1 * d2, fill) {}

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return v_[(i * d1_ + j) * d2_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return v_[(i * d1_ + j) * d2_ + k];
  }
  // Innermost row (i, j, :).
  double* row(std::size_t i, std::size_t j) { return v_.data() + (i * d1_ + j) * d2_; }
  const double* row(std::size_t i, std::size_t j) const {
    return v_.data() + (i * d1_ + j) * d2_;
  }

  std::size_t dim0() const { return d0_; }
  std::size_t dim1() const { return d1_; }
  std::size_t dim2() const { return d2_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  std::vector<double>& data() { return v_; }
  const std::vector<double>& data() const { return v_; }

 private:
  std::size_t d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<double> v_;
};

}  // namespace hitmdp
