#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace pointseg {

// Dense row-major double tensor, rank 0..4. Rank 0 is a scalar with one
// element. All training math runs in 64-bit; at this scale GEMM-backed convs
// keep that comfortably fast and finite-difference checks exact.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  static Tensor scalar(double v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& vec() { return v_; }
  const std::vector<double>& vec() const { return v_; }

  double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  // 2D / 3D / 4D indexing, row-major, innermost index last.
  double& at(int a, int b) { return v_[static_cast<size_t>(a) * shape_[1] + b]; }
  double at(int a, int b) const { return v_[static_cast<size_t>(a) * shape_[1] + b]; }
  double& at(int a, int b, int c) {
    return v_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double at(int a, int b, int c) const {
    return v_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double& at(int a, int b, int c, int d) {
    return v_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  double at(int a, int b, int c, int d) const {
    return v_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  double value() const {
    assert(!v_.empty());
    return v_[0];
  }

  void fill(double x);
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double max_abs() const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> v_;
};

}  // namespace pointseg
