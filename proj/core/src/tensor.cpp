#include "pointseg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "pointseg/common.hpp"

namespace pointseg {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  int64_t n = 1;
  for (int d : shape_) {
    if (d <= 0) throw ConfigError("Tensor: nonpositive dimension in shape " + shape_str());
    n *= d;
  }
  v_.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t(std::vector<int>{}, 0.0);
  t.v_.assign(1, v);
  return t;
}

void Tensor::fill(double x) { std::fill(v_.begin(), v_.end(), x); }

bool Tensor::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : v_) m = std::max(m, std::fabs(x));
  return m;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace pointseg
