#include "affseq/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace affseq::ad {

namespace {
int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("Array: negative dimension in " + format_shape(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Array::Array(std::vector<int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_size(shape_)), 0.0) {}

Array::Array(std::vector<int64_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != static_cast<int64_t>(data_.size()))
    throw std::invalid_argument("Array: data length " + std::to_string(data_.size()) +
                                " does not match shape " + format_shape(shape_));
}

Array Array::scalar(double v) { return Array({1}, {v}); }

Array Array::zeros(std::vector<int64_t> shape) { return Array(std::move(shape)); }

Array Array::full(std::vector<int64_t> shape, double v) {
  Array a(std::move(shape));
  a.fill(v);
  return a;
}

int64_t Array::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() <= 1) return 1;
  throw std::invalid_argument("Array::rows: rank > 2 array " + format_shape(shape_));
}

int64_t Array::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  if (shape_.empty()) return 1;
  throw std::invalid_argument("Array::cols: rank > 2 array " + format_shape(shape_));
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Array::shape_str() const { return format_shape(shape_); }

void Array::fill(double v) {
  for (double& x : data_) x = v;
}

void Array::add_inplace(const Array& o) {
  check_same_shape("add_inplace", *this, o);
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
}

std::string format_shape(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_same_shape(const char* op, const Array& a, const Array& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void matmul_into(Array& out, const Array& a, const Array& b) {
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  out = Array({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
#endif
  for (int64_t i = 0; i < m; ++i) {
    double* ci = pc + i * n;
    const double* ai = pa + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const double av = ai[l];
      if (av == 0.0) continue;
      const double* bl = pb + l * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

}  // namespace affseq::ad
