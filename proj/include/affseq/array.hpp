#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace affseq::ad {

/// Dense row-major array of 64-bit reals. Rank 0 (scalar), 1 and 2 are the
/// shapes the op set works with; storage itself is rank-agnostic.
class Array {
public:
  Array() = default;
  explicit Array(std::vector<int64_t> shape);
  Array(std::vector<int64_t> shape, std::vector<double> data);

  static Array scalar(double v);
  static Array zeros(std::vector<int64_t> shape);
  static Array full(std::vector<int64_t> shape, double v);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }

  // rank-2 accessors; rank-1 arrays behave as a single row
  int64_t rows() const;
  int64_t cols() const;
  double& at(int64_t r, int64_t c) { return data_[r * cols() + c]; }
  double at(int64_t r, int64_t c) const { return data_[r * cols() + c]; }

  double& operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  void fill(double v);
  void add_inplace(const Array& o);  // shapes must match

private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

std::string format_shape(const std::vector<int64_t>& shape);

// raises std::invalid_argument naming both shapes
void check_same_shape(const char* op, const Array& a, const Array& b);

// C = A * B for row-major rank-2 arrays; deterministic regardless of
// thread count (each output row is reduced sequentially).
void matmul_into(Array& out, const Array& a, const Array& b);

}  // namespace affseq::ad
