#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace ruleforge {

// Dense row-major matrix of doubles. All model math runs in 64-bit.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows && c < cols);
    return v[r * cols + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows && c < cols);
    return v[r * cols + c];
  }

  std::span<double> row(std::size_t r) { return {v.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {v.data() + r * cols, cols}; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  Mat zeros_like() const { return Mat(rows, cols); }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// out = a * b
Mat matmul(const Mat& a, const Mat& b);
// out = a * b^T
Mat matmul_bt(const Mat& a, const Mat& b);
// out += a^T * b
void add_matmul_at(Mat& out, const Mat& a, const Mat& b);
// out = a + row vector broadcast
void add_row_inplace(Mat& a, const Mat& row);
void axpy(double alpha, const Mat& x, Mat& y);

}  // namespace ruleforge
