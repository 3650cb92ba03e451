#include "ruleforge/tensor.hpp"

namespace ruleforge {

Mat matmul(const Mat& a, const Mat& b) {
  assert(a.cols == b.rows);
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.v.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.v[i * a.cols + k];
      if (aik == 0.0) continue;
      const double* br = b.v.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Mat matmul_bt(const Mat& a, const Mat& b) {
  assert(a.cols == b.cols);
  Mat out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

void add_matmul_at(Mat& out, const Mat& a, const Mat& b) {
  assert(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ar = a.v.data() + k * a.cols;
    const double* br = b.v.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* o = out.v.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += aki * br[j];
    }
  }
}

void add_row_inplace(Mat& a, const Mat& row) {
  assert(row.size() == a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) a(i, j) += row.v[j];
}

void axpy(double alpha, const Mat& x, Mat& y) {
  assert(x.same_shape(y));
  for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] += alpha * x.v[i];
}

}  // namespace ruleforge
