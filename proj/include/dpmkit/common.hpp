#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpmkit {

// Error categories map onto CLI exit codes: io=2, staging=3, numeric=4.
// Shape/config/index errors are programming or input errors and also exit 2
// when they escape a command.
enum class ErrorKind { io, shape, config, index, numeric, staging };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// Dense row-major matrix of doubles. Vectors are 1 x n or n x 1.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(size_t(r) * c, fill) {}

  double& operator()(int r, int c) { return a[size_t(r) * cols + c]; }
  double operator()(int r, int c) const { return a[size_t(r) * cols + c]; }

  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat zeros(int r, int c) { return Mat(r, c, 0.0); }
  static Mat ones(int r, int c) { return Mat(r, c, 1.0); }

  static Mat filled(int r, int c, std::initializer_list<double> vals) {
    Mat m(r, c);
    require(vals.size() == m.size(), ErrorKind::shape, "filled: value count mismatch");
    std::copy(vals.begin(), vals.end(), m.a.begin());
    return m;
  }

  static Mat randn(int r, int c, std::mt19937_64& rng, double stddev = 1.0) {
    Mat m(r, c);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : m.a) v = dist(rng);
    return m;
  }

  static Mat uniform(int r, int c, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    Mat m(r, c);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : m.a) v = dist(rng);
    return m;
  }

  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline Mat matmul(const Mat& x, const Mat& y) {
  require(x.cols == y.rows, ErrorKind::shape, "matmul: inner dims differ");
  Mat out(x.rows, y.cols);
  // ikj order keeps the inner loop contiguous
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = &x.a[size_t(i) * x.cols];
    double* oi = &out.a[size_t(i) * out.cols];
    for (int k = 0; k < x.cols; ++k) {
      const double v = xi[k];
      if (v == 0.0) continue;
      const double* yk = &y.a[size_t(k) * y.cols];
      for (int j = 0; j < y.cols; ++j) oi[j] += v * yk[j];
    }
  }
  return out;
}

// x * y^T
inline Mat matmul_nt(const Mat& x, const Mat& y) {
  require(x.cols == y.cols, ErrorKind::shape, "matmul_nt: inner dims differ");
  Mat out(x.rows, y.rows);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = &x.a[size_t(i) * x.cols];
    for (int j = 0; j < y.rows; ++j) {
      const double* yj = &y.a[size_t(j) * y.cols];
      double s = 0.0;
      for (int k = 0; k < x.cols; ++k) s += xi[k] * yj[k];
      out(i, j) = s;
    }
  }
  return out;
}

// x^T * y
inline Mat matmul_tn(const Mat& x, const Mat& y) {
  require(x.rows == y.rows, ErrorKind::shape, "matmul_tn: inner dims differ");
  Mat out(x.cols, y.cols);
  for (int k = 0; k < x.rows; ++k) {
    const double* xk = &x.a[size_t(k) * x.cols];
    const double* yk = &y.a[size_t(k) * y.cols];
    for (int i = 0; i < x.cols; ++i) {
      const double v = xk[i];
      if (v == 0.0) continue;
      double* oi = &out.a[size_t(i) * out.cols];
      for (int j = 0; j < y.cols; ++j) oi[j] += v * yk[j];
    }
  }
  return out;
}

inline Mat transpose(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
  return out;
}

inline double dot_row(const Mat& x, int rx, const Mat& y, int ry) {
  require(x.cols == y.cols, ErrorKind::shape, "dot_row: width mismatch");
  double s = 0.0;
  for (int k = 0; k < x.cols; ++k) s += x(rx, k) * y(ry, k);
  return s;
}

inline double row_norm(const Mat& x, int r) {
  double s = 0.0;
  for (int k = 0; k < x.cols; ++k) s += x(r, k) * x(r, k);
  return std::sqrt(s);
}

inline double max_abs_diff(const Mat& x, const Mat& y) {
  require(x.same_shape(y), ErrorKind::shape, "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < x.a.size(); ++i) m = std::max(m, std::abs(x.a[i] - y.a[i]));
  return m;
}

// Splitmix-style seed derivation so that independent consumers (sampler,
// init, augmentation, ...) never share a stream.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace dpmkit
