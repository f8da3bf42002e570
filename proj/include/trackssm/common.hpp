#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace trackssm {

// ---------------------------------------------------------------------------
// Error types. Everything throws; callers at the CLI boundary translate to
// exit codes.
// ---------------------------------------------------------------------------

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Minimal dense math. All model state is double; matrices are row-major.
// ---------------------------------------------------------------------------

using Vec = std::vector<double>;

struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return a.size(); }
  void fill(double v) { std::fill(a.begin(), a.end(), v); }
};

// y = W x
inline void matvec(const Mat& W, const Vec& x, Vec& y) {
  if (static_cast<int>(x.size()) != W.cols)
    throw DimensionError("matvec: vector length " + std::to_string(x.size()) +
                         " does not match matrix cols " + std::to_string(W.cols));
  y.assign(W.rows, 0.0);
  for (int r = 0; r < W.rows; ++r) {
    const double* row = &W.a[static_cast<size_t>(r) * W.cols];
    double acc = 0.0;
    for (int c = 0; c < W.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y = W x + b
inline Vec affine(const Mat& W, const Vec& x, const Vec& b) {
  if (static_cast<int>(b.size()) != W.rows)
    throw DimensionError("affine: bias length does not match matrix rows");
  Vec y;
  matvec(W, x, y);
  for (int r = 0; r < W.rows; ++r) y[r] += b[r];
  return y;
}

// G += u v^T
inline void add_outer(Mat& G, const Vec& u, const Vec& v) {
  for (int r = 0; r < G.rows; ++r) {
    double* row = &G.a[static_cast<size_t>(r) * G.cols];
    const double ur = u[r];
    for (int c = 0; c < G.cols; ++c) row[c] += ur * v[c];
  }
}

// x += W^T u
inline void matvec_t_add(const Mat& W, const Vec& u, Vec& x) {
  for (int r = 0; r < W.rows; ++r) {
    const double* row = &W.a[static_cast<size_t>(r) * W.cols];
    const double ur = u[r];
    for (int c = 0; c < W.cols; ++c) x[c] += row[c] * ur;
  }
}

inline void add_scaled(Vec& y, const Vec& x, double s) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(m.a); }

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// x * sigmoid(x)
inline double silu(double x) { return x * sigmoid(x); }

inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// inverse of softplus, y > 0
inline double softplus_inv(double y) { return std::log(std::expm1(y)); }

// ---------------------------------------------------------------------------
// Seeded RNG with explicit distributions so that results do not depend on the
// standard library's <random> distribution implementations.
// ---------------------------------------------------------------------------

struct Rng {
  std::mt19937_64 gen;

  explicit Rng(uint64_t seed) : gen(seed) {}

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller, no cached spare
  double normal() {
    const double u1 = (static_cast<double>(gen() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // inclusive range
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen() % span);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }
};

}  // namespace trackssm
