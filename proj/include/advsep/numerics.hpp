#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace advsep {

// Deterministic Gaussian source: std::mt19937_64 (bit-exact by the standard)
// feeding a Box-Muller transform. Both halves of each pair are consumed, so the
// draw count per gaussian() call is stable. uniform() maps to (0,1] so log() is
// always finite.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

  static const char* algorithm() { return "mt19937_64+box_muller"; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return pos_; }

  std::uint64_t next_u64() {
    ++pos_;
    return gen_();
  }

  double uniform() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 6.283185307179586476925286766559 * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_;
  std::uint64_t pos_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct Vector {
  std::vector<double> e;

  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : e(dim, fill) {
    if (dim == 0) throw std::invalid_argument("Vector: dim must be >= 1");
  }
  explicit Vector(std::vector<double> entries) : e(std::move(entries)) {
    if (e.empty()) throw std::invalid_argument("Vector: dim must be >= 1");
  }

  std::size_t dim() const { return e.size(); }
  double& operator[](std::size_t i) { return e[i]; }
  double operator[](std::size_t i) const { return e[i]; }
  double* data() { return e.data(); }
  const double* data() const { return e.data(); }
};

struct Matrix {
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> e;  // row-major

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), e(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("Matrix: zero dimension");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return e[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return e[i * cols_ + j]; }
  double* row(std::size_t i) { return e.data() + i * cols_; }
  const double* row(std::size_t i) const { return e.data() + i * cols_; }
};

inline bool all_finite(const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

inline bool all_finite(const Vector& v) { return all_finite(v.data(), v.dim()); }
inline bool all_finite(const Matrix& m) { return all_finite(m.e.data(), m.e.size()); }

inline double dot(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(const Vector& v) {
  double s = 0.0;
  for (double x : v.e) s += x * x;
  return s;
}

inline double norm(const Vector& v) { return std::sqrt(norm_sq(v)); }

inline void scale_in_place(Vector& v, double c) {
  for (double& x : v.e) x *= c;
}

// y = M x
inline Vector matvec(const Matrix& m, const Vector& x) {
  if (x.dim() != m.cols()) throw std::invalid_argument("matvec: dimension mismatch");
  Vector y(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

// y = M^T x  (single pass over rows keeps the access contiguous)
inline Vector matvec_t(const Matrix& m, const Vector& x) {
  if (x.dim() != m.rows()) throw std::invalid_argument("matvec_t: dimension mismatch");
  Vector y(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) y[j] += xi * r[j];
  }
  return y;
}

// Compensated (Kahan) accumulator for order-stable reductions.
struct KahanSum {
  double s = 0.0, c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  double value() const { return s; }
};

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double variance, Rng& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("gaussian_matrix: zero dimension");
  if (!(variance > 0.0)) throw std::invalid_argument("gaussian_matrix: variance must be > 0");
  Matrix m(rows, cols);
  const double sd = std::sqrt(variance);
  for (double& x : m.e) x = sd * rng.gaussian();
  return m;
}

inline Vector gaussian_vector(std::size_t dim, double variance, Rng& rng) {
  if (dim == 0) throw std::invalid_argument("gaussian_vector: zero dimension");
  if (!(variance > 0.0)) throw std::invalid_argument("gaussian_vector: variance must be > 0");
  Vector v(dim);
  const double sd = std::sqrt(variance);
  for (double& x : v.e) x = sd * rng.gaussian();
  return v;
}

// Orthogonal projector onto the span of a set of vectors, kept as an explicit
// orthonormal basis. Modified Gram-Schmidt with one re-orthogonalization pass;
// columns whose residual falls below 1e-10 of their original norm are treated
// as linearly dependent and dropped.
class Projector {
 public:
  static constexpr double kRankTol = 1e-10;

  explicit Projector(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("Projector: zero dimension");
  }

  std::size_t dim() const { return dim_; }
  std::size_t rank() const { return basis_.size(); }
  const std::vector<Vector>& basis() const { return basis_; }

  void absorb(const Vector& col) {
    if (col.dim() != dim_) throw std::invalid_argument("Projector: dimension mismatch");
    const double orig = norm(col);
    if (orig == 0.0) return;
    Vector w = col;
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& b : basis_) {
        const double c = dot(w, b);
        for (std::size_t i = 0; i < dim_; ++i) w[i] -= c * b[i];
      }
    const double res = norm(w);
    if (res <= kRankTol * orig) return;
    scale_in_place(w, 1.0 / res);
    basis_.push_back(std::move(w));
  }

  Vector apply(const Vector& v) const {
    if (v.dim() != dim_) throw std::invalid_argument("Projector: dimension mismatch");
    Vector out(dim_);
    for (const Vector& b : basis_) {
      const double c = dot(v, b);
      for (std::size_t i = 0; i < dim_; ++i) out[i] += c * b[i];
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::vector<Vector> basis_;
};

inline Projector projector_from_columns(const std::vector<Vector>& columns) {
  if (columns.empty()) throw std::invalid_argument("projector_from_columns: no columns");
  Projector p(columns.front().dim());
  for (const Vector& c : columns) p.absorb(c);
  return p;
}

inline Vector apply_complement(const Projector& p, const Vector& v) {
  Vector proj = p.apply(v);
  Vector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = v[i] - proj[i];
  return out;
}

enum class TailSide { lower, upper };

// Analytic chi-square tail bound (z e^{1-z})^{dof/2}: bounds P{X < z dof} for
// z < 1 and P{X > z dof} for z > 1, X ~ chi^2_dof.
inline double chi_square_tail_bound(double z, std::size_t dof, TailSide side) {
  if (dof == 0) throw std::invalid_argument("chi_square_tail_bound: dof must be >= 1");
  if (!(z > 0.0)) throw std::invalid_argument("chi_square_tail_bound: z must be > 0");
  if (side == TailSide::lower && !(z < 1.0))
    throw std::invalid_argument("chi_square_tail_bound: lower side needs z < 1");
  if (side == TailSide::upper && !(z > 1.0))
    throw std::invalid_argument("chi_square_tail_bound: upper side needs z > 1");
  return std::exp(0.5 * static_cast<double>(dof) * (std::log(z) + 1.0 - z));
}

// Largest singular value by power iteration on M^T M, converged to relative
// tolerance tol. The start vector comes from a fixed-seed stream so repeated
// calls agree bit-for-bit.
inline double spectral_norm(const Matrix& m, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("spectral_norm: tol must be > 0");
  if (!all_finite(m)) throw std::invalid_argument("spectral_norm: non-finite entries");
  Rng rng(0x5ee3a1u ^ (m.rows() * 0x9e3779b9u) ^ m.cols());
  Vector v = gaussian_vector(m.cols(), 1.0, rng);
  scale_in_place(v, 1.0 / norm(v));
  double sigma = 0.0;
  const std::size_t max_iters = 100000;
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vector w = matvec(m, v);
    const double s = norm(w);
    if (s == 0.0) return 0.0;
    Vector u = matvec_t(m, w);
    const double un = norm(u);
    if (un == 0.0) return s;
    scale_in_place(u, 1.0 / un);
    v = std::move(u);
    if (it > 0 && std::abs(s - sigma) <= tol * s) return s;
    sigma = s;
  }
  throw std::runtime_error("spectral_norm: power iteration did not converge");
}

}  // namespace advsep
