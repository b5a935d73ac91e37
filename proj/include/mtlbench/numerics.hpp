// Copyright 2026 The mtlbench Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense primitives, a counter-based RNG, and the two small convex solvers
// every aggregator builds on: the min-norm point of a convex hull and the
// positive solution of M a = 1 / a.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlbench/errors.hpp"

namespace mtlbench {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> a, const std::string& what) {
  if (!all_finite(a)) throw NumericalError(what + " contains a non-finite value");
}

// y += s * x
inline void axpy(double s, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

inline Vec scaled(std::span<const double> x, double s) {
  Vec out(x.begin(), x.end());
  for (double& v : out) v *= s;
  return out;
}

inline Vec add(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  axpy(1.0, b, out);
  return out;
}

inline Vec sub(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  axpy(-1.0, b, out);
  return out;
}

inline double sum(std::span<const double> a) {
  return std::accumulate(a.begin(), a.end(), 0.0);
}

// Angle between two vectors in radians; 0 if either is zero.
inline double angle(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::acos(std::clamp(dot(a, b) / (na * nb), -1.0, 1.0));
}

// ---------------------------------------------------------------------------
// Mat
// ---------------------------------------------------------------------------

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, Vec data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw InvalidArgument("Mat: data length does not match rows*cols");
    }
  }

  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Mat m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw InvalidArgument("Mat::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.row(i++).begin());
    }
    return m;
  }

  static Mat from_rows(const std::vector<Vec>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    Mat m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) throw InvalidArgument("Mat::from_rows: ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat diagonal(std::span<const double> d) {
    Mat m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  Vec row_vec(std::size_t r) const {
    auto s = row(r);
    return Vec(s.begin(), s.end());
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Mat transposed() const {
    Mat t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend bool operator==(const Mat& a, const Mat& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

inline Vec matvec(const Mat& m, std::span<const double> x) {
  Vec y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) y[i] = dot(m.row(i), x);
  return y;
}

// x^T M, i.e. sum_i x_i * row_i.
inline Vec combine_rows(const Mat& m, std::span<const double> x) {
  Vec y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) axpy(x[i], m.row(i), y);
  return y;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      axpy(aik, b.row(k), c.row(i));
    }
  return c;
}

// ---------------------------------------------------------------------------
// Simplex
// ---------------------------------------------------------------------------

// Nonnegative weights summing to one.
class Simplex {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit Simplex(Vec weights) : w_(std::move(weights)) {
    if (w_.empty()) throw InvalidArgument("Simplex: empty weight vector");
    double s = 0.0;
    for (double x : w_) {
      if (!std::isfinite(x) || x < 0.0) {
        throw InvalidArgument("Simplex: weights must be finite and nonnegative");
      }
      s += x;
    }
    if (std::abs(s - 1.0) > kSumTolerance) {
      throw InvalidArgument("Simplex: weights do not sum to one");
    }
  }

  static Simplex uniform(std::size_t n) { return Simplex(Vec(n, 1.0 / double(n))); }

  // Clips tiny negative round-off and rescales onto the simplex.
  static Simplex project_normalized(Vec w) {
    for (double& x : w) x = std::max(x, 0.0);
    const double s = sum(w);
    if (!(s > 0.0)) return uniform(w.size());
    for (double& x : w) x /= s;
    return Simplex(std::move(w));
  }

  std::size_t size() const noexcept { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  const Vec& weights() const noexcept { return w_; }

 private:
  Vec w_;
};

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

// Counter-based generator: draw k of stream s under seed x is a pure function
// of (x, s, k), so results do not depend on scheduling or platform integer
// widths. Floating transforms use only IEEE basic operations plus libm
// log/sqrt/cos.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(derive_key(seed, stream)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  // Independent generator keyed by the same seed and a different stream.
  Rng fork(std::uint64_t stream) const { return Rng(seed_, stream_ * 0x100000001b3ULL + stream + 1); }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1).
  double uniform_open() { return (double(next_u64() >> 12) + 0.5) * 0x1.0p-52; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double exponential() { return -std::log(uniform_open()); }

  // Uniform integer in [0, n), rejection-sampled.
  std::size_t index(std::size_t n) {
    if (n == 0) throw InvalidArgument("Rng::index: empty range");
    const std::uint64_t bound = std::uint64_t(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return std::size_t(x % bound);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
    return mix(mix(seed ^ 0x243f6a8885a308d3ULL) ^ mix(stream + 0x13198a2e03707344ULL));
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Gram matrix
// ---------------------------------------------------------------------------

// Pairwise dot products of the rows of g. Exactly symmetric.
inline Mat gram(const Mat& g) {
  const std::size_t n = g.rows();
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = dot(g.row(i), g.row(j));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  require_finite(m.data(), "gram");
  return m;
}

// ---------------------------------------------------------------------------
// Dense linear solve
// ---------------------------------------------------------------------------

// Gaussian elimination with partial pivoting. A pivot smaller than 1e-12
// times the largest entry of A is treated as singular.
inline Vec solve_linear(const Mat& a, std::span<const double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw InvalidArgument("solve_linear: shape mismatch");
  require_finite(a.data(), "solve_linear matrix");
  require_finite(b, "solve_linear rhs");

  Mat lu = a;
  Vec x(b.begin(), b.end());
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  const double pivot_tol = 1e-12 * (scale > 0.0 ? scale : 1.0);

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(p, k))) p = i;
    if (!(std::abs(lu(p, k)) > pivot_tol)) {
      throw DegenerateGeometryError("solve_linear: matrix is singular to working precision");
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
      std::swap(x[k], x[p]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
      x[i] -= f * x[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = x[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= lu(k, j) * x[j];
    x[k] = s / lu(k, k);
  }
  require_finite(x, "solve_linear solution");
  return x;
}

// ---------------------------------------------------------------------------
// Min-norm point in a convex hull
// ---------------------------------------------------------------------------

struct MinNormOptions {
  std::size_t max_iter = 250;
  double tol = 1e-7;
};

struct MinNormResult {
  Simplex weights;
  double norm_sq = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;
};

// Weight on the first vector of the pair that minimizes
// |gamma * a + (1 - gamma) * b| given the Gram entries.
inline double two_point_min_norm(double aa, double ab, double bb) {
  const double denom = aa + bb - 2.0 * ab;
  if (!(denom > 1e-18 * std::max(aa, bb))) return 0.5;
  return std::clamp((bb - ab) / denom, 0.0, 1.0);
}

namespace detail {

// Affine minimizer of |sum_s mu_s g_s| subject to sum mu = 1 over the index
// set S: [M_SS 1; 1^T 0] [mu; nu] = [0; 1]. A tiny ridge keeps nearly
// affinely dependent sets solvable.
inline Vec affine_minimizer(const Mat& m, const std::vector<std::size_t>& set, double ridge) {
  const std::size_t k = set.size();
  Mat a(k + 1, k + 1);
  Vec rhs(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) a(i, j) = m(set[i], set[j]);
    a(i, i) += ridge;
    a(i, k) = a(k, i) = 1.0;
  }
  rhs[k] = 1.0;
  Vec mu = solve_linear(a, rhs);
  mu.pop_back();
  return mu;
}

// Wolfe's minimum-norm-point iterations, started from weights w (positive on
// their support). Returns false if a corral system is singular.
inline bool wolfe_polish(const Mat& m, Vec& w, double tol, std::size_t max_iter, std::size_t& it) {
  const std::size_t n = m.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, m(i, i));
  const double ridge = 1e-14 * max_diag;
  std::vector<std::size_t> set;
  for (std::size_t i = 0; i < n; ++i)
    if (w[i] > 0.0) set.push_back(i);
  for (; it < max_iter; ++it) {
    const Vec mw = matvec(m, w);
    const double xx = dot(w, mw);
    const std::size_t j = std::size_t(std::min_element(mw.begin(), mw.end()) - mw.begin());
    if (xx - mw[j] <= tol * max_diag) return true;
    if (std::find(set.begin(), set.end(), j) == set.end()) set.push_back(j);
    // Minor cycle: move toward the affine minimizer until it is interior.
    for (std::size_t minor = 0; minor <= n + 1; ++minor) {
      Vec mu;
      try {
        mu = affine_minimizer(m, set, ridge);
      } catch (const DegenerateGeometryError&) {
        return false;
      }
      bool interior = true;
      for (double v : mu) interior = interior && v > 0.0;
      if (interior) {
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t s = 0; s < set.size(); ++s) w[set[s]] = mu[s];
        break;
      }
      double theta = 1.0;
      for (std::size_t s = 0; s < set.size(); ++s)
        if (mu[s] <= 0.0) theta = std::min(theta, w[set[s]] / (w[set[s]] - mu[s]));
      std::vector<std::size_t> keep;
      for (std::size_t s = 0; s < set.size(); ++s) {
        const double v = theta * mu[s] + (1.0 - theta) * w[set[s]];
        w[set[s]] = v > 1e-15 ? v : 0.0;
        if (w[set[s]] > 0.0) keep.push_back(set[s]);
      }
      set = std::move(keep);
    }
  }
  return true;
}

}  // namespace detail

// Frank-Wolfe on the Gram matrix with exact line search toward the best
// vertex, started at the barycenter so equal vectors keep uniform weights and
// the two-vector case is solved exactly in one step. If the duality gap is
// still open after 50 steps, Wolfe's minimum-norm-point iterations finish the
// job (plain Frank-Wolfe is sublinear when the optimum lies inside a face).
inline MinNormResult min_norm_in_hull_gram(const Mat& m, MinNormOptions opt = {}) {
  const std::size_t n = m.rows();
  if (n == 0 || m.cols() != n) throw InvalidArgument("min_norm_in_hull: need a square non-empty Gram matrix");
  if (!(opt.tol > 0.0)) throw InvalidArgument("min_norm_in_hull: tol must be positive");
  require_finite(m.data(), "min_norm_in_hull input");

  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, m(i, i));
  if (!(max_diag > 0.0)) {
    return {Simplex::uniform(n), 0.0, 0, true};
  }
  if (n == 1) return {Simplex(Vec{1.0}), m(0, 0), 0, false};

  Vec w(n, 1.0 / double(n));
  Vec mw = matvec(m, w);
  double xx = dot(w, mw);
  std::size_t it = 0;
  bool converged = false;
  const std::size_t fw_iters = std::min<std::size_t>(opt.max_iter, 50);
  for (; it < fw_iters; ++it) {
    const std::size_t t = std::size_t(std::min_element(mw.begin(), mw.end()) - mw.begin());
    const double xg = mw[t];
    const double gg = m(t, t);
    // Duality gap of the linearized problem, scaled by the problem size.
    if (xx - xg <= opt.tol * max_diag) {
      converged = true;
      break;
    }
    const double step = 1.0 - two_point_min_norm(xx, xg, gg);
    if (step <= 0.0) {
      converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      w[i] *= (1.0 - step);
      mw[i] = (1.0 - step) * mw[i] + step * m(i, t);
    }
    w[t] += step;
    xx = dot(w, mw);
  }
  if (!converged) {
    Vec polished = w;
    if (detail::wolfe_polish(m, polished, opt.tol, opt.max_iter, it)) {
      const double px = dot(polished, matvec(m, polished));
      if (px <= xx) {
        w = std::move(polished);
        xx = px;
      }
    }
  }
  return {Simplex::project_normalized(std::move(w)), std::max(xx, 0.0), it, false};
}

inline MinNormResult min_norm_in_hull(const Mat& g, MinNormOptions opt = {}) {
  require_finite(g.data(), "min_norm_in_hull input");
  return min_norm_in_hull_gram(gram(g), opt);
}

// ---------------------------------------------------------------------------
// Positive fixed point of M a = 1 / a
// ---------------------------------------------------------------------------

struct FixedPointResult {
  Vec alpha;
  double residual = 0.0;  // |M a - 1/a|
  std::size_t iterations = 0;
};

inline double fixed_point_residual(const Mat& m, std::span<const double> alpha) {
  Vec r = matvec(m, alpha);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= 1.0 / alpha[i];
  return norm(r);
}

// Damped Newton on f(a) = M a - 1/a, Jacobian M + diag(1/a^2). Starts from
// the diagonal solution a_i = M_ii^{-1/2}; each step is scaled by `damping`
// and halved further whenever it would leave the positive orthant.
inline FixedPointResult positive_fixed_point(const Mat& m, std::size_t iters = 20,
                                             double damping = 0.7) {
  const std::size_t n = m.rows();
  if (n == 0 || m.cols() != n) throw InvalidArgument("positive_fixed_point: need a square matrix");
  if (iters == 0) throw InvalidArgument("positive_fixed_point: iters must be >= 1");
  require_finite(m.data(), "positive_fixed_point input");

  Vec alpha(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(m(i, i) > 1e-24)) {
      throw ZeroGradientError(i, "positive_fixed_point: zero diagonal entry, task gradient vanishes");
    }
    alpha[i] = 1.0 / std::sqrt(m(i, i));
  }

  std::size_t it = 0;
  for (; it < iters; ++it) {
    Vec f = matvec(m, alpha);
    for (std::size_t i = 0; i < n; ++i) f[i] -= 1.0 / alpha[i];
    if (norm(f) == 0.0) break;
    Mat jac = m;
    for (std::size_t i = 0; i < n; ++i) jac(i, i) += 1.0 / (alpha[i] * alpha[i]);
    const Vec delta = solve_linear(jac, f);
    double step = damping;
    Vec next(n);
    for (int halvings = 0; halvings < 60; ++halvings) {
      bool positive = true;
      for (std::size_t i = 0; i < n; ++i) {
        next[i] = alpha[i] - step * delta[i];
        if (!(next[i] > 0.0)) positive = false;
      }
      if (positive) break;
      step *= 0.5;
    }
    if (!all_finite(next) || *std::min_element(next.begin(), next.end()) <= 0.0) break;
    alpha = std::move(next);
  }
  return {alpha, fixed_point_residual(m, alpha), it};
}

}  // namespace mtlbench
