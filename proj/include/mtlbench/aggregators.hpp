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

// Gradient-based multi-task optimizers. Each one maps a GradientBundle (the
// per-task gradients of the shared parameters) to an update direction.
//
// Every result also carries per-task weights. Where the method is linear in
// the task gradients the weights are the exact coefficients, i.e.
// direction == sum_i weights[i] * g_i. GradDrop masks individual
// coordinates, so its weights are a proxy (flagged in diagnostics).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mtlbench/errors.hpp"
#include "mtlbench/gradient_bundle.hpp"
#include "mtlbench/numerics.hpp"
#include "mtlbench/weight_vector.hpp"

namespace mtlbench {

using Diagnostics = std::map<std::string, double>;

struct AggregationResult {
  Vec direction;
  WeightVector weights;
  Diagnostics diagnostics;

  double diag(const std::string& key, double fallback = 0.0) const {
    auto it = diagnostics.find(key);
    return it == diagnostics.end() ? fallback : it->second;
  }
};

namespace detail {

inline AggregationResult finish(Vec direction, WeightVector weights, Diagnostics diag = {}) {
  require_finite(direction, "aggregated direction");
  if (!weights.all_nonnegative()) diag["negative_weights"] = 1.0;
  return {std::move(direction), std::move(weights), std::move(diag)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MGDA-UB
// ---------------------------------------------------------------------------

inline AggregationResult mgda_ub(const GradientBundle& b, MinNormOptions opt = {}) {
  const MinNormResult mn = min_norm_in_hull(b.matrix(), opt);
  Vec d = combine_rows(b.matrix(), mn.weights.weights());
  Diagnostics diag{{"iterations", double(mn.iterations)}, {"norm_sq", mn.norm_sq}};
  if (mn.degenerate) diag["degenerate"] = 1.0;
  return detail::finish(std::move(d), WeightVector(mn.weights.weights(), WeightConvention::kSumToOne),
                        std::move(diag));
}

// ---------------------------------------------------------------------------
// PCGrad
// ---------------------------------------------------------------------------

// Each task gradient is projected onto the normal plane of every other task
// gradient it conflicts with, visiting the others in a random order. The
// coefficient of g_k in the final sum is tracked exactly.
inline AggregationResult pcgrad(const GradientBundle& b, Rng& rng) {
  const std::size_t n = b.tasks();
  if (n < 2) throw InvalidArgument("pcgrad: needs at least two tasks");
  Vec coeff(n, 1.0);
  Vec d(b.dim(), 0.0);
  std::size_t projections = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Vec gi = b.matrix().row_vec(i);
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    rng.shuffle(order);
    for (std::size_t j : order) {
      const double nj2 = b.norm(j) * b.norm(j);
      if (!(nj2 > 0.0)) continue;
      const double c = dot(gi, b.row(j));
      if (c < 0.0) {
        axpy(-c / nj2, b.row(j), gi);
        coeff[j] -= c / nj2;
        ++projections;
      }
    }
    axpy(1.0, gi, d);
  }
  return detail::finish(std::move(d), WeightVector(std::move(coeff), WeightConvention::kFree),
                        {{"projections", double(projections)}});
}

// ---------------------------------------------------------------------------
// GradDrop
// ---------------------------------------------------------------------------

struct GradDropOptions {
  double k = 1.0;     // slope of the purity transfer around 0.5
  double leak = 0.5;  // fraction of a dropped gradient that is kept
};

inline double graddrop_transfer(double purity, double k) {
  return std::clamp(0.5 + k * (purity - 0.5), 0.0, 1.0);
}

// Per coordinate: purity P = 0.5 (1 + sum g / sum |g|); draw U ~ U[0,1);
// positive contributions survive when U < f(P), negative ones otherwise.
// A dropped contribution is kept at `leak` strength.
inline AggregationResult graddrop(const GradientBundle& b, Rng& rng, GradDropOptions opt = {}) {
  const std::size_t n = b.tasks();
  const std::size_t dim = b.dim();
  Vec d(dim, 0.0);
  Vec kept_energy(n, 0.0);
  std::size_t dropped = 0;
  for (std::size_t c = 0; c < dim; ++c) {
    double s = 0.0, a = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += b.matrix()(i, c);
      a += std::abs(b.matrix()(i, c));
    }
    if (a == 0.0) continue;
    const double purity = 0.5 * (1.0 + s / a);
    const bool keep_positive = rng.uniform() < graddrop_transfer(purity, opt.k);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = b.matrix()(i, c);
      if (g == 0.0) continue;
      const bool kept = (g > 0.0) == keep_positive;
      const double scale = kept ? 1.0 : opt.leak;
      if (!kept) ++dropped;
      d[c] += scale * g;
      kept_energy[i] += scale * g * g;
    }
  }
  Vec w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = b.norm(i) * b.norm(i);
    w[i] = e > 0.0 ? kept_energy[i] / e : 0.0;
  }
  return detail::finish(std::move(d), WeightVector(std::move(w), WeightConvention::kFree),
                        {{"dropped_entries", double(dropped)}, {"weights_are_proxy", 1.0}});
}

// ---------------------------------------------------------------------------
// EDM
// ---------------------------------------------------------------------------

// Two tasks: d = (sum 1/|g_i|)^{-1} sum g_i/|g_i|.
// More tasks: the min-norm point m of the hull of the unit gradients, scaled
// by N / sum 1/|g_i| (which reproduces the two-task formula). m has equal
// projection on every active unit gradient.
inline AggregationResult edm(const GradientBundle& b, MinNormOptions opt = {}) {
  const std::size_t n = b.tasks();
  b.require_nonzero("edm");
  double inv_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) inv_sum += 1.0 / b.norm(i);
  Vec coeff(n);
  Diagnostics diag;
  if (n <= 2) {
    for (std::size_t i = 0; i < n; ++i) coeff[i] = (1.0 / b.norm(i)) / inv_sum;
    diag["closed_form"] = 1.0;
  } else {
    Mat units(n, b.dim());
    for (std::size_t i = 0; i < n; ++i) {
      const Vec u = b.unit(i);
      std::copy(u.begin(), u.end(), units.row(i).begin());
    }
    const MinNormResult mn = min_norm_in_hull(units, opt);
    const double scale = double(n) / inv_sum;
    for (std::size_t i = 0; i < n; ++i) coeff[i] = scale * mn.weights[i] / b.norm(i);
    diag["closed_form"] = 0.0;
    diag["hull_iterations"] = double(mn.iterations);
    diag["scale"] = scale;
  }
  Vec d(b.dim(), 0.0);
  if (n == 2) {
    // Keep the textbook evaluation order so scaling by s scales d exactly.
    for (std::size_t i = 0; i < n; ++i) axpy(1.0 / b.norm(i), b.row(i), d);
    for (double& v : d) v /= inv_sum;
  } else {
    d = combine_rows(b.matrix(), coeff);
  }
  diag["coefficient_sum"] = sum(coeff);
  return detail::finish(std::move(d), WeightVector(std::move(coeff), WeightConvention::kFree), std::move(diag));
}

// ---------------------------------------------------------------------------
// IMTL-G
// ---------------------------------------------------------------------------

struct ImtlOptions {
  double alpha_max = 1e3;
};

// Solves alpha_{2..N} = g_1 U^T (D U^T)^{-1} with U rows u_1 - u_k and D rows
// g_1 - g_k, alpha_1 = 1 - sum_{k>=2} alpha_k. The resulting direction has
// equal projection onto every unit gradient.
inline AggregationResult imtl_g(const GradientBundle& b, ImtlOptions opt = {}) {
  const std::size_t n = b.tasks();
  if (n < 2) throw InvalidArgument("imtl_g: needs at least two tasks");
  b.require_nonzero("imtl_g");
  std::vector<Vec> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = b.unit(i);
  const std::size_t m = n - 1;
  Mat udt(m, m);  // (U D^T)_{ab} = U_a . D_b
  Vec rhs(m);     // (U g_1)_a
  std::vector<Vec> urows(m), drows(m);
  for (std::size_t k = 0; k < m; ++k) {
    urows[k] = sub(u[0], u[k + 1]);
    drows[k] = sub(b.row(0), b.row(k + 1));
  }
  for (std::size_t a = 0; a < m; ++a) {
    rhs[a] = dot(urows[a], b.row(0));
    for (std::size_t c = 0; c < m; ++c) udt(a, c) = dot(urows[a], drows[c]);
  }
  Vec tail;
  try {
    tail = solve_linear(udt, rhs);
  } catch (const DegenerateGeometryError&) {
    throw DegenerateGeometryError("imtl_g: D U^T is singular (degenerate task geometry)");
  }
  Vec alpha(n);
  alpha[0] = 1.0 - sum(tail);
  std::copy(tail.begin(), tail.end(), alpha.begin() + 1);

  Diagnostics diag;
  Vec resid = matvec(udt, tail);
  for (std::size_t a = 0; a < m; ++a) resid[a] -= rhs[a];
  diag["solve_residual"] = norm(resid);
  bool clamped = false;
  for (double& a : alpha) {
    if (std::abs(a) > opt.alpha_max) {
      a = std::copysign(opt.alpha_max, a);
      clamped = true;
    }
  }
  if (clamped) {
    const double s = sum(alpha);
    if (std::abs(s) > 0.0)
      for (double& a : alpha) a /= s;
    diag["clamped"] = 1.0;
  }
  Vec d = combine_rows(b.matrix(), alpha);
  return detail::finish(std::move(d), WeightVector(std::move(alpha), WeightConvention::kSumToOne),
                        std::move(diag));
}

// ---------------------------------------------------------------------------
// CAGrad
// ---------------------------------------------------------------------------

struct CagradOptions {
  double c = 0.5;
  std::size_t max_iter = 2000;
  double tol = 1e-13;
};

// F(w) = g_w . g_0 + sqrt(phi) |g_w| over the simplex, phi = c^2 |g_0|^2,
// expressed through the Gram matrix M: g_w . g_0 = w^T M 1 / N and
// |g_w| = sqrt(w^T M w).
inline double cagrad_objective(const Mat& gram_m, std::span<const double> w, double sqrt_phi) {
  const std::size_t n = gram_m.rows();
  const Vec mw = matvec(gram_m, w);
  double lin = 0.0;
  for (std::size_t i = 0; i < n; ++i) lin += mw[i];
  lin /= double(n);
  return lin + sqrt_phi * std::sqrt(std::max(dot(w, mw), 0.0));
}

// Euclidean projection onto the probability simplex (sort-based).
inline Vec project_to_simplex(std::span<const double> v) {
  Vec s(v.begin(), v.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - 1.0) / double(i + 1);
    if (s[i] - t > 0.0) theta = t;
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

struct CagradInner {
  Vec w;
  double objective = 0.0;
  std::size_t iterations = 0;
};

// Two tasks: golden-section search on the segment (F is convex in w_1).
// More tasks: projected gradient with Armijo backtracking from the barycenter.
inline CagradInner cagrad_inner(const Mat& gram_m, double sqrt_phi, const CagradOptions& opt) {
  const std::size_t n = gram_m.rows();
  if (n == 1) return {{1.0}, cagrad_objective(gram_m, Vec{1.0}, sqrt_phi), 0};
  if (n == 2) {
    auto f = [&](double x) { return cagrad_objective(gram_m, Vec{x, 1.0 - x}, sqrt_phi); };
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.0, hi = 1.0;
    double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    std::size_t it = 0;
    for (; it < 200 && hi - lo > 1e-12; ++it) {
      if (f1 <= f2) {
        hi = x2; x2 = x1; f2 = f1;
        x1 = hi - r * (hi - lo); f1 = f(x1);
      } else {
        lo = x1; x1 = x2; f1 = f2;
        x2 = lo + r * (hi - lo); f2 = f(x2);
      }
    }
    double best = 0.5 * (lo + hi);
    double fb = f(best);
    for (double cand : {0.0, 1.0}) {
      const double fc = f(cand);
      if (fc < fb) { fb = fc; best = cand; }
    }
    return {{best, 1.0 - best}, fb, it};
  }

  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += gram_m(i, i);
  const double lipschitz = std::max(trace, 1e-300);
  Vec w(n, 1.0 / double(n));
  double fw = cagrad_objective(gram_m, w, sqrt_phi);
  double step = 1.0 / lipschitz;
  std::size_t it = 0;
  for (; it < opt.max_iter; ++it) {
    const Vec mw = matvec(gram_m, w);
    const double gn = std::sqrt(std::max(dot(w, mw), 0.0));
    Vec grad(n);
    for (std::size_t i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) row_sum += gram_m(i, j);
      grad[i] = row_sum / double(n) + (gn > 0.0 ? sqrt_phi * mw[i] / gn : 0.0);
    }
    bool improved = false;
    Vec cand;
    double fc = fw;
    for (int bt = 0; bt < 60; ++bt) {
      Vec trial(n);
      for (std::size_t i = 0; i < n; ++i) trial[i] = w[i] - step * grad[i];
      cand = project_to_simplex(trial);
      fc = cagrad_objective(gram_m, cand, sqrt_phi);
      const Vec diff = sub(cand, w);
      if (fc <= fw + dot(grad, diff) + dot(diff, diff) / (2.0 * step)) {
        improved = fc < fw;
        break;
      }
      step *= 0.5;
    }
    if (!improved || fw - fc <= opt.tol * std::max(1.0, std::abs(fw))) {
      if (improved) { w = cand; fw = fc; }
      break;
    }
    w = std::move(cand);
    fw = fc;
    step *= 2.0;
  }
  return {w, fw, it};
}

// d = g_0 + sqrt(phi) / |g_w*| g_w*.
inline AggregationResult cagrad(const GradientBundle& b, CagradOptions opt = {}) {
  if (!(opt.c >= 0.0 && opt.c < 1.0)) throw InvalidArgument("cagrad: c must be in [0, 1)");
  const std::size_t n = b.tasks();
  const Mat m = gram(b.matrix());
  Vec g0(b.dim(), 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0 / double(n), b.row(i), g0);
  const double sqrt_phi = opt.c * norm(g0);
  const CagradInner inner = cagrad_inner(m, sqrt_phi, opt);
  const Vec gw = combine_rows(b.matrix(), inner.w);
  const double gw_norm = norm(gw);

  Diagnostics diag{{"objective", inner.objective}, {"inner_iterations", double(inner.iterations)}};
  for (std::size_t i = 0; i < n; ++i) diag["w_star_" + std::to_string(i)] = inner.w[i];
  Vec coeff(n, 1.0 / double(n));
  if (gw_norm < 1e-12) {
    diag["fallback_g0"] = 1.0;
  } else {
    const double s = sqrt_phi / gw_norm;
    for (std::size_t i = 0; i < n; ++i) coeff[i] += s * inner.w[i];
  }
  Vec d = g0;
  if (gw_norm >= 1e-12) axpy(sqrt_phi / gw_norm, gw, d);
  return detail::finish(std::move(d), WeightVector(std::move(coeff), WeightConvention::kFree), std::move(diag));
}

// ---------------------------------------------------------------------------
// Nash-MTL
// ---------------------------------------------------------------------------

// alpha > 0 approximately solving G G^T alpha = 1/alpha; d = sum alpha_i g_i.
inline AggregationResult nash_mtl(const GradientBundle& b, std::size_t iters = 20) {
  const Mat m = gram(b.matrix());
  const FixedPointResult fp = positive_fixed_point(m, iters);
  Vec d = combine_rows(b.matrix(), fp.alpha);
  return detail::finish(std::move(d), WeightVector(fp.alpha, WeightConvention::kFree),
                        {{"residual", fp.residual}, {"iterations", double(fp.iterations)}});
}

// ---------------------------------------------------------------------------
// CDTT
// ---------------------------------------------------------------------------

// Running gradient-norm statistics for the tension vector. zeta_i is the mean
// of the last `window` norms of task i.
class CdttState {
 public:
  explicit CdttState(std::size_t tasks = 0, double alpha = 0.6, std::size_t window = 5)
      : alpha_(alpha), window_(window), history_(tasks), prev_zeta_(tasks, 0.0) {
    if (window_ == 0) throw InvalidArgument("CdttState: window must be >= 1");
    if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) throw InvalidArgument("CdttState: alpha must be in [0, 1]");
  }

  double alpha() const noexcept { return alpha_; }
  std::size_t window() const noexcept { return window_; }
  std::size_t tasks() const noexcept { return history_.size(); }
  std::size_t steps() const noexcept { return steps_; }
  const Vec& previous_zeta() const noexcept { return prev_zeta_; }

  // Pushes the current norms; returns (zeta(t), zeta(t-1)) per task. On the
  // first step zeta(t-1) is set equal to zeta(t).
  std::pair<Vec, Vec> push(std::span<const double> norms) {
    const std::size_t n = history_.size();
    Vec now(n), before(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& h = history_[i];
      h.push_back(norms[i]);
      if (h.size() > window_) h.pop_front();
      double s = 0.0;
      for (double v : h) s += v;
      now[i] = s / double(h.size());
      before[i] = steps_ == 0 ? now[i] : prev_zeta_[i];
    }
    prev_zeta_ = now;
    ++steps_;
    return {now, before};
  }

 private:
  double alpha_;
  std::size_t window_;
  std::vector<std::deque<double>> history_;
  Vec prev_zeta_;
  std::size_t steps_ = 0;
};

// c_i = alpha / (1 + exp(-delta_i e + e)) + 1 - alpha.
inline double cdtt_tension_factor(double delta, double alpha) {
  constexpr double e = std::numbers::e;
  return alpha / (1.0 + std::exp(-delta * e + e)) + 1.0 - alpha;
}

// d_n = d + sum_i c_i (g_i - d) / |g_i - d|, d from EDM,
// delta_i = zeta_i(t)/zeta_i(t-1) + log10(l_i).
inline AggregationResult cdtt(const GradientBundle& b, std::span<const double> losses, CdttState& state) {
  const std::size_t n = b.tasks();
  if (losses.size() != n) throw InvalidArgument("cdtt: one loss per task required");
  if (state.tasks() != n) throw InvalidArgument("cdtt: state task count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(losses[i] > 0.0) || !std::isfinite(losses[i])) throw LossDomainError(i, "cdtt: loss must be positive");
  }
  AggregationResult base = edm(b);
  const Vec& dstar = base.direction;
  const Vec& wstar = base.weights.values();
  auto [zeta_now, zeta_prev] = state.push(b.norms());

  Diagnostics diag;
  Vec d = dstar;
  Vec coeff = wstar;
  double pull_sum = 0.0;
  Vec pulls(n, 0.0);
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = zeta_prev[i] > 0.0 ? zeta_now[i] / zeta_prev[i] : 1.0;
    const double delta = ratio + std::log10(losses[i]);
    const double c = cdtt_tension_factor(delta, state.alpha());
    diag["tension_" + std::to_string(i)] = c;
    const Vec diff = sub(b.row(i), dstar);
    const double dn = norm(diff);
    if (dn < 1e-12) {
      ++skipped;
      continue;
    }
    axpy(c / dn, diff, d);
    pulls[i] = c / dn;
    pull_sum += c / dn;
  }
  // d_n = sum_k (w_k (1 - pull_sum) + pull_k) g_k.
  for (std::size_t k = 0; k < n; ++k) coeff[k] = wstar[k] * (1.0 - pull_sum) + pulls[k];
  if (skipped > 0) diag["skipped_tension_terms"] = double(skipped);
  return detail::finish(std::move(d), WeightVector(std::move(coeff), WeightConvention::kFree),
                        std::move(diag));
}

}  // namespace mtlbench
