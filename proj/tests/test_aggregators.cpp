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

#include <cmath>

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "mtlbench/aggregators.hpp"
#include "oracles.hpp"

namespace mtlbench {
namespace {

GradientBundle random_bundle(Rng& rng, std::size_t tasks, std::size_t dim) {
  Mat g(tasks, dim);
  for (double& v : g.data()) v = rng.normal();
  return GradientBundle(std::move(g));
}

GradientBundle scaled_bundle(const GradientBundle& b, double s) {
  Mat g = b.matrix();
  for (double& v : g.data()) v *= s;
  return GradientBundle(std::move(g));
}

GradientBundle identical_bundle(std::size_t tasks, const Vec& g) {
  return GradientBundle::from_rows(std::vector<Vec>(tasks, g));
}

void expect_direction_matches_weights(const GradientBundle& b, const AggregationResult& r, double tol) {
  const Vec want = combine_rows(b.matrix(), r.weights.values());
  EXPECT_LT(oracle::relative_error(r.direction, want), tol);
}

const Vec kG{1.0, -2.0, 0.5, 3.0};

TEST(EqualGradients, MgdaReturnsTheGradientWithUniformWeights) {
  for (std::size_t n : {2u, 3u, 5u}) {
    const auto r = mgda_ub(identical_bundle(n, kG));
    EXPECT_LT(oracle::relative_error(r.direction, kG), 1e-9);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r.weights[i], 1.0 / n, 1e-9);
  }
}

TEST(EqualGradients, EdmReturnsTheGradient) {
  for (std::size_t n : {2u, 3u, 4u}) {
    const auto r = edm(identical_bundle(n, kG));
    EXPECT_LT(oracle::relative_error(r.direction, kG), 1e-9) << n;
  }
}

TEST(EqualGradients, CagradStretchesTheGradient) {
  for (std::size_t n : {2u, 3u}) {
    const auto r = cagrad(identical_bundle(n, kG), {.c = 0.4});
    EXPECT_LT(oracle::relative_error(r.direction, scaled(kG, 1.4)), 1e-9) << n;
  }
}

TEST(EqualGradients, NashHasClosedForm) {
  for (std::size_t n : {2u, 3u, 4u}) {
    const auto r = nash_mtl(identical_bundle(n, kG));
    // G = |g|^2 11^T, so alpha_i = 1 / (|g| sqrt(N)).
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r.weights[i], 1.0 / (norm(kG) * std::sqrt(double(n))), 1e-9);
  }
}

TEST(EqualGradients, ImtlReportsDegenerateGeometry) {
  EXPECT_THROW(imtl_g(identical_bundle(3, kG)), DegenerateGeometryError);
}

TEST(Pcgrad, TwoTaskClosedForm) {
  const Vec g1{1.0, 0.0, 1.0}, g2{-1.0, 1.0, 0.0};
  const GradientBundle b = GradientBundle::from_rows({g1, g2});
  Rng rng(0);
  const auto r = pcgrad(b, rng);
  const double c = dot(g1, g2);
  ASSERT_LT(c, 0.0);
  const Vec p1 = sub(g1, scaled(g2, c / dot(g2, g2)));
  const Vec p2 = sub(g2, scaled(g1, c / dot(g1, g1)));
  EXPECT_LT(oracle::relative_error(r.direction, add(p1, p2)), 1e-14);
  EXPECT_NEAR(dot(p1, g2), 0.0, 1e-14);
  expect_direction_matches_weights(b, r, 1e-14);
}

TEST(Pcgrad, NonConflictingGradientsAreSummed) {
  const Vec g1{1.0, 0.5}, g2{0.2, 1.0};
  Rng rng(0);
  const auto r = pcgrad(GradientBundle::from_rows({g1, g2}), rng);
  EXPECT_LT(oracle::relative_error(r.direction, add(g1, g2)), 1e-15);
  EXPECT_EQ(r.diag("projections"), 0.0);
}

TEST(Pcgrad, WeightsReproduceDirection) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto b = random_bundle(rng, 2 + rng.index(4), 6);
    expect_direction_matches_weights(b, pcgrad(b, rng), 1e-12);
  }
}

TEST(GradDrop, FullLeakIsPlainSum) {
  Rng rng(4);
  const auto b = random_bundle(rng, 3, 20);
  const auto r = graddrop(b, rng, {.k = 1.0, .leak = 1.0});
  Vec s(20, 0.0);
  for (std::size_t i = 0; i < 3; ++i) axpy(1.0, b.row(i), s);
  EXPECT_LT(oracle::relative_error(r.direction, s), 1e-14);
}

TEST(GradDrop, AgreeingSignsAreNeverDropped) {
  const GradientBundle b = GradientBundle::from_rows({{1.0, -2.0, 0.0}, {0.5, -1.0, 3.0}});
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto r = graddrop(b, rng, {.k = 1.0, .leak = 0.0});
    EXPECT_EQ(r.direction, (Vec{1.5, -3.0, 3.0}));
    EXPECT_EQ(r.diag("dropped_entries"), 0.0);
  }
}

TEST(GradDrop, ZeroLeakKeepsOneSignPerCoordinate) {
  Rng rng(6);
  const auto b = random_bundle(rng, 4, 30);
  const auto r = graddrop(b, rng, {.k = 1.0, .leak = 0.0});
  for (std::size_t c = 0; c < 30; ++c) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < 4; ++i) (b.matrix()(i, c) > 0 ? pos : neg) += b.matrix()(i, c);
    EXPECT_TRUE(r.direction[c] == pos || r.direction[c] == neg) << c;
  }
}

TEST(Edm, TwoTasksBisectTheAngle) {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto b = random_bundle(rng, 2, 5);
    const auto r = edm(b);
    EXPECT_NEAR(angle(r.direction, b.row(0)), angle(r.direction, b.row(1)), 1e-7);
    expect_direction_matches_weights(b, r, 1e-12);
  }
}

TEST(Edm, ScalingGradientsScalesDirection) {
  Rng rng(8);
  for (std::size_t n : {2u, 3u}) {
    const auto b = random_bundle(rng, n, 6);
    const auto r = edm(b);
    const auto rs = edm(scaled_bundle(b, 8.0));
    EXPECT_LT(oracle::relative_error(rs.direction, scaled(r.direction, 8.0)), 1e-9);
  }
}

TEST(Edm, ManyTasksGiveEqualProjectionsWhenInterior) {
  Rng rng(9);
  int checked = 0;
  for (int t = 0; t < 200 && checked < 30; ++t) {
    const auto b = random_bundle(rng, 3 + rng.index(2), 8);
    const auto r = edm(b, {.tol = 1e-12});
    bool interior = true;
    for (double w : r.weights.values()) interior = interior && w > 1e-6;
    if (!interior) continue;
    ++checked;
    const double p0 = dot(r.direction, b.unit(0));
    for (std::size_t i = 1; i < b.tasks(); ++i) EXPECT_NEAR(dot(r.direction, b.unit(i)), p0, 1e-9 * std::abs(p0));
    expect_direction_matches_weights(b, r, 1e-12);
    // The default tolerance bounds the duality gap, hence the spread of the
    // projections, relative to the unit-vector scale.
    const auto loose = edm(b);
    const double q0 = dot(loose.direction, b.unit(0)) / loose.diag("scale");
    for (std::size_t i = 1; i < b.tasks(); ++i)
      EXPECT_NEAR(dot(loose.direction, b.unit(i)) / loose.diag("scale"), q0, 1e-6);
  }
  EXPECT_GE(checked, 10);
}

TEST(Edm, ZeroGradientThrows) {
  EXPECT_THROW(edm(GradientBundle::from_rows({{1.0, 0.0}, {0.0, 0.0}})), ZeroGradientError);
}

TEST(Imtl, EqualProjectionsOnUnitGradients) {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const auto b = random_bundle(rng, 2 + rng.index(4), 10);
    const auto r = imtl_g(b);
    const double p0 = dot(r.direction, b.unit(0));
    for (std::size_t i = 1; i < b.tasks(); ++i) {
      EXPECT_NEAR(dot(r.direction, b.unit(i)), p0, 1e-8 * std::max(1.0, std::abs(p0)));
    }
    EXPECT_NEAR(sum(r.weights.values()), 1.0, 1e-12);
    expect_direction_matches_weights(b, r, 1e-12);
  }
}

TEST(Imtl, ScaleInvariantWeights) {
  Rng rng(11);
  const auto b = random_bundle(rng, 3, 7);
  const auto r = imtl_g(b);
  const auto rs = imtl_g(scaled_bundle(b, 0.01));
  EXPECT_LT(oracle::relative_error(r.weights.values(), rs.weights.values()), 1e-9);
}

TEST(Imtl, ZeroGradientThrows) {
  EXPECT_THROW(imtl_g(GradientBundle::from_rows({{1.0, 0.0}, {0.0, 0.0}})), ZeroGradientError);
}

// The inner CAGrad problem is compared against a dense simplex grid.
TEST(Cagrad, InnerProblemMatchesGrid) {
  Rng rng(12);
  for (std::size_t n : {2u, 3u}) {
    for (int t = 0; t < 20; ++t) {
      const auto b = random_bundle(rng, n, 5);
      const Mat m = gram(b.matrix());
      Vec g0(5, 0.0);
      for (std::size_t i = 0; i < n; ++i) axpy(1.0 / n, b.row(i), g0);
      const double sqrt_phi = 0.5 * norm(g0);
      const auto r = cagrad(b, {.c = 0.5});
      double best = std::numeric_limits<double>::infinity();
      for (const Vec& w : oracle::simplex_grid(n, n == 2 ? 20000 : 400)) {
        best = std::min(best, cagrad_objective(m, w, sqrt_phi));
      }
      const double scale = std::max(1.0, std::abs(best));
      EXPECT_LE(r.diag("objective"), best + 1e-9 * scale);
      EXPECT_GE(r.diag("objective"), best - 1e-3 * scale);
      expect_direction_matches_weights(b, r, 1e-10);
    }
  }
}

TEST(Cagrad, ZeroRadiusIsMeanGradient) {
  Rng rng(13);
  const auto b = random_bundle(rng, 3, 4);
  const auto r = cagrad(b, {.c = 0.0});
  Vec g0(4, 0.0);
  for (std::size_t i = 0; i < 3; ++i) axpy(1.0 / 3, b.row(i), g0);
  EXPECT_LT(oracle::relative_error(r.direction, g0), 1e-14);
}

TEST(Cagrad, RejectsRadiusOutsideUnitInterval) {
  const auto b = identical_bundle(2, kG);
  EXPECT_THROW(cagrad(b, {.c = 1.0}), InvalidArgument);
  EXPECT_THROW(cagrad(b, {.c = -0.1}), InvalidArgument);
}

TEST(Cagrad, ProjectionOntoSimplex) {
  EXPECT_EQ(project_to_simplex(Vec{0.2, 0.3, 0.5}), (Vec{0.2, 0.3, 0.5}));
  const Vec p = project_to_simplex(Vec{2.0, 0.0, -1.0});
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1] + p[2], 0.0, 1e-15);
}

TEST(Nash, FixedPointAndBargainingProperty) {
  Rng rng(14);
  for (int t = 0; t < 50; ++t) {
    const auto b = random_bundle(rng, 2 + rng.index(3), 12);
    const auto r = nash_mtl(b);
    if (r.diag("residual") > 1e-6) continue;  // ill-conditioned draw
    // (G G^T alpha)_i = g_i . d = 1 / alpha_i.
    for (std::size_t i = 0; i < b.tasks(); ++i) {
      EXPECT_NEAR(dot(b.row(i), r.direction) * r.weights[i], 1.0, 1e-5);
      EXPECT_GT(r.weights[i], 0.0);
    }
  }
}

TEST(Nash, DirectionIsScaleInvariant) {
  Rng rng(15);
  const auto b = random_bundle(rng, 3, 8);
  const auto r = nash_mtl(b);
  const auto rs = nash_mtl(scaled_bundle(b, 50.0));
  EXPECT_LT(oracle::relative_error(r.direction, rs.direction), 1e-6);
}

// First CDTT step recomputed from the definition.
TEST(Cdtt, FirstStepMatchesDefinition) {
  Rng rng(16);
  const auto b = random_bundle(rng, 3, 6);
  const Vec losses{0.5, 2.0, 1.2};
  CdttState state(3, 0.6, 5);
  const auto r = cdtt(b, losses, state);
  const Vec dstar = edm(b).direction;
  Vec want = dstar;
  for (std::size_t i = 0; i < 3; ++i) {
    const double delta = 1.0 + std::log10(losses[i]);
    const double c = 0.6 / (1.0 + std::exp(-delta * M_E + M_E)) + 0.4;
    const Vec diff = sub(b.row(i), dstar);
    axpy(c / norm(diff), diff, want);
  }
  EXPECT_LT(oracle::relative_error(r.direction, want), 1e-12);
  expect_direction_matches_weights(b, r, 1e-10);
}

TEST(Cdtt, NormRatioUsesRunningMeans) {
  CdttState state(1, 0.5, 2);
  state.push(Vec{2.0});
  auto [now, before] = state.push(Vec{4.0});
  EXPECT_DOUBLE_EQ(now[0], 3.0);
  EXPECT_DOUBLE_EQ(before[0], 2.0);
  std::tie(now, before) = state.push(Vec{8.0});
  EXPECT_DOUBLE_EQ(now[0], 6.0);
  EXPECT_DOUBLE_EQ(before[0], 3.0);
}

TEST(Cdtt, ZeroAlphaGivesUnitTension) {
  EXPECT_DOUBLE_EQ(cdtt_tension_factor(0.3, 0.0), 1.0);
  EXPECT_NEAR(cdtt_tension_factor(1.0, 0.6), 0.6 * 0.5 + 0.4, 1e-15);
}

TEST(Cdtt, RejectsBadInputs) {
  const auto b = identical_bundle(2, kG);
  CdttState state(2);
  EXPECT_THROW(cdtt(b, Vec{1.0, 0.0}, state), LossDomainError);
  EXPECT_THROW(cdtt(b, Vec{1.0}, state), InvalidArgument);
  CdttState wrong(3);
  EXPECT_THROW(cdtt(b, Vec{1.0, 1.0}, wrong), InvalidArgument);
  EXPECT_THROW(CdttState(2, 0.6, 0), InvalidArgument);
  EXPECT_THROW(CdttState(2, 1.5, 3), InvalidArgument);
}

TEST(Bundle, RejectsNonFiniteGradients) {
  Mat g(2, 2);
  g(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(GradientBundle{g}, NumericalError);
}

}  // namespace
}  // namespace mtlbench
