#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "msv/chart_registry.hpp"
#include "msv/error.hpp"
#include "msv/tensor_geometry.hpp"

using namespace msv;
using namespace msv::geom;

namespace {

Vec v2(double a, double b) { return Eigen::Vector2d(a, b); }

Vec unit(int dim, int i) { return Vec::Unit(dim, i); }

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IOError;
}

std::vector<MetricChart> registered_charts() {
  return {euclidean_chart(4),
          polar2_chart(),
          sphere_chart(2, 1.0),
          sphere_chart(4, 1.5),
          sphere_product_chart(2, 1.0),
          warped_bump_chart(4, 0.1),
          h_model_chart(4, ode::AsymptoticProfile::exponential(1.0), 5.0)};
}

Vec random_point(const MetricChart& c, std::mt19937_64& rng, double shrink = 0.8) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec x(c.dim);
  for (int i = 0; i < c.dim; ++i) {
    const double mid = 0.5 * (c.region.lo[i] + c.region.hi[i]);
    const double half = 0.5 * (c.region.hi[i] - c.region.lo[i]) * shrink;
    x[i] = mid + half * (2.0 * u(rng) - 1.0);
  }
  // keep radial charts away from huge radii where the metric is nearly flat anyway
  if (c.label == "warped_bump" || c.label == "h_model") x *= 3.0 / std::max(3.0, x.norm());
  if (c.label == "sphere" || c.label == "sphere_product") x.head(2) *= 0.5;
  return x;
}

std::vector<Vec> random_frame(const Mat& g, int count, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec> f;
  do {
    f.assign(count, Vec(g.rows()));
    for (auto& v : f)
      for (int i = 0; i < v.size(); ++i) v[i] = n(rng);
  } while (!gram_schmidt(g, f, 1e-6));
  return f;
}

}  // namespace

TEST(MetricAt, RegistryExamples) {
  EXPECT_TRUE(metric_at(euclidean_chart(4), Vec::Zero(4)).isApprox(Mat::Identity(4, 4)));
  Mat polar = metric_at(polar2_chart(), v2(2.0, 0.0));
  EXPECT_DOUBLE_EQ(polar(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(polar(1, 1), 4.0);
  EXPECT_DOUBLE_EQ(polar(0, 1), 0.0);
  Mat s = metric_at(sphere_chart(2, 1.0), v2(0.0, 0.0));
  EXPECT_TRUE(s.isApprox(4.0 * Mat::Identity(2, 2)));
}

TEST(MetricAt, Errors) {
  EXPECT_EQ(code_of([] { metric_at(polar2_chart(), v2(0.0, 0.0)); }), ErrorCode::PointOutsideRegion);
  MetricChart bad = euclidean_chart(2);
  bad.metric = [](const Vec&) { return Mat(-Mat::Identity(2, 2)); };
  EXPECT_EQ(code_of([&] { metric_at(bad, v2(0.0, 0.0)); }), ErrorCode::NonSPDMetric);
  bad.metric = [](const Vec&) {
    Mat m = Mat::Identity(2, 2);
    m(0, 1) = 0.5;
    return m;
  };
  EXPECT_EQ(code_of([&] { metric_at(bad, v2(0.0, 0.0)); }), ErrorCode::NonSPDMetric);
}

TEST(CurvaturePacket, EuclideanIsFlat) {
  auto p = curvature_packet(euclidean_chart(4), Vec::Constant(4, 0.3));
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(p.christoffel(a, b, c), 0.0);
        for (int d = 0; d < 4; ++d) EXPECT_EQ(p.riemann(a, b, c, d), 0.0);
      }
}

TEST(CurvaturePacket, PolarChristoffels) {
  for (const bool fd : {false, true}) {
    MetricChart c = polar2_chart();
    if (fd) c.jet = nullptr;
    auto p = curvature_packet(c, v2(2.0, 0.0));
    const double tol = fd ? 1e-6 : 1e-14;
    EXPECT_NEAR(p.christoffel(0, 1, 1), -2.0, tol);
    EXPECT_NEAR(p.christoffel(1, 0, 1), 0.5, tol);
    EXPECT_NEAR(p.christoffel(1, 1, 0), 0.5, tol);
    EXPECT_NEAR(p.christoffel(0, 0, 0), 0.0, tol);
    EXPECT_NEAR(p.riemann(0, 1, 0, 1), 0.0, fd ? 1e-5 : 1e-14);
  }
}

TEST(CurvaturePacket, StereographicSphereSectionalIsOne) {
  auto p = curvature_packet(sphere_chart(2, 1.0), v2(0.0, 0.0));
  EXPECT_NEAR(sectional(p, unit(2, 0), unit(2, 1)), 1.0, 1e-12);
  MetricChart fd = sphere_chart(2, 1.0);
  fd.jet = nullptr;
  EXPECT_NEAR(sectional(fd, v2(0.3, -0.7), v2(1.0, 0.2), v2(-0.4, 1.0)), 1.0, 1e-6);
}

TEST(CurvaturePacket, TooNearBoundaryInFiniteDifferenceMode) {
  MetricChart c = euclidean_chart(2, 1.0);
  c.jet = nullptr;
  EXPECT_EQ(code_of([&] { curvature_packet(c, v2(1.0 - 1e-5, 0.0)); }),
            ErrorCode::PointTooNearBoundary);
}

TEST(CurvaturePacket, SymmetriesAndBianchiOnRegisteredCharts) {
  std::mt19937_64 rng(7);
  for (const auto& chart : registered_charts()) {
    const double tau = chart.mode() == DerivativeMode::Analytic ? 1e-10 : 1e-6;
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      auto p = curvature_packet(chart, random_point(chart, rng));
      worst = std::max(worst, p.symmetry_defect());
    }
    EXPECT_LE(worst, tau) << chart.label;
  }
}

TEST(Sectional, EuclideanZeroAndProductMixedPlaneZero) {
  EXPECT_EQ(sectional(euclidean_chart(4), Vec::Zero(4), unit(4, 0), unit(4, 2)), 0.0);
  auto prod = sphere_product_chart(2, 1.0);
  Vec x(4);
  x << 0.2, -0.1, 0.5, 1.0;
  EXPECT_NEAR(sectional(prod, x, unit(4, 0), unit(4, 2)), 0.0, 1e-12);
  EXPECT_NEAR(sectional(prod, x, unit(4, 0), unit(4, 1)), 1.0, 1e-12);
}

TEST(Sectional, BasisInvariantAndDegenerate) {
  auto p = curvature_packet(warped_bump_chart(4, 0.1), Vec::Constant(4, 0.4));
  Vec X = unit(4, 0) + 0.3 * unit(4, 1), Y = unit(4, 2) - unit(4, 3);
  const double k = sectional(p, X, Y);
  EXPECT_NEAR(sectional(p, 2.0 * X + Y, X - 3.0 * Y), k, 1e-9);
  EXPECT_EQ(code_of([&] { sectional(p, X, 2.0 * X); }), ErrorCode::DegeneratePlane);
}

TEST(RicK, ExamplesAndErrors) {
  std::vector<Vec> V{unit(4, 1), unit(4, 2), unit(4, 3)};
  EXPECT_EQ(ric_k(euclidean_chart(4), Vec::Zero(4), unit(4, 0), V), 0.0);

  const double R = 1.5;
  auto sph = sphere_chart(4, R);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    auto p = curvature_packet(sph, random_point(sph, rng));
    auto f = random_frame(p.metric(), 4, rng);
    EXPECT_NEAR(ric_k(p, f[0], std::span<const Vec>(f).subspan(1)), 1.0 / (R * R), 1e-5);
  }

  auto prod = sphere_product_chart(2, 1.0);
  Vec x = Vec::Constant(4, 0.2);
  std::vector<Vec> flat{unit(4, 3)};
  EXPECT_NEAR(ric_k(prod, x, unit(4, 2), flat), 0.0, 1e-12);

  std::vector<Vec> none;
  EXPECT_EQ(code_of([&] { ric_k(euclidean_chart(4), x, unit(4, 0), none); }), ErrorCode::BadK);
  std::vector<Vec> skew{unit(4, 0) + unit(4, 1)};
  EXPECT_EQ(code_of([&] { ric_k(euclidean_chart(4), x, unit(4, 0), skew); }),
            ErrorCode::NonOrthonormalInput);
  std::vector<Vec> near{unit(4, 1) + 1e-10 * unit(4, 0)};
  EXPECT_NO_THROW(ric_k(euclidean_chart(4), x, unit(4, 0), near));
}

TEST(RicK, MeanOfSectionalsBasisInvarianceAndRicciContraction) {
  std::mt19937_64 rng(11);
  for (const auto& chart : registered_charts()) {
    if (chart.dim < 3) continue;
    const int N = chart.dim;
    for (int s = 0; s < 20; ++s) {
      auto p = curvature_packet(chart, random_point(chart, rng));
      auto f = random_frame(p.metric(), N, rng);
      for (int k = 1; k <= N - 1; ++k) {
        std::span<const Vec> V(f.data() + 1, k);
        const double rk = ric_k(p, f[0], V);
        double mean = 0.0;
        for (const auto& e : V) mean += sectional(p, f[0], e) / k;
        EXPECT_NEAR(rk, mean, 1e-8) << chart.label;

        // rotate V inside its span
        Mat A = Mat::Random(k, k) + 2.0 * Mat::Identity(k, k);
        std::vector<Vec> W(k, Vec::Zero(N));
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) W[i] += A(i, j) * V[j];
        ASSERT_TRUE(gram_schmidt(p.metric(), W));
        EXPECT_NEAR(ric_k(p, f[0], W), rk, 1e-8) << chart.label;
      }
      const double full = ric_k(p, f[0], std::span<const Vec>(f).subspan(1));
      EXPECT_NEAR(full * (N - 1), p.ricci(f[0]), 1e-6) << chart.label;
    }
  }
}

TEST(MinRicKSample, Examples) {
  EXPECT_NEAR(min_ric_k_sample(euclidean_chart(4), 1, 20, 5, 1).min_ric_k, 0.0, 1e-8);
  EXPECT_NEAR(min_ric_k_sample(sphere_chart(4, 1.0), 3, 20, 5, 1).min_ric_k, 1.0, 1e-5);
  // Warped bump, sectional floor -lambda(r) with lambda(s) = e^{-s}
  Box box{Vec::Constant(4, -4.0), Vec::Constant(4, 4.0)};
  auto audit = min_ric_k_sample(warped_bump_chart(4, 0.1), 1, 200, 20, 5,
                                [](const Vec& x) { return std::exp(-x.norm()); }, box);
  EXPECT_GE(audit.min_ric_k, -1.0);
  EXPECT_GE(audit.min_margin, 0.0);
  EXPECT_EQ(audit.samples, 4000);
  auto again = min_ric_k_sample(warped_bump_chart(4, 0.1), 1, 200, 20, 5,
                                [](const Vec& x) { return std::exp(-x.norm()); }, box);
  EXPECT_EQ(audit.min_ric_k, again.min_ric_k);
  EXPECT_EQ(code_of([] { min_ric_k_sample(euclidean_chart(4), 1, 0, 1, 1); }),
            ErrorCode::TooFewDirections);
}

TEST(UnitBallVolume, ClosedForms) {
  EXPECT_DOUBLE_EQ(unit_ball_volume(1), 2.0);
  EXPECT_DOUBLE_EQ(unit_ball_volume(2), std::numbers::pi);
  EXPECT_DOUBLE_EQ(unit_ball_volume(4), std::numbers::pi * std::numbers::pi / 2.0);
  for (int d = 1; d <= 12; ++d) {
    EXPECT_NEAR(unit_ball_volume(d),
                std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0),
                1e-14 * unit_ball_volume(d));
  }
  EXPECT_EQ(code_of([] { unit_ball_volume(0); }), ErrorCode::BadDimension);
}

TEST(UnitBallVolume, CodimensionTwoConstantIdentity) {
  for (int n = 1; n <= 10; ++n) {
    const double lhs =
        std::pow((n + 2) * unit_ball_volume(n + 2) / (2.0 * unit_ball_volume(2)), 1.0 / n);
    EXPECT_NEAR(lhs, std::pow(unit_ball_volume(n), 1.0 / n), 1e-12);
  }
}
