#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "msv/chart_registry.hpp"
#include "msv/discrete_submanifold.hpp"
#include "msv/error.hpp"

using namespace msv;
using namespace msv::sub;

namespace {

constexpr double kPi = std::numbers::pi;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no msv::Error thrown";
  return ErrorCode::IOError;
}

ImmersedSubmanifold build(const std::string& id, int level, std::map<std::string, double> params = {}) {
  const Immersion imm = make_immersion({id, params, level});
  if (id == "product_slice") {
    return build_immersion(geom::sphere_product_chart(imm.ambient_dim - 2), imm);
  }
  return build_immersion(geom::euclidean_chart(imm.ambient_dim), imm);
}

std::vector<double> constant(const ImmersedSubmanifold& s, double v) {
  return std::vector<double>(s.size(), v);
}

}  // namespace

TEST(Mesh, DiskCountsAndOrientation) {
  const TriMesh m = ring_disk_mesh(1.0, 4);
  EXPECT_EQ(m.size(), 817u);  // 1 + 3 K (K + 1)
  EXPECT_EQ(m.boundary_edges.size(), 96u);
  double area = 0.0;
  for (const auto& t : m.triangles) {
    const P2 a = m.vertices[t[1]] - m.vertices[t[0]], b = m.vertices[t[2]] - m.vertices[t[0]];
    const double cross = a.x() * b.y() - a.y() * b.x();
    EXPECT_GT(cross, 0.0);
    area += 0.5 * cross;
  }
  EXPECT_NEAR(area, 0.5 * 96 * std::sin(2 * kPi / 96), 1e-12);
  // Euler characteristic of a disk
  EXPECT_EQ(static_cast<long>(m.size()) - static_cast<long>(m.triangles.size() * 3 + 96) / 2 +
                static_cast<long>(m.triangles.size()),
            1);
}

TEST(Mesh, AnnulusHasTwoBoundaryLoops) {
  const TriMesh m = ring_annulus_mesh(0.5, 1.0, 3);
  int inner = 0, outer = 0;
  for (const auto& e : m.boundary_edges) {
    const P2 a = m.vertices[e[0]], b = m.vertices[e[1]];
    const double turn = a.x() * b.y() - a.y() * b.x();
    (a.norm() < 0.75 ? inner : outer) += 1;
    if (a.norm() < 0.75) {
      EXPECT_LT(turn, 0.0);
    } else {
      EXPECT_GT(turn, 0.0);
    }
  }
  EXPECT_GE(inner, 6);
  EXPECT_GT(outer, inner);
  // annulus: V - E + F = 0
  const long E = (static_cast<long>(m.triangles.size()) * 3 + inner + outer) / 2;
  EXPECT_EQ(static_cast<long>(m.size()) - E + static_cast<long>(m.triangles.size()), 0);
}

TEST(Immersion, FlatDiskHasNoCurvature) {
  const auto s = build("flat_disk", 3);
  EXPECT_EQ(s.m, 2);
  for (const auto& v : s.vertex) {
    EXPECT_LT(v.mean_curvature.norm(), 1e-8);
    for (const auto& ii : v.second_fundamental) EXPECT_LT(ii.norm(), 1e-8);
  }
  EXPECT_NEAR(s.area, 0.5 * 48 * std::sin(2 * kPi / 48), 1e-10);
  EXPECT_NEAR(s.boundary_measure, 48 * 2 * std::sin(kPi / 48), 1e-10);
}

TEST(Immersion, SphereCapMeanCurvatureIsTwo) {
  const auto s = build("sphere_cap", 4);
  double worst = 0.0;
  for (const auto& v : s.vertex) worst = std::max(worst, std::abs(v.mean_curvature_frame.norm() - 2.0));
  EXPECT_LT(worst, 1e-3);
  EXPECT_LT(s.orthogonality_defect, 1e-6);
  EXPECT_NEAR(s.area, 2 * kPi, 2e-2);
  EXPECT_NEAR(s.boundary_measure, 2 * kPi, 1e-2);
  // conormal of the hemisphere points straight down
  for (std::size_t v = 0; v < s.size(); ++v) {
    if (!s.mesh.on_boundary[v]) continue;
    EXPECT_NEAR(s.vertex[v].conormal[2], 1.0, 1e-6);
  }
}

TEST(Immersion, SaddleGraphIsMinimalAtOrigin) {
  const auto s = build("graph", 4);
  EXPECT_LT(s.vertex[0].mean_curvature.norm(), 1e-3);
  // |II|^2 = 2 amp^2 at the origin
  double sq = 0.0;
  for (const auto& ii : s.vertex[0].second_fundamental) sq += ii.squaredNorm();
  EXPECT_NEAR(sq, 2.0, 1e-4);
  EXPECT_LT(s.orthogonality_defect, 1e-6);
}

TEST(Immersion, ProductSliceIsTotallyGeodesic) {
  const auto s = build("product_slice", 3);
  EXPECT_EQ(s.N, 4);
  for (const auto& v : s.vertex) EXPECT_LT(v.mean_curvature.norm(), 1e-6);
}

TEST(Immersion, Errors) {
  EXPECT_EQ(code_of([] { make_immersion({"torus", {}, 2}); }), ErrorCode::RegistryMiss);
  EXPECT_EQ(code_of([] { make_immersion({"flat_disk", {{"bogus", 1}}, 2}); }), ErrorCode::RegistryMiss);
  EXPECT_EQ(code_of([] {
              build_immersion(geom::euclidean_chart(3), make_immersion({"flat_disk", {}, 2}));
            }),
            ErrorCode::BadDimension);
  auto imm = make_immersion({"flat_disk", {}, 2});
  imm.map = [](const P2& p) { return (Vec(4) << p.x(), p.x(), 0, 0).finished(); };
  EXPECT_EQ(code_of([&] { build_immersion(geom::euclidean_chart(4), imm); }),
            ErrorCode::DegenerateImmersion);
  auto split = make_immersion({"flat_disk", {}, 1});
  split.mesh.vertices.emplace_back(5.0, 5.0);
  split.mesh.on_boundary.push_back(0);
  split.mesh.boundary_normal.emplace_back(0.0, 0.0);
  EXPECT_EQ(code_of([&] { build_immersion(geom::euclidean_chart(4), split); }),
            ErrorCode::DisconnectedMesh);
}

TEST(Density, RegistryAndPositivity) {
  const auto s = build("flat_disk", 2);
  const auto f = sample_density(s, {"radial_polynomial", {{"a2", 1.0}}});
  EXPECT_NEAR(f[s.size() - 1], 2.0, 1e-12);
  EXPECT_EQ(code_of([&] { sample_density(s, {"bump", {{"amplitude", -2.0}}}); }), ErrorCode::NonPositiveF);
  EXPECT_EQ(code_of([&] { sample_density(s, {"gaussian", {}}); }), ErrorCode::RegistryMiss);
  EXPECT_EQ(code_of([&] { sample_density(s, {"constant", {{"a2", 1}}}); }), ErrorCode::RegistryMiss);
}

TEST(Neumann, FlatDiskConvergesToQuadratic) {
  // f = 1 on the flat disk: u = |x|^2 / 2 up to a constant, c = 1 in the limit
  std::vector<double> err;
  for (int level = 2; level <= 5; ++level) {
    const auto s = build("flat_disk", level);
    const auto sol = solve_neumann(s, constant(s, 1.0));
    EXPECT_LT(sol.solver_residual, 1e-10);
    EXPECT_LT(sol.compatibility_gap, 1e-12);
    EXPECT_NEAR(sol.scale, 1.0 / std::cos(kPi / (6 << level)), 1e-10);
    std::vector<double> exact(s.size());
    for (std::size_t v = 0; v < s.size(); ++v) exact[v] = 0.5 * s.mesh.vertices[v].squaredNorm();
    err.push_back(gauge_l2_distance(s, sol.u, exact));
  }
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double order = std::log2(err[i - 1] / err[i]);
    EXPECT_GE(order, 1.9) << "level " << i + 2 << " errors " << err[i - 1] << " " << err[i];
  }
}

TEST(Neumann, ConstantDensityIsScaleFree) {
  const auto s = build("sphere_cap", 3);
  const auto a = solve_neumann(s, constant(s, 1.0));
  const auto b = solve_neumann(s, constant(s, 7.5));
  EXPECT_NEAR(a.scale, 7.5 * b.scale, 1e-12 * a.scale);
  EXPECT_LT(gauge_l2_distance(s, a.u, b.u), 1e-9);
}

TEST(Neumann, AnnulusWithUnitDensity) {
  // c = 2 from the flux balance; the solution converges under refinement
  const auto s3 = build("flat_annulus", 3);
  const auto s4 = build("flat_annulus", 4);
  const auto s5 = build("flat_annulus", 5);
  const auto u3 = solve_neumann(s3, constant(s3, 1.0));
  const auto u4 = solve_neumann(s4, constant(s4, 1.0));
  const auto u5 = solve_neumann(s5, constant(s5, 1.0));
  EXPECT_NEAR(u5.scale, 2.0, 1e-2);
  // outer minus inner boundary average
  const auto radial = [](const ImmersedSubmanifold& s, const NeumannSolution& sol) {
    double outer = 0, inner = 0;
    int no = 0, ni = 0;
    for (std::size_t v = 0; v < s.size(); ++v) {
      if (!s.mesh.on_boundary[v]) continue;
      if (s.mesh.vertices[v].norm() > 0.75) {
        outer += sol.u[v];
        ++no;
      } else {
        inner += sol.u[v];
        ++ni;
      }
    }
    return outer / no - inner / ni;
  };
  const double d3 = radial(s3, u3), d4 = radial(s4, u4), d5 = radial(s5, u5);
  EXPECT_LT(std::abs(d5 - d4), 0.5 * std::abs(d4 - d3) + 1e-12);
  // u'' + u'/r = 2 c, u'(1) = 1, u'(1/2) = -1: u' = c r - A / r
  const double c = u5.scale;
  const double A = c - 1.0;
  const double exact = 0.5 * c * (1.0 - 0.25) - A * std::log(2.0);
  EXPECT_NEAR(d5, exact, 5e-3);
}

TEST(Neumann, DivergenceIdentity) {
  const auto s = build("graph", 4);
  const auto f = sample_density(s, {"bump", {{"amplitude", 0.8}, {"width", 0.3}}});
  const auto sol = solve_neumann(s, f);
  EXPECT_NEAR(sol.divergence_integral, sol.rhs_integral, 1e-8 * (1.0 + std::abs(sol.rhs_integral)));
  EXPECT_NEAR(sol.boundary_flux, sol.rhs_integral, 1e-8 * (1.0 + std::abs(sol.rhs_integral)));
}

TEST(Neumann, Theorem2WithZeroDecayMatchesTheorem1) {
  const auto s = build("sphere_cap", 3);
  const auto f = sample_density(s, {"radial_polynomial", {}});
  const auto a = solve_neumann(s, f);
  const auto b = solve_neumann(s, f, {NeumannMode::Theorem2, 0.0});
  EXPECT_EQ(a.scale, b.scale);
  EXPECT_LT(gauge_l2_distance(s, a.u, b.u), 1e-12);
  const auto c = solve_neumann(s, f, {NeumannMode::Theorem2, 0.2});
  EXPECT_GT(c.scale, a.scale);
}

TEST(Neumann, Errors) {
  const auto s = build("flat_disk", 2);
  auto f = constant(s, 1.0);
  f[3] = 0.0;
  EXPECT_EQ(code_of([&] { solve_neumann(s, f); }), ErrorCode::NonPositiveF);
  EXPECT_EQ(code_of([&] { solve_neumann(s, {1.0}); }), ErrorCode::BadDimension);
  NeumannOptions tight;
  tight.max_iterations = 1;
  EXPECT_EQ(code_of([&] { solve_neumann(s, constant(s, 1.0), tight); }), ErrorCode::UnconvergedSolver);
  NeumannOptions neg{NeumannMode::Theorem2, -100.0};
  EXPECT_EQ(code_of([&] { solve_neumann(s, constant(s, 1.0), neg); }), ErrorCode::CompatibilityUnreachable);
}

TEST(Lemma, PositivePartShrinksWithMesh) {
  std::vector<double> pos, h;
  for (int level = 3; level <= 5; ++level) {
    const auto s = build("sphere_cap", level);
    const auto f = sample_density(s, {"bump", {{"amplitude", 0.5}, {"width", 0.4}}});
    const auto sol = solve_neumann(s, f);
    const auto rep = lemma_pointwise_check(s, sol);
    EXPECT_GT(rep.vertices_checked, 0);
    EXPECT_EQ(rep.samples, 16 * rep.vertices_checked);
    pos.push_back(rep.max_positive_part);
    h.push_back(rep.mesh_size);
  }
  for (std::size_t i = 0; i < pos.size(); ++i) EXPECT_LE(pos[i], 2.0 * h[i]) << "level " << i + 3;
}

TEST(Lemma, FlatDiskHessianIsIdentity) {
  const auto s = build("flat_disk", 4);
  const auto sol = solve_neumann(s, constant(s, 1.0));
  const int center = 0;
  EXPECT_NEAR(sol.hessian[center](0, 0), sol.scale, 1e-2);
  EXPECT_NEAR(sol.hessian[center](0, 1), 0.0, 1e-2);
  EXPECT_NEAR(sol.laplacian[center], 2.0 * sol.scale, 1e-2);
}

TEST(Samples, NormalDisk) {
  for (int m : {1, 2, 3, 5}) {
    const auto ys = normal_disk_samples(m, 0.7, 40);
    ASSERT_EQ(ys.size(), 40u);
    for (const auto& y : ys) {
      EXPECT_EQ(y.size(), m);
      EXPECT_LE(y.norm(), 0.7 + 1e-15);
    }
  }
  EXPECT_TRUE(normal_disk_samples(2, 1.0, 0).empty());
}

TEST(Functionals, FlatDiskIsSharp) {
  const auto s = build("flat_disk", 5);
  const auto f = constant(s, 1.0);
  const auto lhs = functional_lhs(s, f);
  EXPECT_NEAR(lhs.total / (2 * kPi), 1.0, 5e-3);
  EXPECT_NEAR(lhs.gradient_term, 0.0, 1e-8);
  const auto rhs = functional_rhs(s, f, 1.0);
  EXPECT_NEAR(rhs.constant, std::sqrt(kPi), 1e-14);
  EXPECT_NEAR(rhs.total / (2 * kPi), 1.0, 5e-3);
  EXPECT_GE(lhs.total, rhs.total * (1 - 1e-12));
}

TEST(Functionals, Hemisphere) {
  const auto s = build("sphere_cap", 5);
  const auto f = constant(s, 1.0);
  const auto lhs = functional_lhs(s, f);
  EXPECT_NEAR(lhs.total / (6 * kPi), 1.0, 1e-2);
  const auto rhs = functional_rhs(s, f, 1.0);
  EXPECT_NEAR(rhs.total, 2 * kPi * std::sqrt(2.0), 2e-2);
}

TEST(Functionals, Homogeneity) {
  const auto s = build("graph", 3);
  auto f = sample_density(s, {"bump", {}});
  const auto l1 = functional_lhs(s, f).total, r1 = functional_rhs(s, f, 1.0).total;
  for (double& v : f) v *= 3.0;
  EXPECT_NEAR(functional_lhs(s, f).total, 3.0 * l1, 1e-12 * l1);
  EXPECT_NEAR(functional_rhs(s, f, 1.0).total, 3.0 * r1, 1e-12 * r1);
}

TEST(Functionals, Theorem2Factors) {
  const auto s = build("flat_disk", 3);
  const auto f = constant(s, 1.0);
  EXPECT_NEAR(functional_lhs(s, f, NeumannMode::Theorem2, 0.0).total, functional_lhs(s, f).total, 1e-14);
  const auto l = functional_lhs(s, f, NeumannMode::Theorem2, 0.5);
  EXPECT_NEAR(l.b1_term, 2 * 2 * 0.5 * s.area, 1e-12);
  const auto r = functional_rhs(s, f, 1.0, NeumannMode::Theorem2, {0.3, 0.1, 0.9});
  EXPECT_NEAR(r.decay_factor, std::pow(1.3 / std::exp(2 * 0.9 * 0.1 + 0.3), 1.5), 1e-14);
}

TEST(Functionals, Errors) {
  const auto imm = make_immersion({"flat_disk", {{"ambient_dim", 3}}, 2});
  const auto s = build_immersion(geom::euclidean_chart(3), imm);
  EXPECT_EQ(code_of([&] { functional_rhs(s, constant(s, 1.0), 1.0); }), ErrorCode::BadCodimension);
  const auto s4 = build("flat_disk", 2);
  EXPECT_EQ(code_of([&] { functional_rhs(s4, constant(s4, 1.0), 0.0); }), ErrorCode::BadDimension);
}

TEST(Export, OffAndCsv) {
  const auto s = build("flat_disk", 1);
  std::ostringstream off, csv;
  write_off(s, off);
  write_field_csv({0.5, 1.25}, csv);
  EXPECT_EQ(off.str().rfind("nOFF\n4\n19 24 0\n", 0), 0u);
  EXPECT_EQ(csv.str(), "vertex,value\n0,0.5\n1,1.25\n");
}
