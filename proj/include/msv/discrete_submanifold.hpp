#pragma once

// Surfaces (n = 2) given as parametric immersions of a triangulated disk or
// annulus into a metric chart, with P1 finite elements for the Neumann
// problem and quadrature for the Sobolev functionals.

#include <array>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msv/tensor_geometry.hpp"

namespace msv::sub {

using geom::Mat;
using geom::Vec;
using P2 = Eigen::Vector2d;

struct TriMesh {
  std::vector<P2> vertices;
  std::vector<std::array<int, 3>> triangles;      // counterclockwise
  std::vector<std::array<int, 2>> boundary_edges;  // interior on the left
  std::vector<char> on_boundary;
  std::vector<P2> boundary_normal;  // outward unit normal in the parameter plane
  double h = 0.0;                   // longest parameter edge

  std::size_t size() const { return vertices.size(); }
};

/// Center vertex plus 2^level rings; ring j carries 6 j vertices.
TriMesh ring_disk_mesh(double radius, int level);
/// ceil((r_out - r_in) 2^level) radial layers, about 6 rho / h vertices per ring.
TriMesh ring_annulus_mesh(double r_in, double r_out, int level);

struct ImmersionSpec {
  std::string id;
  std::map<std::string, double> params;
  int refinement = 4;
};

struct Immersion {
  std::string id;
  int ambient_dim = 0;
  std::function<Vec(const P2&)> map;
  TriMesh mesh;
  bool minimal = false;  // H = 0 by construction
};

/// Ids: flat_disk, flat_annulus, sphere_cap, graph, product_slice.
/// Throws RegistryMiss for unknown ids or parameters.
Immersion make_immersion(const ImmersionSpec& spec);
const std::vector<std::string>& immersion_ids();

struct VertexGeometry {
  Vec x;                      // chart point F(p)
  Mat jacobian;               // N x 2, d_i F
  Eigen::Matrix2d metric;     // induced g_ij
  Eigen::Matrix2d coeff;      // e_k = jacobian * coeff.col(k), orthonormal
  Mat tangent;                // N x 2 orthonormal tangent frame
  Mat normal;                 // N x m orthonormal normal frame
  std::vector<Mat> second_fundamental;  // [beta](i, j) = <II(e_i, e_j), nu_beta>
  Vec mean_curvature;         // H in chart components
  Vec mean_curvature_frame;   // H in normal frame components
  std::array<double, 8> surface_christoffel{};  // Gamma^k_ij of g, index (k*2+i)*2+j
  Vec conormal;               // outward unit conormal at boundary vertices, empty elsewhere
};

struct ImmersedSubmanifold {
  int n = 2;
  int m = 0;
  int N = 0;
  std::string immersion_id;
  TriMesh mesh;
  std::vector<VertexGeometry> vertex;
  std::vector<double> tri_area;
  std::vector<Eigen::Matrix2d> tri_metric_inverse;
  std::vector<double> boundary_length;  // per boundary edge
  std::vector<double> lumped_mass;      // one third of adjacent areas
  double area = 0.0;
  double boundary_measure = 0.0;
  double r0 = 0.0;                     // max distance to the chart base point
  double max_mean_curvature = 0.0;
  double orthogonality_defect = 0.0;   // max |<H, d_i F>| / (1 + |H|)
  bool minimal = false;

  std::size_t size() const { return vertex.size(); }
};

/// Induced metric, second fundamental form and mean curvature from central
/// differences of the immersion and the ambient Christoffel symbols.
/// Throws DegenerateImmersion, BadDimension, DisconnectedMesh.
ImmersedSubmanifold build_immersion(const geom::MetricChart& chart, const Immersion& immersion);

struct DensitySpec {
  std::string id = "constant";
  std::map<std::string, double> params;
};

/// Ids: constant(value), bump(value, amplitude, width, center_0..), radial_polynomial(value, a2, a4).
/// Functions of the chart point. Throws RegistryMiss.
std::function<double(const Vec&)> make_density(const DensitySpec& spec);
const std::vector<std::string>& density_ids();
/// Vertex values of f; throws NonPositiveF.
std::vector<double> sample_density(const ImmersedSubmanifold& sigma, const DensitySpec& spec);

enum class NeumannMode { Theorem1, Theorem2 };

struct NeumannOptions {
  NeumannMode mode = NeumannMode::Theorem1;
  double b1 = 0.0;
  double tolerance = 1e-10;
  int max_iterations = 100000;
};

struct NeumannSolution {
  std::vector<double> u;         // mean-zero
  double scale = 1.0;            // f is replaced by scale * f before solving
  std::vector<double> f;         // scaled density
  std::vector<double> rhs;       // vertex values of the source term
  double compatibility_gap = 0.0;  // |int rhs - int_boundary f| / int_boundary f
  double solver_residual = 0.0;    // |K u - b| / |b|
  double pde_residual = 0.0;       // lumped L2 norm of (K u - b) / M
  int iterations = 0;
  std::vector<Vec> grad_u;       // tangent frame components per vertex
  std::vector<Vec> grad_f;
  std::vector<char> omega;       // interior and |D u| < 1
  std::vector<double> laplacian;   // lumped weak Laplacian, NaN on the boundary
  std::vector<Mat> hessian;        // tangent frame, trace equal to laplacian
  double divergence_integral = 0.0;  // sum of lumped div(f D u)
  double boundary_flux = 0.0;        // int_boundary f <D u, nu>
  double rhs_integral = 0.0;
};

/// P1 solution of div(f D u) = n f^{n/(n-1)} - sqrt(|D f|^2 + f^2 |H|^2) [- 2 n b1 f]
/// with <D u, nu> = 1 after rescaling f to make the problem compatible.
/// Throws NonPositiveF, DisconnectedMesh, CompatibilityUnreachable, UnconvergedODE.
NeumannSolution solve_neumann(const ImmersedSubmanifold& sigma, const std::vector<double>& f,
                              const NeumannOptions& options = {});

/// Deterministic low-discrepancy points in the m-ball of the given radius.
std::vector<Vec> normal_disk_samples(int m, double radius, int count);

struct LemmaReport {
  double max_positive_part = 0.0;
  double max_value = 0.0;   // signed maximum over samples
  int worst_vertex = -1;
  int vertices_checked = 0;
  int samples = 0;
  double mesh_size = 0.0;
  bool boundary_adjacent_worst = false;
};

/// max over interior x in Omega and normal samples y with |D u|^2 + |y|^2 <= 1 of
/// Delta u - <H, y> - n f^{1/(n-1)} [+ 2 n b1].
LemmaReport lemma_pointwise_check(const ImmersedSubmanifold& sigma, const NeumannSolution& sol,
                                  int normal_samples = 16, const NeumannOptions& options = {});

struct LhsBreakdown {
  double gradient_term = 0.0;  // int sqrt(|D f|^2 + f^2 |H|^2)
  double b1_term = 0.0;        // 2 n b1 int f
  double boundary_term = 0.0;  // int_boundary f
  double total = 0.0;
};
LhsBreakdown functional_lhs(const ImmersedSubmanifold& sigma, const std::vector<double>& f,
                            NeumannMode mode = NeumannMode::Theorem1, double b1 = 0.0);

struct RhsExtras {
  double b0 = 0.0;
  double b1 = 0.0;
  double r0 = 0.0;
};

struct RhsBreakdown {
  double constant = 0.0;  // ((n+m)|B^{n+m}| / (m |B^m|))^{1/n}
  double theta = 0.0;
  double decay_factor = 1.0;  // ((1 + b0) / e^{2 r0 b1 + b0})^{(n+m-1)/n}
  double f_integral = 0.0;    // int f^{n/(n-1)}
  double total = 0.0;
};
/// Throws BadCodimension for m < 2.
RhsBreakdown functional_rhs(const ImmersedSubmanifold& sigma, const std::vector<double>& f,
                            double theta, NeumannMode mode = NeumannMode::Theorem1,
                            const RhsExtras& extras = {});

/// ((n+m)|B^{n+m}| / (m |B^m|))^{1/n}
double sobolev_constant(int n, int m);

/// Lumped L2 norm of (a - mean a) - (b - mean b).
double gauge_l2_distance(const ImmersedSubmanifold& sigma, const std::vector<double>& a,
                         const std::vector<double>& b);

void write_off(const ImmersedSubmanifold& sigma, std::ostream& out);
void write_field_csv(const std::vector<double>& values, std::ostream& out);

}  // namespace msv::sub
