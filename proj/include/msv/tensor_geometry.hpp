#pragma once

// Metric charts and the curvature quantities derived from them.
//
// Sign convention: R(X,Y)Z = D_X D_Y Z - D_Y D_X Z - D_[X,Y] Z and the fully
// lowered tensor is Rm(a,b,c,d) = <R(a,b)d, c>, so that Rm(X,Y,X,Y) > 0 on the
// round sphere and the intermediate Ricci curvature reads
//   Ric_k(X, V) = (1/k) sum_i Rm(X, e_i, X, e_i).

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace msv::geom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Box {
  Vec lo;
  Vec hi;

  bool contains(const Vec& x) const;
  /// Distance from x to the nearest face (negative outside).
  double margin(const Vec& x) const;
};

/// Metric value with first and second coordinate derivatives:
/// dg[k] = d_k g,  ddg[k*N + l] = d_k d_l g.
struct MetricJet {
  Mat g;
  std::vector<Mat> dg;
  std::vector<Mat> ddg;
};

enum class DerivativeMode { Analytic, FiniteDifference };

struct MetricChart {
  std::string label;
  int dim = 0;
  Box region;
  std::function<Mat(const Vec&)> metric;
  /// Present for DerivativeMode::Analytic.
  std::function<MetricJet(const Vec&)> jet;
  /// Closed-form distance to the chart's base point o, when known.
  std::function<double(const Vec&)> origin_distance;
  /// User-declared; never verified.
  bool declared_complete = true;
  bool declared_noncompact = true;

  DerivativeMode mode() const { return jet ? DerivativeMode::Analytic : DerivativeMode::FiniteDifference; }
  /// Central-difference step 1e-4 (1 + |x|).
  static double fd_step(const Vec& x) { return 1e-4 * (1.0 + x.norm()); }
};

/// Christoffel symbols and lowered Riemann tensor at one chart point.
class CurvaturePacket {
 public:
  CurvaturePacket(Vec point, Mat g, Mat g_inv, std::vector<double> gamma, std::vector<double> rm);

  int dim() const { return dim_; }
  const Vec& point() const { return point_; }
  const Mat& metric() const { return g_; }
  const Mat& metric_inverse() const { return g_inv_; }

  /// Gamma^k_{ij}
  double christoffel(int k, int i, int j) const { return gamma_[(k * dim_ + i) * dim_ + j]; }
  /// Rm_{abcd}
  double riemann(int a, int b, int c, int d) const {
    return rm_[((a * dim_ + b) * dim_ + c) * dim_ + d];
  }

  /// Gamma(u, v)^k = Gamma^k_{ij} u^i v^j
  Vec christoffel_contract(const Vec& u, const Vec& v) const;
  /// Rm(X, Y, Z, W)
  double rm(const Vec& X, const Vec& Y, const Vec& Z, const Vec& W) const;
  /// Matrix M with M(c,d) = Rm(V, e_c, V, e_d) in coordinate components.
  Mat jacobi_operator(const Vec& V) const;
  /// g^{jl} Rm(X, e_j, X, e_l)
  double ricci(const Vec& X) const;
  /// Largest violation of the Riemann symmetries and the first Bianchi identity.
  double symmetry_defect() const;

 private:
  int dim_;
  Vec point_;
  Mat g_;
  Mat g_inv_;
  std::vector<double> gamma_;
  std::vector<double> rm_;
};

/// Symmetrized metric at x. Throws PointOutsideRegion or NonSPDMetric.
Mat metric_at(const MetricChart& chart, const Vec& x);

/// Metric with first and second derivatives, analytic or central differences.
MetricJet metric_jet(const MetricChart& chart, const Vec& x);

CurvaturePacket curvature_packet(const MetricChart& chart, const Vec& x);

/// Gamma^k_{ij} at index (k*N + i)*N + j, from first derivatives only.
std::vector<double> christoffel_symbols(const MetricChart& chart, const Vec& x);

double sectional(const CurvaturePacket& packet, const Vec& X, const Vec& Y);
double sectional(const MetricChart& chart, const Vec& x, const Vec& X, const Vec& Y);

/// Intermediate Ricci curvature of (X, span V), X unit and V orthonormal and
/// orthogonal to X in the metric. Inputs within 1e-8 of orthonormal are
/// re-orthonormalized; worse inputs throw NonOrthonormalInput.
double ric_k(const CurvaturePacket& packet, const Vec& X, std::span<const Vec> V);
double ric_k(const MetricChart& chart, const Vec& x, const Vec& X, std::span<const Vec> V);

/// Gram-Schmidt in the metric g. Returns false on (near) dependence.
bool gram_schmidt(const Mat& g, std::vector<Vec>& vectors, double tol = 1e-12);

struct RicKAudit {
  double min_ric_k = 0.0;
  /// min over samples of ric_k(x) + floor(x); equals min_ric_k without a floor.
  double min_margin = 0.0;
  Vec argmin;
  int samples = 0;
};

/// Samples n_points chart points uniformly in `box` (defaults to the chart
/// region shrunk by the finite-difference margin) and n_frames random
/// orthonormal (X, V) frames per point. Deterministic for a given seed.
RicKAudit min_ric_k_sample(const MetricChart& chart, int k, int n_points, int n_frames,
                           std::uint64_t seed,
                           const std::function<double(const Vec&)>& floor = {},
                           const std::optional<Box>& box = std::nullopt);

/// |B^d| = pi^{d/2} / Gamma(d/2 + 1).
double unit_ball_volume(int d);

}  // namespace msv::geom
