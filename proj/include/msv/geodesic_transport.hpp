#pragma once

// Geodesics, parallel frames and the Jacobi matrix P(t) along transport rays
// t -> exp_x(t D u + t y) of a submanifold, with the determinant and Riccati
// checks built on them, and Monte Carlo asymptotic volume ratios.
//
// Matrices P, P', S, Q are expressed in the parallel frame E_A(t): row A of P
// holds the frame components of the Jacobi field X_A, so P'' = -P S with
// S_CB = Rm(gamma', E_C, gamma', E_B).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msv/comparison_ode.hpp"
#include "msv/tensor_geometry.hpp"

namespace msv::transport {

using geom::Mat;
using geom::MetricChart;
using geom::Vec;

struct GeodesicTrajectory {
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> v;
  std::vector<Mat> frame;  // columns E_A; empty unless transported
  double step = 0.0;
  double error_estimate = 0.0;
  bool left_region = false;
  double exit_time = 0.0;  // valid when left_region

  std::size_t size() const { return t.size(); }
};

/// RK4 integration of the geodesic equation. Leaving the chart stops the
/// integration with left_region set, or throws LeftChartRegion when asked.
GeodesicTrajectory exp_map(const MetricChart& chart, const Vec& x, const Vec& v, double T,
                           double dt, bool throw_on_exit = false);

/// Re-integrates `geodesic` jointly with the parallel transport of frame0.
GeodesicTrajectory parallel_frame(const MetricChart& chart, const GeodesicTrajectory& geodesic,
                                  const Mat& frame0);

/// max_k | |v_k|_g - |v_0|_g | / max(1, |v_0|_g)
double speed_drift(const MetricChart& chart, const GeodesicTrajectory& traj);
/// max_k max_AB | <E_A, E_B>_g - delta_AB |
double frame_defect(const MetricChart& chart, const GeodesicTrajectory& traj);

/// Submanifold data at a base point, in an orthonormal frame whose first n
/// columns span the tangent space and last m the normal space.
struct PointData {
  int n = 0;
  int m = 0;
  Vec x;
  Mat frame;
  Vec du;    // frame components of D u, length n
  Vec ybar;  // frame components of y, length m
  Mat hessian;                          // (D^2 u)(e_i, e_j)
  std::vector<Mat> second_fundamental;  // [beta](i, j) = <II(e_i, e_j), e_{n+beta}>
  double laplacian = 0.0;               // Laplacian of u at x
};

struct TransportRay {
  int n = 0;
  int m = 0;
  Vec base;
  Mat frame0;  // adapted: E_1 || D u and E_{n+1} || y whenever nonzero
  Vec du;
  Vec ybar;
  Mat hessian;
  std::vector<Mat> second_fundamental;
  double laplacian = 0.0;
  double speed_a = 0.0;
  double angle_s = 0.0;  // cos s = |D u| / a
  double cos2_s = 1.0;
  double r_max = 0.0;
  double dt = 0.0;

  Vec initial_velocity() const;
  /// Laplacian of u minus <H, y>.
  double pairing() const;
  /// Frame components of H.
  Vec mean_curvature() const;
};

/// Rotates the tangent and normal blocks so the frame is adapted. With
/// kink > 0 the step is aligned so that t = kink is a grid node.
TransportRay make_transport_ray(const PointData& data, double r_max, double dt,
                                double kink = -1.0);

struct JacobiSystem {
  TransportRay ray;
  double step = 0.0;
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> v;
  std::vector<Mat> frame;
  std::vector<Mat> P;
  std::vector<Mat> dP;
  std::vector<Mat> S;
  std::vector<double> det;
  std::optional<double> conjugate_time;
  double error_estimate = 0.0;

  // Riccati matrix on t in (10 dt, t_conj - dt)
  std::vector<std::size_t> q_index;
  std::vector<Mat> Q;
  std::vector<Mat> dQ;       // sub-step centered difference
  std::vector<Mat> ddP_res;  // (P'' + P S) by sub-step centered difference, all interior samples

  /// Last grid index strictly before the conjugate time (or the last sample).
  std::size_t usable_end() const;
};

/// Integrates geodesic, frame and P with the submanifold initial blocks.
/// Throws LeftChartRegion when the ray leaves the chart before r_max.
JacobiSystem evolve_jacobi(const MetricChart& chart, const TransportRay& ray);

struct JacobiDiagnostics {
  double speed_drift = 0.0;
  double frame_defect = 0.0;
  double jacobi_residual = 0.0;    // max |P'' + P S| / (1 + |S|)
  double lagrangian_defect = 0.0;  // max |P' P^T - (P' P^T)^T| / (1 + |P' P^T|), before t_conj
  double q_symmetry = 0.0;         // max |Q - Q^T| / (1 + |Q|)
};
JacobiDiagnostics jacobi_diagnostics(const MetricChart& chart, const JacobiSystem& system);

struct PartialTraces {
  std::vector<double> t;
  std::vector<double> tangent;  // sum_i S_ii
  std::vector<double> normal;   // sum_alpha S_alpha alpha
  double cos2_s = 1.0;
  double sin2_s = 0.0;
};
PartialTraces partial_traces_S(const JacobiSystem& system);

struct RiccatiResidual {
  std::vector<double> t;
  std::vector<double> trace_q_tangent;
  std::vector<double> trace_q_normal;
  std::vector<double> tangent;  // normalized residual of the tangential trace inequality
  std::vector<double> normal;
  double max_tangent = 0.0;
  double max_normal = 0.0;
  /// max of tr Q - [n c/(t c + n) + m/t], normalized; meaningful for nonnegative curvature
  double max_logdet_excess = 0.0;
  bool ok = true;
};

/// Residuals (d/dt) sum Q_ii + (1/n)(sum Q_ii)^2 + sum S_ii and the normal
/// analogue, each divided by 1 + (sum Q)^2/n + |sum S|. Throws
/// TraceInequalityViolated when a residual exceeds `tol` and asked to.
RiccatiResidual riccati_trace_residual(const JacobiSystem& system, double tol = 1e-4,
                                       bool throw_on_violation = true);

enum class CurvatureMode { Nonnegative, Asymptotic };

struct DetBoundOptions {
  CurvatureMode mode = CurvatureMode::Nonnegative;
  double b0 = 0.0;
  double b1 = 0.0;
  double r0 = 0.0;
  const ode::RayComparison* comparison = nullptr;  // asymptotic mode, same grid as the system
  double lemma_tolerance = 0.0;                    // slack allowed in the pointwise lemma
  double relative_tolerance = 1e-5;
  bool throw_on_violation = true;
};

struct DetBoundReport {
  std::vector<double> t;
  std::vector<double> det;
  std::vector<double> bound_pairing;  // (1 + t c/n)^n t^m or psi^n psi~^m
  std::vector<double> bound_b;        // [2 b1 + 1/t + c/n]^n t^{n+m} e^{...}, asymptotic only
  std::vector<double> bound_lemma;    // t^m (1 + t f^{1/(n-1)})^n (e^{...})
  double min_slack_pairing = 0.0;     // min (bound - det)/bound
  double min_slack_b = 0.0;
  double min_slack_lemma = 0.0;
  bool lemma_hypothesis = true;  // |D u|^2 + |y|^2 <= 1
  bool passed = true;
};

DetBoundReport det_bound_check(const JacobiSystem& system, double f_at_x,
                               const DetBoundOptions& options);

/// psi = (c/n) psi1 + psi2 from a comparison run.
ode::ODETrajectory combined_psi(const ode::RayComparison& ray, double pairing, int n);

/// Log-derivatives (1/n) sum Q_ii and (1/m) sum Q_aa packaged as trajectories
/// phi, phi~ on the Q samples (values normalized to 1 at the first sample).
std::pair<ode::ODETrajectory, ode::ODETrajectory> riccati_phi(const JacobiSystem& system);

enum class DistanceMode { Surrogate, Exact };

/// lambda(d(o, gamma(t))) along the system's geodesic. Surrogate uses
/// |d(o, x) - a t| with d(o, x) from the chart; Exact evaluates the chart
/// distance on the interpolated geodesic.
std::function<double(double)> lambda_along(const MetricChart& chart, const JacobiSystem& system,
                                           const ode::AsymptoticProfile& profile,
                                           DistanceMode mode);

enum class AvrMode { Theta, ThetaH };

struct AvrOptions {
  double r = 1.0;
  int n_dirs = 500;
  std::uint64_t seed = 1;
  AvrMode mode = AvrMode::Theta;
  const ode::QuinticHermite* h = nullptr;  // ThetaH
  double dt = 0.0;                         // 0: r / 200
  int threads = 0;                         // 0: MSV_THREADS or 1
};

struct AvrEstimate {
  double theta = 0.0;
  double std_error = 0.0;
  int n_dirs = 0;
  int truncated_at_conjugate = 0;
  std::string caveat;
};

/// Geodesic ball volume from radial Jacobi determinants over random unit
/// directions at q, divided by |B^N| r^N or by the h-model normalizer.
AvrEstimate avr_estimate(const MetricChart& chart, const Vec& q, const AvrOptions& options);

}  // namespace msv::transport
