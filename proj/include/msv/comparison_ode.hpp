#pragma once

// Decay profiles lambda(s) and the scalar comparison ODEs built on them:
// the model radial Jacobian h, the psi-family of linear second-order
// comparison solutions, and the envelope estimates that bound them.

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace msv::ode {

/// Relative tolerance for every scalar ODE solve.
inline constexpr double kOdeTolerance = 1e-8;

enum class ProfileKind { Zero, Power, Exponential, Unchecked };

/// Closed-form profile description as it appears in scenario configs.
struct ProfileSpec {
  ProfileKind kind = ProfileKind::Zero;
  double lambda0 = 0.0;
  double p = 3.0;  // power decay exponent, Power only
};

/// A nonnegative nonincreasing decay function with finite integrals
///   b0 = int_0^inf s*lambda(s) ds,   b1 = int_0^inf lambda(s) ds.
/// Certified profiles come from the closed-form registry; `unchecked`
/// profiles exist for integrator self-tests and carry NaN integrals.
class AsymptoticProfile {
 public:
  static AsymptoticProfile zero();
  static AsymptoticProfile power(double lambda0, double p);
  static AsymptoticProfile exponential(double lambda0);
  static AsymptoticProfile from_spec(const ProfileSpec& spec);
  static AsymptoticProfile unchecked(std::string name, std::function<double(double)> lambda);

  double operator()(double s) const { return lambda_(s); }
  double b0() const { return b0_; }
  double b1() const { return b1_; }
  bool certified() const { return spec_.kind != ProfileKind::Unchecked; }
  bool is_zero() const { return spec_.kind == ProfileKind::Zero; }
  const ProfileSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }

 private:
  AsymptoticProfile() = default;

  ProfileSpec spec_;
  std::string name_;
  std::function<double(double)> lambda_;
  double b0_ = 0.0;
  double b1_ = 0.0;
};

struct ProfileIntegrals {
  double b0 = 0.0;
  double b1 = 0.0;
};

/// Adaptive Gauss-Kronrod quadrature on [0, S_max] plus the analytic tail.
/// Throws DivergentIntegral for power decay with p <= 2 and NegativeLambda
/// for lambda0 < 0.
ProfileIntegrals compute_b0_b1(const ProfileSpec& spec, double s_max = 1e3, double tol = 1e-8);

/// Uniform-grid solution of a scalar second-order ODE written as y'' = F.
struct ODETrajectory {
  std::vector<double> grid;
  std::vector<double> values;
  std::vector<double> derivs;
  double step = 0.0;
  double richardson_error = 0.0;
  bool converged = true;

  std::size_t size() const { return grid.size(); }
  double end_time() const { return grid.empty() ? 0.0 : grid.back(); }
};

/// h'' = lambda(t) h, h(0) = 0, h'(0) = 1.
ODETrajectory solve_h(const AsymptoticProfile& profile, double T, double dt);

/// y'' = coeff(t) y with y(0), y'(0) given.
ODETrajectory solve_linear_second_order(const std::function<double(double)>& coeff, double y0,
                                        double dy0, double T, double dt);

/// C^2 quintic Hermite interpolant of a trajectory of y'' = c(t) y, using
/// y'' = c*y at the nodes. Used for continuous evaluation of h.
class QuinticHermite {
 public:
  QuinticHermite(ODETrajectory traj, std::function<double(double)> coeff);

  double value(double t) const;
  double deriv(double t) const;
  double second_deriv(double t) const;
  double end_time() const { return traj_.end_time(); }
  const ODETrajectory& trajectory() const { return traj_; }

  /// int_0^r y(t)^power dt, 5-point Gauss-Legendre on every grid interval.
  double integrate_power(double r, int power) const;

 private:
  struct Local {
    std::size_t k;
    double s;
    double h;
  };
  Local locate(double t) const;

  ODETrajectory traj_;
  std::vector<double> second_;
};

/// N |B^N| int_0^r h^{N-1} dt. Throws GridTooShort when r exceeds the grid.
double theta_h_normalizer(const QuinticHermite& h, int dim, double r);

/// Comparison quantities integrated along one transport ray. All arrays
/// share the ray grid t_k = k*dt.
struct RayComparison {
  ODETrajectory psi1;        // psi1'' = c_t psi1, (0, 1)
  ODETrajectory psi2;        // psi2'' = c_t psi2, (1, 0)
  ODETrajectory psi_tilde;   // psi~'' = c_n psi~, (0, 1)
  std::vector<double> lambda_along;      // lambda(d(o, gamma(t)))
  std::vector<double> int_lambda;        // int_0^t lambda(d) * a dtau
  std::vector<double> int_tau_lambda;    // int_0^t (a tau) lambda(d) * a dtau
  std::vector<double> int_coeff_t;       // int_0^t c_t
  std::vector<double> int_tau_coeff_t;   // int_0^t tau c_t
  std::vector<double> int_tau_coeff_n;   // int_0^t tau c_n
};

/// Largest step <= dt that puts `kink` on the grid (dt itself when kink <= 0).
double aligned_step(double dt, double kink);

/// Coefficients c_t = a^2 (n - cos^2 s)/n lambda(d), c_n = a^2 (m - sin^2 s)/m lambda(d).
/// `lambda_of_t` must return lambda(d(o, gamma(t))) for any t on the grid.
/// With kink > 0 the step is aligned_step(dt, kink) and the grid ends at the
/// first node >= T; otherwise the grid is uniform on exactly [0, T].
RayComparison integrate_ray_comparison(const std::function<double(double)>& lambda_of_t, int n,
                                       int m, double speed_a, double cos2_s, double T, double dt,
                                       double kink = -1.0);

struct EnvelopeReport {
  std::vector<double> slack_psi1;         // t e^{int tau c_t} - psi1
  std::vector<double> slack_psi_tilde;    // t e^{int tau c_n} - psi~
  std::vector<double> slack_ratio;        // int c_t + 1/t - psi2/psi1, t >= dt
  std::vector<double> slack_int_lambda;   // 2 b1 - int lambda
  std::vector<double> slack_int_tau;      // 2 r0 b1 + b0 - int tau lambda
  double min_slack = 0.0;
  bool violated = false;
};

/// Per-sample slacks of the psi envelopes. Throws EnvelopeViolated when any
/// slack drops below -tolerance*max(1, |bound|) and `throw_on_violation`.
EnvelopeReport envelope_check(const RayComparison& ray, double b0, double b1, double r0,
                              double tolerance = kOdeTolerance, bool throw_on_violation = true);

/// psi'/psi - phi'/phi on phi's grid; psi must share the step and cover it.
std::vector<double> log_derivative_comparison(const ODETrajectory& phi, const ODETrajectory& psi);

}  // namespace msv::ode
