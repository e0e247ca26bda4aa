#include "msv/comparison_ode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "msv/error.hpp"
#include "msv/rk4.hpp"
#include "msv/tensor_geometry.hpp"

namespace msv::ode {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::function<double(double)> lambda_function(const ProfileSpec& spec) {
  switch (spec.kind) {
    case ProfileKind::Zero:
      return [](double) { return 0.0; };
    case ProfileKind::Power:
      return [l0 = spec.lambda0, p = spec.p](double s) { return l0 * std::pow(1.0 + s, -p); };
    case ProfileKind::Exponential:
      return [l0 = spec.lambda0](double s) { return l0 * std::exp(-s); };
    case ProfileKind::Unchecked:
      break;
  }
  throw Error(ErrorCode::RegistryMiss, "profile kind has no closed form");
}

void validate_spec(const ProfileSpec& spec) {
  if (spec.kind == ProfileKind::Zero) return;
  if (!(spec.lambda0 >= 0.0) || !std::isfinite(spec.lambda0)) {
    throw Error(ErrorCode::NegativeLambda, "lambda0 must be finite and >= 0");
  }
  if (spec.kind == ProfileKind::Power && !(spec.p > 2.0)) {
    throw Error(ErrorCode::DivergentIntegral,
                "power decay (1+s)^-p needs p > 2 for finite int s*lambda(s) ds");
  }
}

// Analytic tails int_S^inf lambda and int_S^inf s*lambda.
ProfileIntegrals tail(const ProfileSpec& spec, double S) {
  switch (spec.kind) {
    case ProfileKind::Power: {
      const double p = spec.p;
      const double u = 1.0 + S;
      return {spec.lambda0 * (std::pow(u, 2.0 - p) / (p - 2.0) - std::pow(u, 1.0 - p) / (p - 1.0)),
              spec.lambda0 * std::pow(u, 1.0 - p) / (p - 1.0)};
    }
    case ProfileKind::Exponential:
      return {spec.lambda0 * (S + 1.0) * std::exp(-S), spec.lambda0 * std::exp(-S)};
    default:
      return {};
  }
}

}  // namespace

ProfileIntegrals compute_b0_b1(const ProfileSpec& spec, double s_max, double tol) {
  validate_spec(spec);
  if (spec.kind == ProfileKind::Zero || spec.lambda0 == 0.0) return {};
  const auto lambda = lambda_function(spec);
  using Quad = boost::math::quadrature::gauss_kronrod<double, 31>;
  // Split at s = 1 and s = 50 so the bulk near the origin is resolved before
  // the slowly varying far field.
  const std::array<double, 4> cuts{0.0, 1.0, 50.0, s_max};
  ProfileIntegrals out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    out.b1 += Quad::integrate(lambda, cuts[i], cuts[i + 1], 15, tol * 1e-2);
    out.b0 += Quad::integrate([&](double s) { return s * lambda(s); }, cuts[i], cuts[i + 1], 15,
                              tol * 1e-2);
  }
  const auto t = tail(spec, s_max);
  out.b0 += t.b0;
  out.b1 += t.b1;
  return out;
}

AsymptoticProfile AsymptoticProfile::zero() { return from_spec({ProfileKind::Zero, 0.0, 0.0}); }

AsymptoticProfile AsymptoticProfile::power(double lambda0, double p) {
  return from_spec({ProfileKind::Power, lambda0, p});
}

AsymptoticProfile AsymptoticProfile::exponential(double lambda0) {
  return from_spec({ProfileKind::Exponential, lambda0, 0.0});
}

AsymptoticProfile AsymptoticProfile::from_spec(const ProfileSpec& spec) {
  if (spec.kind == ProfileKind::Unchecked) {
    throw Error(ErrorCode::RegistryMiss, "unchecked profiles have no spec form");
  }
  validate_spec(spec);
  AsymptoticProfile out;
  out.spec_ = spec;
  out.lambda_ = lambda_function(spec);
  switch (spec.kind) {
    case ProfileKind::Zero: out.name_ = "zero"; break;
    case ProfileKind::Power: out.name_ = "power"; break;
    default: out.name_ = "exp"; break;
  }
  const auto b = compute_b0_b1(spec);
  out.b0_ = b.b0;
  out.b1_ = b.b1;
  return out;
}

AsymptoticProfile AsymptoticProfile::unchecked(std::string name,
                                               std::function<double(double)> lambda) {
  AsymptoticProfile out;
  out.spec_.kind = ProfileKind::Unchecked;
  out.name_ = std::move(name);
  out.lambda_ = std::move(lambda);
  out.b0_ = std::numeric_limits<double>::quiet_NaN();
  out.b1_ = std::numeric_limits<double>::quiet_NaN();
  return out;
}

namespace {

ODETrajectory solve_second_order(const std::function<double(double)>& coeff, double y0, double dy0,
                                 double T, double dt) {
  if (!(T > 0.0) || !(dt > 0.0)) {
    throw Error(ErrorCode::UnconvergedODE, "horizon and step must be positive");
  }
  using V = Eigen::Vector2d;
  const auto rhs = [&](double t, const V& y) { return V(y[1], coeff(t) * y[0]); };
  auto [sol, err] = integrate_richardson(rhs, V(y0, dy0), T, step_count(T, dt));
  ODETrajectory out;
  out.grid = std::move(sol.t);
  out.step = sol.dt;
  out.values.reserve(sol.y.size());
  out.derivs.reserve(sol.y.size());
  for (const auto& y : sol.y) {
    out.values.push_back(y[0]);
    out.derivs.push_back(y[1]);
  }
  out.richardson_error = err;
  out.converged = err <= kOdeTolerance;
  if (!out.converged) {
    throw Error(ErrorCode::UnconvergedODE,
                "Richardson estimate " + sci(err) + " exceeds tolerance");
  }
  return out;
}

}  // namespace

ODETrajectory solve_h(const AsymptoticProfile& profile, double T, double dt) {
  return solve_second_order([&](double t) { return profile(t); }, 0.0, 1.0, T, dt);
}

ODETrajectory solve_linear_second_order(const std::function<double(double)>& coeff, double y0,
                                        double dy0, double T, double dt) {
  const std::size_t steps = step_count(T, dt);
  for (std::size_t k = 0; k <= 2 * steps; ++k) {
    const double t = T * static_cast<double>(k) / static_cast<double>(2 * steps);
    if (coeff(t) < 0.0) {
      throw Error(ErrorCode::NegativeLambda, "comparison coefficient is negative at t=" +
                                                 std::to_string(t));
    }
  }
  return solve_second_order(coeff, y0, dy0, T, dt);
}

// ---------------------------------------------------------------------------

QuinticHermite::QuinticHermite(ODETrajectory traj, std::function<double(double)> coeff)
    : traj_(std::move(traj)) {
  second_.resize(traj_.size());
  for (std::size_t k = 0; k < traj_.size(); ++k) {
    second_[k] = coeff(traj_.grid[k]) * traj_.values[k];
  }
}

QuinticHermite::Local QuinticHermite::locate(double t) const {
  if (traj_.size() < 2 || t < 0.0 || t > traj_.end_time() * (1.0 + 1e-12)) {
    throw Error(ErrorCode::GridTooShort,
                "t=" + std::to_string(t) + " outside [0, " + std::to_string(traj_.end_time()) + "]");
  }
  const double h = traj_.step;
  auto k = static_cast<std::size_t>(t / h);
  k = std::min(k, traj_.size() - 2);
  return {k, (t - traj_.grid[k]) / h, h};
}

double QuinticHermite::value(double t) const {
  const auto [k, s, h] = locate(t);
  const double s2 = s * s, s3 = s2 * s, s4 = s3 * s, s5 = s4 * s;
  const double H0 = 1 - 10 * s3 + 15 * s4 - 6 * s5;
  const double H1 = s - 6 * s3 + 8 * s4 - 3 * s5;
  const double H2 = 0.5 * (s2 - 3 * s3 + 3 * s4 - s5);
  const double H3 = 10 * s3 - 15 * s4 + 6 * s5;
  const double H4 = -4 * s3 + 7 * s4 - 3 * s5;
  const double H5 = 0.5 * (s3 - 2 * s4 + s5);
  return traj_.values[k] * H0 + h * traj_.derivs[k] * H1 + h * h * second_[k] * H2 +
         traj_.values[k + 1] * H3 + h * traj_.derivs[k + 1] * H4 + h * h * second_[k + 1] * H5;
}

double QuinticHermite::deriv(double t) const {
  const auto [k, s, h] = locate(t);
  const double s2 = s * s, s3 = s2 * s, s4 = s3 * s;
  const double D0 = -30 * s2 + 60 * s3 - 30 * s4;
  const double D1 = 1 - 18 * s2 + 32 * s3 - 15 * s4;
  const double D2 = 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4);
  const double D3 = 30 * s2 - 60 * s3 + 30 * s4;
  const double D4 = -12 * s2 + 28 * s3 - 15 * s4;
  const double D5 = 0.5 * (3 * s2 - 8 * s3 + 5 * s4);
  return (traj_.values[k] * D0 + traj_.values[k + 1] * D3) / h + traj_.derivs[k] * D1 +
         traj_.derivs[k + 1] * D4 + h * (second_[k] * D2 + second_[k + 1] * D5);
}

double QuinticHermite::second_deriv(double t) const {
  const auto [k, s, h] = locate(t);
  const double s2 = s * s, s3 = s2 * s;
  const double E0 = -60 * s + 180 * s2 - 120 * s3;
  const double E1 = -36 * s + 96 * s2 - 60 * s3;
  const double E2 = 0.5 * (2 - 18 * s + 36 * s2 - 20 * s3);
  const double E3 = 60 * s - 180 * s2 + 120 * s3;
  const double E4 = -24 * s + 84 * s2 - 60 * s3;
  const double E5 = 0.5 * (6 * s - 24 * s2 + 20 * s3);
  return (traj_.values[k] * E0 + traj_.values[k + 1] * E3) / (h * h) +
         (traj_.derivs[k] * E1 + traj_.derivs[k + 1] * E4) / h + second_[k] * E2 +
         second_[k + 1] * E5;
}

double QuinticHermite::integrate_power(double r, int power) const {
  if (r <= 0.0) return 0.0;
  locate(r);
  static constexpr std::array<double, 5> kNodes{0.0, -0.5384693101056831, 0.5384693101056831,
                                                -0.9061798459386640, 0.9061798459386640};
  static constexpr std::array<double, 5> kWeights{0.5688888888888889, 0.4786286704993665,
                                                  0.4786286704993665, 0.2369268850561891,
                                                  0.2369268850561891};
  const double h = traj_.step;
  double total = 0.0;
  double a = 0.0;
  while (a < r) {
    const double b = std::min(a + h, r);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double part = 0.0;
    for (std::size_t q = 0; q < kNodes.size(); ++q) {
      part += kWeights[q] * std::pow(value(mid + half * kNodes[q]), power);
    }
    total += half * part;
    if (b == r) break;
    a = b;
  }
  return total;
}

double theta_h_normalizer(const QuinticHermite& h, int dim, double r) {
  if (dim < 1) throw Error(ErrorCode::BadDimension, "dimension must be >= 1");
  if (r > h.end_time() * (1.0 + 1e-12)) {
    throw Error(ErrorCode::GridTooShort, "radius beyond the h grid");
  }
  if (r <= 0.0) return 0.0;
  return dim * geom::unit_ball_volume(dim) * h.integrate_power(r, dim - 1);
}

// ---------------------------------------------------------------------------

double aligned_step(double dt, double kink) {
  if (!(kink > 0.0)) return dt;
  return kink / std::ceil(kink / dt - 1e-9);
}

RayComparison integrate_ray_comparison(const std::function<double(double)>& lambda_of_t, int n,
                                       int m, double speed_a, double cos2_s, double T, double dt,
                                       double kink) {
  const double a2 = speed_a * speed_a;
  const double ct = a2 * (n - cos2_s) / n;
  const double cn = a2 * (m - (1.0 - cos2_s)) / m;
  using V = Eigen::Matrix<double, 11, 1>;
  const auto rhs = [&](double t, const V& y) {
    const double lam = lambda_of_t(t);
    V d;
    d << y[1], ct * lam * y[0],  // psi1
        y[3], ct * lam * y[2],   // psi2
        y[5], cn * lam * y[4],   // psi tilde
        speed_a * lam, a2 * t * lam, ct * lam, t * ct * lam, t * cn * lam;
    return d;
  };
  V y0 = V::Zero();
  y0[1] = 1.0;
  y0[2] = 1.0;
  y0[5] = 1.0;
  RayComparison out;
  if (T <= 0.0) return out;
  std::size_t steps = step_count(T, dt);
  if (kink > 0.0 && kink < T) {
    const double h = aligned_step(dt, kink);
    steps = step_count(T, h);
    T = static_cast<double>(steps) * h;
  }
  auto [sol, err] = integrate_richardson(rhs, y0, T, steps);
  const auto fill = [&](ODETrajectory& tr, int idx) {
    tr.grid = sol.t;
    tr.step = sol.dt;
    tr.richardson_error = err;
    tr.converged = err <= kOdeTolerance;
    for (const auto& y : sol.y) {
      tr.values.push_back(y[idx]);
      tr.derivs.push_back(y[idx + 1]);
    }
  };
  fill(out.psi1, 0);
  fill(out.psi2, 2);
  fill(out.psi_tilde, 4);
  for (std::size_t k = 0; k < sol.y.size(); ++k) {
    out.lambda_along.push_back(lambda_of_t(sol.t[k]));
    out.int_lambda.push_back(sol.y[k][6]);
    out.int_tau_lambda.push_back(sol.y[k][7]);
    out.int_coeff_t.push_back(sol.y[k][8]);
    out.int_tau_coeff_t.push_back(sol.y[k][9]);
    out.int_tau_coeff_n.push_back(sol.y[k][10]);
  }
  if (!out.psi1.converged) {
    throw Error(ErrorCode::UnconvergedODE, "comparison system Richardson estimate " +
                                               sci(err));
  }
  return out;
}

EnvelopeReport envelope_check(const RayComparison& ray, double b0, double b1, double r0,
                              double tolerance, bool throw_on_violation) {
  EnvelopeReport rep;
  const std::size_t K = ray.psi1.size();
  double worst = std::numeric_limits<double>::infinity();
  const auto push = [&](std::vector<double>& dst, double bound, double value) {
    const double slack = bound - value;
    dst.push_back(slack);
    worst = std::min(worst, slack / std::max(1.0, std::abs(bound)));
  };
  const double dt = ray.psi1.step;
  for (std::size_t k = 0; k < K; ++k) {
    const double t = ray.psi1.grid[k];
    push(rep.slack_psi1, t * std::exp(ray.int_tau_coeff_t[k]), ray.psi1.values[k]);
    push(rep.slack_psi_tilde, t * std::exp(ray.int_tau_coeff_n[k]), ray.psi_tilde.values[k]);
    if (t >= dt * (1.0 - 1e-12)) {
      push(rep.slack_ratio, ray.int_coeff_t[k] + 1.0 / t,
           ray.psi2.values[k] / ray.psi1.values[k]);
    } else {
      // removable singularity: psi2/psi1 - 1/t -> 0 as t -> 0
      rep.slack_ratio.push_back(0.0);
    }
    push(rep.slack_int_lambda, 2.0 * b1, ray.int_lambda[k]);
    push(rep.slack_int_tau, 2.0 * r0 * b1 + b0, ray.int_tau_lambda[k]);
  }
  rep.min_slack = K ? worst : 0.0;
  rep.violated = rep.min_slack < -tolerance;
  if (rep.violated && throw_on_violation) {
    throw Error(ErrorCode::EnvelopeViolated,
                "normalized envelope slack " + sci(rep.min_slack));
  }
  return rep;
}

std::vector<double> log_derivative_comparison(const ODETrajectory& phi, const ODETrajectory& psi) {
  if (phi.size() == 0) return {};
  if (std::abs(phi.step - psi.step) > 1e-12 * std::max(1.0, psi.step) ||
      phi.end_time() > psi.end_time() * (1.0 + 1e-12)) {
    throw Error(ErrorCode::GridTooShort, "psi must share phi's step and cover its grid");
  }
  std::vector<double> slack;
  slack.reserve(phi.size());
  for (std::size_t k = 0; k < phi.size(); ++k) {
    const auto j = static_cast<std::size_t>(std::llround(phi.grid[k] / psi.step));
    const double t = phi.grid[k];
    if (t <= 0.0) {
      slack.push_back(0.0);
      continue;
    }
    if (!(phi.values[k] > 0.0) || !(psi.values[j] > 0.0)) {
      throw Error(ErrorCode::NonPositiveTrajectory, "trajectory not positive at t=" +
                                                        std::to_string(t));
    }
    slack.push_back(psi.derivs[j] / psi.values[j] - phi.derivs[k] / phi.values[k]);
  }
  return slack;
}

}  // namespace msv::ode
