#pragma once

// Classical fixed-step fourth-order Runge-Kutta with a Richardson (step-halving)
// global error estimate. State may be a scalar or any Eigen vector type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace msv::ode {

template <class State, class Rhs>
State rk4_step(const Rhs& rhs, double t, const State& y, double dt) {
  const State k1 = rhs(t, y);
  const State k2 = rhs(t + 0.5 * dt, State(y + (0.5 * dt) * k1));
  const State k3 = rhs(t + 0.5 * dt, State(y + (0.5 * dt) * k2));
  const State k4 = rhs(t + dt, State(y + dt * k3));
  return State(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

/// Number of uniform steps used to cover [0, T] with nominal step dt.
inline std::size_t step_count(double T, double dt) {
  if (T <= 0.0) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(T / dt - 1e-9)));
}

template <class State>
struct FixedStepSolution {
  std::vector<double> t;
  std::vector<State> y;
  double dt = 0.0;
};

template <class State, class Rhs>
FixedStepSolution<State> integrate_fixed(const Rhs& rhs, const State& y0, double T,
                                         std::size_t steps) {
  FixedStepSolution<State> out;
  out.dt = steps ? T / static_cast<double>(steps) : 0.0;
  out.t.reserve(steps + 1);
  out.y.reserve(steps + 1);
  out.t.push_back(0.0);
  out.y.push_back(y0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * out.dt;
    out.y.push_back(rk4_step(rhs, t, out.y.back(), out.dt));
    out.t.push_back(static_cast<double>(k + 1) * out.dt);
  }
  return out;
}

inline double max_abs(double v) { return std::abs(v); }
template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

/// Integrates with `steps` and `2*steps` and returns the coarse solution plus
/// the estimated global error of that coarse solution, relative to
/// max(1, sup|y|).
template <class State, class Rhs>
std::pair<FixedStepSolution<State>, double> integrate_richardson(const Rhs& rhs, const State& y0,
                                                                 double T, std::size_t steps) {
  auto coarse = integrate_fixed(rhs, y0, T, steps);
  auto fine = integrate_fixed(rhs, y0, T, 2 * steps);
  double diff = 0.0;
  double scale = 1.0;
  for (std::size_t k = 0; k < coarse.y.size(); ++k) {
    diff = std::max(diff, max_abs(State(coarse.y[k] - fine.y[2 * k])));
    scale = std::max(scale, max_abs(coarse.y[k]));
  }
  return {std::move(coarse), diff * (16.0 / 15.0) / scale};
}

}  // namespace msv::ode
