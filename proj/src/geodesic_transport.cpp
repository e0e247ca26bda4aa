#include "msv/geodesic_transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>

#include "msv/error.hpp"
#include "msv/parallel.hpp"
#include "msv/rk4.hpp"

namespace msv::transport {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// State layout: x | v | E (N*N, optional) | P (N*N) | P' (N*N) (optional pair) | aux (optional)
struct Layout {
  int N = 0;
  bool frame = false;
  bool jacobi = false;
  bool aux = false;

  int x() const { return 0; }
  int v() const { return N; }
  int E() const { return 2 * N; }
  int P() const { return E() + (frame ? N * N : 0); }
  int dP() const { return P() + N * N; }
  int a() const { return P() + (jacobi ? 2 * N * N : 0); }
  int size() const { return a() + (aux ? 1 : 0); }
};

using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

Vec contract(const std::vector<double>& gamma, int N, const Vec& u, const Vec& w) {
  Vec out = Vec::Zero(N);
  for (int k = 0; k < N; ++k) {
    const double* G = &gamma[static_cast<std::size_t>(k) * N * N];
    double s = 0.0;
    for (int i = 0; i < N; ++i) {
      if (u[i] == 0.0) continue;
      for (int j = 0; j < N; ++j) s += G[i * N + j] * u[i] * w[j];
    }
    out[k] = s;
  }
  return out;
}

class RayRhs {
 public:
  RayRhs(const MetricChart& chart, Layout layout, int aux_block_from = 1)
      : chart_(chart), L_(layout), aux_from_(aux_block_from) {}

  Vec operator()(double, const Vec& y) const {
    const int N = L_.N;
    const Vec x = y.segment(L_.x(), N);
    const Vec v = y.segment(L_.v(), N);
    Vec d = Vec::Zero(y.size());
    d.segment(L_.x(), N) = v;
    std::optional<geom::CurvaturePacket> packet;
    std::vector<double> gamma_only;
    if (L_.jacobi) {
      packet.emplace(geom::curvature_packet(chart_, x));
    } else {
      gamma_only = geom::christoffel_symbols(chart_, x);
    }
    const auto gamma = [&](const Vec& a, const Vec& b) {
      return packet ? packet->christoffel_contract(a, b) : contract(gamma_only, N, a, b);
    };
    d.segment(L_.v(), N) = -gamma(v, v);
    if (L_.frame) {
      ConstMatMap E(y.data() + L_.E(), N, N);
      MatMap dE(d.data() + L_.E(), N, N);
      for (int A = 0; A < N; ++A) dE.col(A) = -gamma(v, E.col(A));
      if (L_.jacobi) {
        ConstMatMap P(y.data() + L_.P(), N, N);
        ConstMatMap dP(y.data() + L_.dP(), N, N);
        const Mat S = E.transpose() * packet->jacobi_operator(v) * E;
        MatMap(d.data() + L_.P(), N, N) = dP;
        MatMap(d.data() + L_.dP(), N, N) = -P * S;
        if (L_.aux) {
          const int k = N - aux_from_;
          d[L_.a()] = P.bottomRightCorner(k, k).determinant();
        }
      }
    }
    return d;
  }

  const Layout& layout() const { return L_; }

 private:
  const MetricChart& chart_;
  Layout L_;
  int aux_from_;
};

bool is_region_error(const Error& e) {
  return e.code() == ErrorCode::PointOutsideRegion || e.code() == ErrorCode::PointTooNearBoundary;
}

bool safe_point(const MetricChart& chart, const Vec& x) {
  const double pad = chart.mode() == geom::DerivativeMode::FiniteDifference
                         ? 3.0 * MetricChart::fd_step(x)
                         : 0.0;
  return chart.region.contains(x) && chart.region.margin(x) > pad;
}

// One RK4 step; nullopt when a stage or the end point leaves the chart.
std::optional<Vec> try_step(const MetricChart& chart, const RayRhs& rhs, double t, const Vec& y,
                            double h) {
  try {
    Vec out = ode::rk4_step(rhs, t, y, h);
    if (!safe_point(chart, out.segment(rhs.layout().x(), rhs.layout().N))) return std::nullopt;
    return out;
  } catch (const Error& e) {
    if (is_region_error(e)) return std::nullopt;
    throw;
  }
}

struct Integration {
  std::vector<double> t;
  std::vector<Vec> y;
  double step = 0.0;
  double error = 0.0;
  bool left = false;
  double exit_time = 0.0;
};

// Fixed-step RK4 reporting the two-half-step solution on the coarse grid and
// summing local Richardson differences into a relative error estimate.
Integration integrate_ray(const MetricChart& chart, const RayRhs& rhs, const Vec& y0, double T,
                          std::size_t steps) {
  Integration out;
  out.step = steps ? T / static_cast<double>(steps) : 0.0;
  out.t.push_back(0.0);
  out.y.push_back(y0);
  const double h = out.step;
  double err = 0.0, scale = 1.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * h;
    const Vec& y = out.y.back();
    auto full = try_step(chart, rhs, t, y, h);
    std::optional<Vec> half;
    if (full) {
      half = try_step(chart, rhs, t, y, 0.5 * h);
      if (half) half = try_step(chart, rhs, t + 0.5 * h, *half, 0.5 * h);
    }
    if (!full || !half) {
      double lo = 0.0, hi = h;
      for (int it = 0; it < 60 && hi - lo > 1e-12 * (1.0 + t); ++it) {
        const double mid = 0.5 * (lo + hi);
        (try_step(chart, rhs, t, y, mid) ? lo : hi) = mid;
      }
      out.left = true;
      out.exit_time = t + lo;
      break;
    }
    err += ode::max_abs(Vec(*full - *half)) / 15.0;
    scale = std::max(scale, ode::max_abs(*half));
    out.y.push_back(std::move(*half));
    out.t.push_back(static_cast<double>(k + 1) * h);
  }
  out.error = err / scale;
  return out;
}

Mat complete_frame(const Mat& g, const Vec& first) {
  const int N = static_cast<int>(g.rows());
  std::vector<Vec> cand{first};
  for (int i = 0; i < N; ++i) cand.push_back(Vec::Unit(N, i));
  std::vector<Vec> basis;
  for (const auto& c : cand) {
    Vec w = c;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) w -= b.dot(g * w) * b;
    const double nrm = std::sqrt(std::max(0.0, w.dot(g * w)));
    if (nrm > 1e-8) basis.push_back(w / nrm);
    if (static_cast<int>(basis.size()) == N) break;
  }
  Mat F(N, N);
  for (int i = 0; i < N; ++i) F.col(i) = basis[i];
  return F;
}

// Orthogonal k x k matrix whose first column is w/|w| (identity for w = 0).
Mat rotation_to(const Vec& w) {
  const int k = static_cast<int>(w.size());
  if (k == 0) return Mat(0, 0);
  if (w.norm() < 1e-300) return Mat::Identity(k, k);
  return complete_frame(Mat::Identity(k, k), w / w.norm());
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------

GeodesicTrajectory exp_map(const MetricChart& chart, const Vec& x, const Vec& v, double T,
                           double dt, bool throw_on_exit) {
  if (!chart.region.contains(x)) {
    throw Error(ErrorCode::PointOutsideRegion, chart.label + ": base point outside chart region");
  }
  if (!v.allFinite() || v.size() != chart.dim) {
    throw Error(ErrorCode::BadDimension, "initial velocity must be finite with chart dimension");
  }
  Layout L{chart.dim, false, false, false};
  RayRhs rhs(chart, L);
  Vec y0(L.size());
  y0 << x, v;
  const auto run = integrate_ray(chart, rhs, y0, T, ode::step_count(T, dt));
  GeodesicTrajectory out;
  out.step = run.step;
  out.error_estimate = run.error;
  out.left_region = run.left;
  out.exit_time = run.exit_time;
  out.t = run.t;
  for (const auto& y : run.y) {
    out.x.push_back(y.segment(L.x(), L.N));
    out.v.push_back(y.segment(L.v(), L.N));
  }
  if (run.error > ode::kOdeTolerance) {
    throw Error(ErrorCode::UnconvergedODE, "geodesic Richardson estimate " + sci(run.error));
  }
  if (run.left && throw_on_exit) {
    throw Error(ErrorCode::LeftChartRegion, "geodesic left the chart at t=" + sci(run.exit_time));
  }
  return out;
}

GeodesicTrajectory parallel_frame(const MetricChart& chart, const GeodesicTrajectory& geodesic,
                                  const Mat& frame0) {
  if (geodesic.size() == 0) return geodesic;
  const int N = chart.dim;
  const Mat g = geom::metric_at(chart, geodesic.x.front());
  if ((frame0.transpose() * g * frame0 - Mat::Identity(N, N)).cwiseAbs().maxCoeff() > 1e-8) {
    throw Error(ErrorCode::NonOrthonormalInput, "initial frame not orthonormal");
  }
  Layout L{N, true, false, false};
  RayRhs rhs(chart, L);
  Vec y0(L.size());
  y0 << geodesic.x.front(), geodesic.v.front(), frame0.reshaped();
  const double T = geodesic.t.back();
  const auto steps = static_cast<std::size_t>(geodesic.size() - 1);
  const auto run = integrate_ray(chart, rhs, y0, T, steps);
  GeodesicTrajectory out;
  out.step = run.step;
  out.error_estimate = run.error;
  out.left_region = run.left || geodesic.left_region;
  out.exit_time = run.left ? run.exit_time : geodesic.exit_time;
  out.t = run.t;
  for (const auto& y : run.y) {
    out.x.push_back(y.segment(L.x(), N));
    out.v.push_back(y.segment(L.v(), N));
    out.frame.push_back(ConstMatMap(y.data() + L.E(), N, N));
  }
  if (run.error > ode::kOdeTolerance) {
    throw Error(ErrorCode::UnconvergedODE, "frame transport Richardson estimate " + sci(run.error));
  }
  return out;
}

double speed_drift(const MetricChart& chart, const GeodesicTrajectory& traj) {
  if (traj.size() == 0) return 0.0;
  const auto speed = [&](std::size_t k) {
    return std::sqrt(traj.v[k].dot(geom::metric_at(chart, traj.x[k]) * traj.v[k]));
  };
  const double s0 = speed(0);
  double worst = 0.0;
  for (std::size_t k = 1; k < traj.size(); ++k) worst = std::max(worst, std::abs(speed(k) - s0));
  return worst / std::max(1.0, s0);
}

double frame_defect(const MetricChart& chart, const GeodesicTrajectory& traj) {
  double worst = 0.0;
  for (std::size_t k = 0; k < traj.frame.size(); ++k) {
    const Mat& E = traj.frame[k];
    const Mat G = E.transpose() * geom::metric_at(chart, traj.x[k]) * E;
    worst = std::max(worst, (G - Mat::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---------------------------------------------------------------------------

Vec TransportRay::initial_velocity() const {
  return frame0.leftCols(n) * du + frame0.rightCols(m) * ybar;
}

Vec TransportRay::mean_curvature() const {
  Vec H(m);
  for (int b = 0; b < m; ++b) H[b] = second_fundamental[b].trace();
  return H;
}

double TransportRay::pairing() const { return laplacian - mean_curvature().dot(ybar); }

TransportRay make_transport_ray(const PointData& d, double r_max, double dt, double kink) {
  if (d.n < 1 || d.m < 0 || d.x.size() != d.n + d.m || d.frame.rows() != d.n + d.m ||
      d.frame.cols() != d.n + d.m || d.du.size() != d.n || d.ybar.size() != d.m ||
      d.hessian.rows() != d.n || static_cast<int>(d.second_fundamental.size()) != d.m) {
    throw Error(ErrorCode::BadDimension, "point data inconsistent with n + m");
  }
  if (!(dt > 0.0) || r_max < 0.0) throw Error(ErrorCode::BadDimension, "need r_max >= 0, dt > 0");
  TransportRay ray;
  ray.n = d.n;
  ray.m = d.m;
  ray.base = d.x;
  const Mat Rt = rotation_to(d.du);
  const Mat Rn = rotation_to(d.ybar);
  ray.frame0.resize(d.n + d.m, d.n + d.m);
  ray.frame0.leftCols(d.n) = d.frame.leftCols(d.n) * Rt;
  if (d.m > 0) ray.frame0.rightCols(d.m) = d.frame.rightCols(d.m) * Rn;
  ray.du = Rt.transpose() * d.du;
  ray.ybar = d.m > 0 ? Vec(Rn.transpose() * d.ybar) : Vec(0);
  ray.hessian = Rt.transpose() * d.hessian * Rt;
  ray.hessian = 0.5 * (ray.hessian + ray.hessian.transpose()).eval();
  for (int bp = 0; bp < d.m; ++bp) {
    Mat II = Mat::Zero(d.n, d.n);
    for (int b = 0; b < d.m; ++b) II += Rn(b, bp) * d.second_fundamental[b];
    ray.second_fundamental.push_back(Rt.transpose() * II * Rt);
  }
  ray.laplacian = d.laplacian;
  ray.speed_a = std::hypot(d.du.norm(), d.ybar.norm());
  if (ray.speed_a > 0.0) {
    const double c = std::clamp(d.du.norm() / ray.speed_a, 0.0, 1.0);
    ray.angle_s = std::acos(c);
    ray.cos2_s = c * c;
  }
  ray.dt = dt;
  ray.r_max = r_max;
  if (kink > 0.0 && kink < r_max) {
    ray.dt = ode::aligned_step(dt, kink);
    ray.r_max = static_cast<double>(ode::step_count(r_max, ray.dt)) * ray.dt;
  }
  return ray;
}

std::size_t JacobiSystem::usable_end() const {
  if (t.empty()) return 0;
  if (!conjugate_time) return t.size() - 1;
  std::size_t k = 0;
  while (k + 1 < t.size() && t[k + 1] < *conjugate_time) ++k;
  return k;
}

JacobiSystem evolve_jacobi(const MetricChart& chart, const TransportRay& ray) {
  const int N = chart.dim, n = ray.n, m = ray.m;
  if (n + m != N) throw Error(ErrorCode::BadDimension, "n + m must equal the chart dimension");
  const Mat g0 = geom::metric_at(chart, ray.base);
  if ((ray.frame0.transpose() * g0 * ray.frame0 - Mat::Identity(N, N)).cwiseAbs().maxCoeff() >
      1e-8) {
    throw Error(ErrorCode::NonOrthonormalInput, "submanifold frame not orthonormal");
  }
  Mat P0 = Mat::Zero(N, N), dP0 = Mat::Zero(N, N);
  P0.topLeftCorner(n, n).setIdentity();
  Mat top = ray.hessian;
  for (int b = 0; b < m; ++b) top -= ray.ybar[b] * ray.second_fundamental[b];
  dP0.topLeftCorner(n, n) = top;
  for (int b = 0; b < m; ++b) dP0.block(0, n + b, n, 1) = ray.second_fundamental[b] * ray.du;
  if (m > 0) dP0.bottomRightCorner(m, m).setIdentity();

  Layout L{N, true, true, false};
  RayRhs rhs(chart, L);
  Vec y0(L.size());
  y0 << ray.base, ray.initial_velocity(), ray.frame0.reshaped(), P0.reshaped(), dP0.reshaped();
  const std::size_t steps = ode::step_count(ray.r_max, ray.dt);
  const auto run = integrate_ray(chart, rhs, y0, ray.r_max, steps);
  if (run.left) {
    throw Error(ErrorCode::LeftChartRegion, "transport ray left the chart at t=" +
                                                sci(run.exit_time));
  }
  if (run.error > 1e-6) {
    throw Error(ErrorCode::UnconvergedODE, "Jacobi system Richardson estimate " + sci(run.error));
  }

  JacobiSystem sys;
  sys.ray = ray;
  sys.step = run.step;
  sys.t = run.t;
  sys.error_estimate = run.error;
  for (const auto& y : run.y) {
    sys.x.push_back(y.segment(L.x(), N));
    sys.v.push_back(y.segment(L.v(), N));
    const Mat E = ConstMatMap(y.data() + L.E(), N, N);
    const Mat P = ConstMatMap(y.data() + L.P(), N, N);
    sys.frame.push_back(E);
    sys.P.push_back(P);
    sys.dP.push_back(ConstMatMap(y.data() + L.dP(), N, N));
    const auto packet = geom::curvature_packet(chart, sys.x.back());
    sys.S.push_back(E.transpose() * packet.jacobi_operator(sys.v.back()) * E);
    sys.det.push_back(P.determinant());
  }

  // first sign change of det P, refined by bisection on single RK4 sub-steps
  for (std::size_t k = 1; k < sys.t.size(); ++k) {
    if (sys.det[k] > 0.0) continue;
    double lo = 0.0, hi = sys.step;
    const Vec& y = run.y[k - 1];
    if (sys.det[k - 1] > 0.0) {
      while (hi - lo > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        const Vec ym = ode::rk4_step(rhs, sys.t[k - 1], y, mid);
        (ConstMatMap(ym.data() + L.P(), N, N).determinant() > 0.0 ? lo : hi) = mid;
      }
    } else {
      hi = 0.0;  // degenerate from the start
    }
    sys.conjugate_time = sys.t[k - 1] + 0.5 * (lo + hi);
    break;
  }

  // sub-step centered differences for P'' and Q'
  const double eps = 1e-4;
  const double tq_lo = 10.0 * sys.step;
  const double tq_hi = sys.conjugate_time ? *sys.conjugate_time - sys.step
                                          : std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < sys.t.size(); ++k) {
    const double t = sys.t[k];
    const bool interior = k > 0 && k + 1 < sys.t.size();
    const bool want_q = t > tq_lo && t < tq_hi && k + 1 < sys.t.size();
    if (!interior && !want_q) continue;
    const Vec yp = ode::rk4_step(rhs, t, run.y[k], eps);
    const Vec ym = ode::rk4_step(rhs, t, run.y[k], -eps);
    const Mat dPp = ConstMatMap(yp.data() + L.dP(), N, N);
    const Mat dPm = ConstMatMap(ym.data() + L.dP(), N, N);
    if (interior) sys.ddP_res.push_back((dPp - dPm) / (2.0 * eps) + sys.P[k] * sys.S[k]);
    if (want_q) {
      const auto solve = [&](const Mat& P, const Mat& dP) {
        Eigen::FullPivLU<Mat> lu(P);
        if (!lu.isInvertible() || lu.rcond() < 1e-13) {
          throw Error(ErrorCode::SingularPInversion, "P singular at t=" + sci(t));
        }
        return Mat(lu.solve(dP));
      };
      const Mat Qp = solve(ConstMatMap(yp.data() + L.P(), N, N), dPp);
      const Mat Qm = solve(ConstMatMap(ym.data() + L.P(), N, N), dPm);
      sys.q_index.push_back(k);
      sys.Q.push_back(solve(sys.P[k], sys.dP[k]));
      sys.dQ.push_back((Qp - Qm) / (2.0 * eps));
    }
  }
  return sys;
}

JacobiDiagnostics jacobi_diagnostics(const MetricChart& chart, const JacobiSystem& sys) {
  JacobiDiagnostics d;
  GeodesicTrajectory g;
  g.t = sys.t;
  g.x = sys.x;
  g.v = sys.v;
  g.frame = sys.frame;
  d.speed_drift = speed_drift(chart, g);
  d.frame_defect = frame_defect(chart, g);
  for (std::size_t i = 0; i < sys.ddP_res.size(); ++i) {
    const std::size_t k = i + 1;
    d.jacobi_residual = std::max(d.jacobi_residual, sys.ddP_res[i].cwiseAbs().maxCoeff() /
                                                        (1.0 + sys.S[k].cwiseAbs().maxCoeff()));
  }
  const std::size_t end = sys.usable_end();
  for (std::size_t k = 0; k <= end && k < sys.t.size(); ++k) {
    const Mat W = sys.dP[k] * sys.P[k].transpose();
    d.lagrangian_defect = std::max(d.lagrangian_defect, (W - W.transpose()).cwiseAbs().maxCoeff() /
                                                            (1.0 + W.cwiseAbs().maxCoeff()));
  }
  for (const auto& Q : sys.Q) {
    d.q_symmetry = std::max(d.q_symmetry, (Q - Q.transpose()).cwiseAbs().maxCoeff() /
                                              (1.0 + Q.cwiseAbs().maxCoeff()));
  }
  return d;
}

PartialTraces partial_traces_S(const JacobiSystem& sys) {
  PartialTraces out;
  const int n = sys.ray.n, m = sys.ray.m;
  out.cos2_s = sys.ray.cos2_s;
  out.sin2_s = 1.0 - sys.ray.cos2_s;
  for (std::size_t k = 0; k < sys.t.size(); ++k) {
    out.t.push_back(sys.t[k]);
    out.tangent.push_back(sys.S[k].topLeftCorner(n, n).trace());
    out.normal.push_back(m > 0 ? sys.S[k].bottomRightCorner(m, m).trace() : 0.0);
  }
  return out;
}

RiccatiResidual riccati_trace_residual(const JacobiSystem& sys, double tol,
                                       bool throw_on_violation) {
  RiccatiResidual out;
  const int n = sys.ray.n, m = sys.ray.m;
  const double c = sys.ray.pairing();
  out.max_tangent = -std::numeric_limits<double>::infinity();
  out.max_normal = -std::numeric_limits<double>::infinity();
  out.max_logdet_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sys.Q.size(); ++i) {
    const std::size_t k = sys.q_index[i];
    const double t = sys.t[k];
    const Mat& Q = sys.Q[i];
    const Mat& dQ = sys.dQ[i];
    const Mat& S = sys.S[k];
    const double qt = Q.topLeftCorner(n, n).trace();
    const double dqt = dQ.topLeftCorner(n, n).trace();
    const double st = S.topLeftCorner(n, n).trace();
    const double rt = (dqt + qt * qt / n + st) / (1.0 + qt * qt / n + std::abs(st));
    double qn = 0.0, rn = 0.0;
    if (m > 0) {
      qn = Q.bottomRightCorner(m, m).trace();
      const double dqn = dQ.bottomRightCorner(m, m).trace();
      const double sn = S.bottomRightCorner(m, m).trace();
      rn = (dqn + qn * qn / m + sn) / (1.0 + qn * qn / m + std::abs(sn));
    }
    out.t.push_back(t);
    out.trace_q_tangent.push_back(qt);
    out.trace_q_normal.push_back(qn);
    out.tangent.push_back(rt);
    out.normal.push_back(rn);
    out.max_tangent = std::max(out.max_tangent, rt);
    out.max_normal = std::max(out.max_normal, rn);
    const double model = n * c / (t * c + n) + m / t;
    out.max_logdet_excess =
        std::max(out.max_logdet_excess, (qt + qn - model) / (1.0 + std::abs(model)));
  }
  if (sys.Q.empty()) out.max_tangent = out.max_normal = out.max_logdet_excess = 0.0;
  out.ok = out.max_tangent <= tol && out.max_normal <= tol;
  if (!out.ok && throw_on_violation) {
    throw Error(ErrorCode::TraceInequalityViolated,
                "Riccati trace residual " + sci(std::max(out.max_tangent, out.max_normal)));
  }
  return out;
}

ode::ODETrajectory combined_psi(const ode::RayComparison& ray, double pairing, int n) {
  ode::ODETrajectory psi = ray.psi2;
  for (std::size_t k = 0; k < psi.size(); ++k) {
    psi.values[k] += pairing / n * ray.psi1.values[k];
    psi.derivs[k] += pairing / n * ray.psi1.derivs[k];
  }
  return psi;
}

std::pair<ode::ODETrajectory, ode::ODETrajectory> riccati_phi(const JacobiSystem& sys) {
  ode::ODETrajectory phi, phit;
  const int n = sys.ray.n, m = sys.ray.m;
  phi.step = phit.step = sys.step;
  double lp = 0.0, lpt = 0.0, prev_t = 0.0, prev_a = 0.0, prev_b = 0.0;
  for (std::size_t i = 0; i < sys.Q.size(); ++i) {
    const double t = sys.t[sys.q_index[i]];
    const double a = sys.Q[i].topLeftCorner(n, n).trace() / n;
    const double b = m > 0 ? sys.Q[i].bottomRightCorner(m, m).trace() / m : 0.0;
    if (i > 0) {
      lp += 0.5 * (a + prev_a) * (t - prev_t);
      lpt += 0.5 * (b + prev_b) * (t - prev_t);
    }
    phi.grid.push_back(t);
    phit.grid.push_back(t);
    phi.values.push_back(std::exp(lp));
    phi.derivs.push_back(std::exp(lp) * a);
    phit.values.push_back(std::exp(lpt));
    phit.derivs.push_back(std::exp(lpt) * b);
    prev_t = t;
    prev_a = a;
    prev_b = b;
  }
  return {phi, phit};
}

std::function<double(double)> lambda_along(const MetricChart& chart, const JacobiSystem& sys,
                                           const ode::AsymptoticProfile& profile,
                                           DistanceMode mode) {
  if (!chart.origin_distance) {
    throw Error(ErrorCode::RegistryMiss, chart.label + ": chart has no base-point distance");
  }
  if (mode == DistanceMode::Surrogate) {
    const double d0 = chart.origin_distance(sys.ray.base);
    const double a = sys.ray.speed_a;
    return [profile, d0, a](double t) { return profile(std::abs(d0 - a * t)); };
  }
  struct Samples {
    std::vector<double> t;
    std::vector<Vec> x, v;
    double h;
  };
  auto s = std::make_shared<Samples>(Samples{sys.t, sys.x, sys.v, sys.step});
  auto dist = chart.origin_distance;
  return [profile, s, dist](double t) {
    const std::size_t K = s->t.size();
    std::size_t k = std::min(K - 2, static_cast<std::size_t>(std::max(0.0, t / s->h)));
    const double u = (t - s->t[k]) / s->h, h = s->h;
    const double h00 = (1 + 2 * u) * (1 - u) * (1 - u), h10 = u * (1 - u) * (1 - u);
    const double h01 = u * u * (3 - 2 * u), h11 = u * u * (u - 1);
    const Vec x = h00 * s->x[k] + h10 * h * s->v[k] + h01 * s->x[k + 1] + h11 * h * s->v[k + 1];
    return profile(dist(x));
  };
}

DetBoundReport det_bound_check(const JacobiSystem& sys, double f_at_x,
                               const DetBoundOptions& opt) {
  if (!(f_at_x > 0.0)) throw Error(ErrorCode::NonPositiveF, "density must be positive");
  const int n = sys.ray.n, m = sys.ray.m;
  const double c = sys.ray.pairing();
  const bool asym = opt.mode == CurvatureMode::Asymptotic;
  if (asym && !opt.comparison) {
    throw Error(ErrorCode::GridTooShort, "asymptotic mode needs a comparison run");
  }
  const double E = asym ? std::exp((n + m - 1) * (2.0 * opt.r0 * opt.b1 + opt.b0)) : 1.0;
  const bool lemma_defined = n >= 2;
  const double F = lemma_defined ? std::pow(f_at_x, 1.0 / (n - 1)) + opt.lemma_tolerance / n : 0.0;
  ode::ODETrajectory psi, psit;
  if (asym) {
    psi = combined_psi(*opt.comparison, c, n);
    psit = opt.comparison->psi_tilde;
    if (std::abs(psi.step - sys.step) > 1e-9 * sys.step || psi.end_time() < sys.t[sys.usable_end()] * (1 - 1e-12)) {
      throw Error(ErrorCode::GridTooShort, "comparison run must share the ray grid");
    }
  }
  DetBoundReport rep;
  rep.lemma_hypothesis = sys.ray.speed_a <= 1.0 + 1e-12;
  double sp = std::numeric_limits<double>::infinity(), sb = sp, sl = sp;
  const auto rel = [](double bound, double det) {
    return (bound - det) / std::max(std::abs(bound), 1e-300);
  };
  for (std::size_t k = 1; k <= sys.usable_end(); ++k) {
    const double t = sys.t[k];
    const double det = sys.det[k];
    double bp, bb = std::numeric_limits<double>::quiet_NaN(), bl;
    if (asym) {
      const auto j = static_cast<std::size_t>(std::llround(t / psi.step));
      bp = std::pow(psi.values[j], n) * std::pow(psit.values[j], m);
      if (!(psi.values[j] > 0.0)) bp = 0.0;
      bb = std::pow(2.0 * opt.b1 + 1.0 / t + c / n, n) * std::pow(t, n + m) * E;
      sb = std::min(sb, rel(bb, det));
    } else {
      bp = std::pow(1.0 + t * c / n, n) * std::pow(t, m);
      if (1.0 + t * c / n <= 0.0) bp = 0.0;
    }
    bl = lemma_defined ? std::pow(t, m) * std::pow(1.0 + t * F, n) * E
                       : std::numeric_limits<double>::quiet_NaN();
    sp = std::min(sp, rel(bp, det));
    if (lemma_defined) sl = std::min(sl, rel(bl, det));
    rep.t.push_back(t);
    rep.det.push_back(det);
    rep.bound_pairing.push_back(bp);
    rep.bound_b.push_back(bb);
    rep.bound_lemma.push_back(bl);
  }
  const double inf = std::numeric_limits<double>::infinity();
  rep.min_slack_pairing = sp == inf ? 0.0 : sp;
  rep.min_slack_b = sb == inf ? 0.0 : sb;
  rep.min_slack_lemma = sl == inf ? 0.0 : sl;
  const double tol = -opt.relative_tolerance;
  rep.passed = rep.min_slack_pairing >= tol && (!asym || rep.min_slack_b >= tol) &&
               (!rep.lemma_hypothesis || !lemma_defined || rep.min_slack_lemma >= tol);
  if (!rep.passed && opt.throw_on_violation) {
    throw Error(ErrorCode::BoundViolated,
                "determinant bound slack " +
                    sci(std::min({rep.min_slack_pairing, rep.min_slack_b, rep.min_slack_lemma})));
  }
  return rep;
}

// ---------------------------------------------------------------------------

AvrEstimate avr_estimate(const MetricChart& chart, const Vec& q, const AvrOptions& opt) {
  if (opt.n_dirs < 100) throw Error(ErrorCode::TooFewDirections, "avr needs n_dirs >= 100");
  if (!(opt.r > 0.0)) throw Error(ErrorCode::RadiusExceedsChart, "radius must be positive");
  if (opt.mode == AvrMode::ThetaH && !opt.h) {
    throw Error(ErrorCode::GridTooShort, "theta_h mode needs the h trajectory");
  }
  const int N = chart.dim;
  const Mat g = geom::metric_at(chart, q);
  const Mat Lt = g.llt().matrixL().transpose();
  const double dt = opt.dt > 0.0 ? opt.dt : opt.r / 200.0;
  const std::size_t steps = ode::step_count(opt.r, dt);
  const double h = opt.r / static_cast<double>(steps);
  Layout L{N, true, true, true};
  RayRhs rhs(chart, L, 1);

  std::vector<double> vol(opt.n_dirs, 0.0);
  std::vector<char> truncated(opt.n_dirs, 0);
  parallel_for(opt.n_dirs, opt.threads > 0 ? opt.threads : env_threads(), [&](int i) {
    std::mt19937_64 rng(splitmix64(opt.seed ^ splitmix64(static_cast<std::uint64_t>(i))));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec xi(N);
    do {
      for (int j = 0; j < N; ++j) xi[j] = gauss(rng);
    } while (xi.norm() < 1e-12);
    const Vec v = Lt.triangularView<Eigen::Upper>().solve(Vec(xi / xi.norm()));
    const Mat E = complete_frame(g, v);
    Mat dP = Mat::Identity(N, N);
    Vec y(L.size());
    y << q, v, E.reshaped(), Mat::Zero(N, N).reshaped(), dP.reshaped(), 0.0;
    const auto block_det = [&](const Vec& s) {
      return ConstMatMap(s.data() + L.P(), N, N).bottomRightCorner(N - 1, N - 1).determinant();
    };
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * h;
      auto next = try_step(chart, rhs, t, y, h);
      if (!next) {
        throw Error(ErrorCode::RadiusExceedsChart,
                    "radial geodesic left the chart before r=" + sci(opt.r));
      }
      if (block_det(*next) <= 0.0) {
        double lo = 0.0, hi = h;
        while (hi - lo > 1e-9 * std::max(1.0, opt.r)) {
          const double mid = 0.5 * (lo + hi);
          (block_det(ode::rk4_step(rhs, t, y, mid)) > 0.0 ? lo : hi) = mid;
        }
        y = ode::rk4_step(rhs, t, y, lo);
        truncated[i] = 1;
        break;
      }
      y = std::move(*next);
    }
    vol[i] = y[L.a()];
  });

  const double n = static_cast<double>(opt.n_dirs);
  const double mean = pairwise_sum(vol.data(), vol.size()) / n;
  std::vector<double> sq(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) sq[i] = (vol[i] - mean) * (vol[i] - mean);
  const double sd = std::sqrt(pairwise_sum(sq.data(), sq.size()) / (n - 1.0));
  double denom;
  if (opt.mode == AvrMode::Theta) {
    denom = std::pow(opt.r, N) / N;
  } else {
    denom = ode::theta_h_normalizer(*opt.h, N, opt.r) / (N * geom::unit_ball_volume(N));
  }
  AvrEstimate out;
  out.theta = mean / denom;
  out.std_error = sd / std::sqrt(n) / denom;
  out.n_dirs = opt.n_dirs;
  out.truncated_at_conjugate =
      static_cast<int>(std::count(truncated.begin(), truncated.end(), char{1}));
  out.caveat =
      "conjugate points only; a cut locus before conjugacy is not detected, so the estimate "
      "bounds the ball volume from above";
  return out;
}

}  // namespace msv::transport
