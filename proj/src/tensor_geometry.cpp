#include "msv/tensor_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "msv/error.hpp"

namespace msv::geom {

bool Box::contains(const Vec& x) const {
  return x.size() == lo.size() && (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

double Box::margin(const Vec& x) const {
  return std::min((x - lo).minCoeff(), (hi - x).minCoeff());
}

namespace {

Mat checked_metric(const MetricChart& chart, const Vec& x) {
  Mat g = chart.metric(x);
  if (g.rows() != chart.dim || g.cols() != chart.dim) {
    throw Error(ErrorCode::NonSPDMetric, chart.label + ": metric has wrong shape");
  }
  const double scale = std::max(1e-300, g.cwiseAbs().maxCoeff());
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::NonSPDMetric, chart.label + ": metric not symmetric");
  }
  g = 0.5 * (g + g.transpose());
  if (!g.allFinite()) throw Error(ErrorCode::NonSPDMetric, chart.label + ": metric not finite");
  Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorCode::NonSPDMetric, chart.label + ": metric not positive definite");
  }
  return g;
}

}  // namespace

Mat metric_at(const MetricChart& chart, const Vec& x) {
  if (!chart.region.contains(x)) {
    throw Error(ErrorCode::PointOutsideRegion, chart.label + ": point outside chart region");
  }
  return checked_metric(chart, x);
}

MetricJet metric_jet(const MetricChart& chart, const Vec& x) {
  if (!chart.region.contains(x)) {
    throw Error(ErrorCode::PointOutsideRegion, chart.label + ": point outside chart region");
  }
  if (chart.jet) {
    MetricJet jet = chart.jet(x);
    jet.g = checked_metric(chart, x);
    return jet;
  }
  const int N = chart.dim;
  const double h = MetricChart::fd_step(x);
  if (chart.region.margin(x) < 2.0 * h) {
    throw Error(ErrorCode::PointTooNearBoundary,
                chart.label + ": finite-difference stencil leaves the chart region");
  }
  MetricJet jet;
  jet.g = checked_metric(chart, x);
  jet.dg.resize(N);
  jet.ddg.resize(static_cast<std::size_t>(N) * N);
  std::vector<Mat> plus(N), minus(N);
  for (int k = 0; k < N; ++k) {
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    plus[k] = chart.metric(xp);
    minus[k] = chart.metric(xm);
    jet.dg[k] = (plus[k] - minus[k]) / (2.0 * h);
    jet.ddg[k * N + k] = (plus[k] - 2.0 * jet.g + minus[k]) / (h * h);
  }
  for (int k = 0; k < N; ++k) {
    for (int l = k + 1; l < N; ++l) {
      Vec x1 = x, x2 = x, x3 = x, x4 = x;
      x1[k] += h; x1[l] += h;
      x2[k] += h; x2[l] -= h;
      x3[k] -= h; x3[l] += h;
      x4[k] -= h; x4[l] -= h;
      const Mat d = (chart.metric(x1) - chart.metric(x2) - chart.metric(x3) + chart.metric(x4)) /
                    (4.0 * h * h);
      jet.ddg[k * N + l] = d;
      jet.ddg[l * N + k] = d;
    }
  }
  for (auto& m : jet.dg) m = 0.5 * (m + m.transpose()).eval();
  for (auto& m : jet.ddg) m = 0.5 * (m + m.transpose()).eval();
  return jet;
}

CurvaturePacket::CurvaturePacket(Vec point, Mat g, Mat g_inv, std::vector<double> gamma,
                                 std::vector<double> rm)
    : dim_(static_cast<int>(point.size())),
      point_(std::move(point)),
      g_(std::move(g)),
      g_inv_(std::move(g_inv)),
      gamma_(std::move(gamma)),
      rm_(std::move(rm)) {}

Vec CurvaturePacket::christoffel_contract(const Vec& u, const Vec& v) const {
  Vec out = Vec::Zero(dim_);
  for (int k = 0; k < dim_; ++k) {
    double s = 0.0;
    const double* G = &gamma_[static_cast<std::size_t>(k) * dim_ * dim_];
    for (int i = 0; i < dim_; ++i) {
      for (int j = 0; j < dim_; ++j) s += G[i * dim_ + j] * u[i] * v[j];
    }
    out[k] = s;
  }
  return out;
}

double CurvaturePacket::rm(const Vec& X, const Vec& Y, const Vec& Z, const Vec& W) const {
  double s = 0.0;
  for (int a = 0; a < dim_; ++a) {
    for (int b = 0; b < dim_; ++b) {
      const double xy = X[a] * Y[b];
      if (xy == 0.0) continue;
      for (int c = 0; c < dim_; ++c) {
        for (int d = 0; d < dim_; ++d) s += xy * Z[c] * W[d] * riemann(a, b, c, d);
      }
    }
  }
  return s;
}

Mat CurvaturePacket::jacobi_operator(const Vec& V) const {
  Mat M = Mat::Zero(dim_, dim_);
  for (int c = 0; c < dim_; ++c) {
    for (int d = 0; d < dim_; ++d) {
      double s = 0.0;
      for (int a = 0; a < dim_; ++a) {
        for (int b = 0; b < dim_; ++b) s += V[a] * V[b] * riemann(a, c, b, d);
      }
      M(c, d) = s;
    }
  }
  return 0.5 * (M + M.transpose());
}

double CurvaturePacket::ricci(const Vec& X) const {
  const Mat M = jacobi_operator(X);
  return (g_inv_.array() * M.array()).sum();
}

double CurvaturePacket::symmetry_defect() const {
  double worst = 0.0;
  for (int a = 0; a < dim_; ++a)
    for (int b = 0; b < dim_; ++b)
      for (int c = 0; c < dim_; ++c)
        for (int d = 0; d < dim_; ++d) {
          const double r = riemann(a, b, c, d);
          worst = std::max({worst, std::abs(r + riemann(b, a, c, d)),
                            std::abs(r + riemann(a, b, d, c)), std::abs(r - riemann(c, d, a, b)),
                            std::abs(r + riemann(a, c, d, b) + riemann(a, d, b, c))});
        }
  return worst;
}

CurvaturePacket curvature_packet(const MetricChart& chart, const Vec& x) {
  const MetricJet jet = metric_jet(chart, x);
  const int N = chart.dim;
  const Mat& g = jet.g;
  const Mat ginv = g.ldlt().solve(Mat::Identity(N, N));
  const auto idx3 = [N](int a, int b, int c) { return (static_cast<std::size_t>(a) * N + b) * N + c; };

  std::vector<double> lower(static_cast<std::size_t>(N) * N * N);
  for (int l = 0; l < N; ++l)
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        lower[idx3(l, i, j)] = 0.5 * (jet.dg[i](j, l) + jet.dg[j](i, l) - jet.dg[l](i, j));

  std::vector<double> gamma(lower.size(), 0.0);
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        double s = 0.0;
        for (int l = 0; l < N; ++l) s += ginv(k, l) * lower[idx3(l, i, j)];
        gamma[idx3(k, i, j)] = s;
      }

  // dgamma[m][k][i][j] = d_m Gamma^k_ij
  std::vector<double> dgamma(static_cast<std::size_t>(N) * lower.size(), 0.0);
  for (int m = 0; m < N; ++m) {
    const Mat dginv = -ginv * jet.dg[m] * ginv;
    for (int k = 0; k < N; ++k)
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          double s = 0.0;
          for (int l = 0; l < N; ++l) {
            const double dlow = 0.5 * (jet.ddg[m * N + i](j, l) + jet.ddg[m * N + j](i, l) -
                                       jet.ddg[m * N + l](i, j));
            s += dginv(k, l) * lower[idx3(l, i, j)] + ginv(k, l) * dlow;
          }
          dgamma[static_cast<std::size_t>(m) * lower.size() + idx3(k, i, j)] = s;
        }
  }
  const auto dG = [&](int m, int k, int i, int j) {
    return dgamma[static_cast<std::size_t>(m) * lower.size() + idx3(k, i, j)];
  };

  // R^l_{ijk} for R(d_i, d_j) d_k
  std::vector<double> up(static_cast<std::size_t>(N) * lower.size(), 0.0);
  for (int l = 0; l < N; ++l)
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
          double s = dG(i, l, j, k) - dG(j, l, i, k);
          for (int m = 0; m < N; ++m) {
            s += gamma[idx3(l, i, m)] * gamma[idx3(m, j, k)] -
                 gamma[idx3(l, j, m)] * gamma[idx3(m, i, k)];
          }
          up[idx3(l, i, j) * N + k] = s;
        }

  std::vector<double> rm(up.size(), 0.0);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < N; ++c)
        for (int d = 0; d < N; ++d) {
          double s = 0.0;
          for (int l = 0; l < N; ++l) s += g(c, l) * up[idx3(l, a, b) * N + d];
          rm[idx3(a, b, c) * N + d] = s;
        }
  return CurvaturePacket(x, g, ginv, std::move(gamma), std::move(rm));
}

std::vector<double> christoffel_symbols(const MetricChart& chart, const Vec& x) {
  if (!chart.region.contains(x)) {
    throw Error(ErrorCode::PointOutsideRegion, chart.label + ": point outside chart region");
  }
  const int N = chart.dim;
  Mat g;
  std::vector<Mat> dg;
  if (chart.jet) {
    MetricJet jet = chart.jet(x);
    g = checked_metric(chart, x);
    dg = std::move(jet.dg);
  } else {
    const double h = MetricChart::fd_step(x);
    if (chart.region.margin(x) < 2.0 * h) {
      throw Error(ErrorCode::PointTooNearBoundary,
                  chart.label + ": finite-difference stencil leaves the chart region");
    }
    g = checked_metric(chart, x);
    for (int k = 0; k < N; ++k) {
      Vec xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      Mat d = (chart.metric(xp) - chart.metric(xm)) / (2.0 * h);
      dg.push_back(0.5 * (d + d.transpose()));
    }
  }
  const Mat ginv = g.ldlt().solve(Mat::Identity(N, N));
  std::vector<double> gamma(static_cast<std::size_t>(N) * N * N, 0.0);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int l = 0; l < N; ++l) {
        const double low = 0.5 * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
        if (low == 0.0) continue;
        for (int k = 0; k < N; ++k) gamma[(static_cast<std::size_t>(k) * N + i) * N + j] += ginv(k, l) * low;
      }
  return gamma;
}

double sectional(const CurvaturePacket& packet, const Vec& X, const Vec& Y) {
  const Mat& g = packet.metric();
  const double xx = X.dot(g * X), yy = Y.dot(g * Y), xy = X.dot(g * Y);
  const double wedge2 = xx * yy - xy * xy;
  if (!(wedge2 > 1e-20)) {
    throw Error(ErrorCode::DegeneratePlane, "|X ^ Y| below 1e-10");
  }
  return packet.rm(X, Y, X, Y) / wedge2;
}

double sectional(const MetricChart& chart, const Vec& x, const Vec& X, const Vec& Y) {
  return sectional(curvature_packet(chart, x), X, Y);
}

bool gram_schmidt(const Mat& g, std::vector<Vec>& vectors, double tol) {
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    Vec v = vectors[i];
    for (std::size_t j = 0; j < i; ++j) v -= vectors[j].dot(g * v) * vectors[j];
    // second pass for stability
    for (std::size_t j = 0; j < i; ++j) v -= vectors[j].dot(g * v) * vectors[j];
    const double nrm2 = v.dot(g * v);
    if (!(nrm2 > tol * tol * std::max(1.0, vectors[i].dot(g * vectors[i])))) return false;
    vectors[i] = v / std::sqrt(nrm2);
  }
  return true;
}

double ric_k(const CurvaturePacket& packet, const Vec& X, std::span<const Vec> V) {
  const int N = packet.dim();
  const int k = static_cast<int>(V.size());
  if (k < 1 || k > N - 1) {
    throw Error(ErrorCode::BadK, "k=" + std::to_string(k) + " outside [1, N-1]");
  }
  const Mat& g = packet.metric();
  std::vector<Vec> frame;
  frame.reserve(V.size() + 1);
  frame.push_back(X);
  frame.insert(frame.end(), V.begin(), V.end());
  for (std::size_t a = 0; a < frame.size(); ++a) {
    for (std::size_t b = 0; b < frame.size(); ++b) {
      const double expected = a == b ? 1.0 : 0.0;
      if (std::abs(frame[a].dot(g * frame[b]) - expected) > 1e-8) {
        throw Error(ErrorCode::NonOrthonormalInput, "(X, V) not orthonormal within 1e-8");
      }
    }
  }
  if (!gram_schmidt(g, frame)) {
    throw Error(ErrorCode::NonOrthonormalInput, "(X, V) degenerate");
  }
  double sum = 0.0;
  for (int i = 1; i <= k; ++i) sum += packet.rm(frame[0], frame[i], frame[0], frame[i]);
  return sum / k;
}

double ric_k(const MetricChart& chart, const Vec& x, const Vec& X, std::span<const Vec> V) {
  return ric_k(curvature_packet(chart, x), X, V);
}

RicKAudit min_ric_k_sample(const MetricChart& chart, int k, int n_points, int n_frames,
                           std::uint64_t seed, const std::function<double(const Vec&)>& floor,
                           const std::optional<Box>& box) {
  if (n_points < 1 || n_frames < 1) {
    throw Error(ErrorCode::TooFewDirections, "n_points and n_frames must be >= 1");
  }
  if (k < 1 || k > chart.dim - 1) throw Error(ErrorCode::BadK, "k outside [1, N-1]");
  Box sample_box = box.value_or(chart.region);
  if (!box) {
    // keep finite-difference stencils inside the chart
    const double pad = 3e-4 * (1.0 + std::max(sample_box.lo.cwiseAbs().maxCoeff(),
                                              sample_box.hi.cwiseAbs().maxCoeff()) *
                                             std::sqrt(static_cast<double>(chart.dim)));
    sample_box.lo.array() += pad;
    sample_box.hi.array() -= pad;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RicKAudit out;
  out.min_ric_k = std::numeric_limits<double>::infinity();
  out.min_margin = std::numeric_limits<double>::infinity();
  const int N = chart.dim;
  for (int p = 0; p < n_points; ++p) {
    Vec x(N);
    for (int i = 0; i < N; ++i) {
      x[i] = sample_box.lo[i] + unif(rng) * (sample_box.hi[i] - sample_box.lo[i]);
    }
    const CurvaturePacket packet = curvature_packet(chart, x);
    const double shift = floor ? floor(x) : 0.0;
    for (int f = 0; f < n_frames; ++f) {
      std::vector<Vec> frame;
      do {
        frame.assign(static_cast<std::size_t>(k) + 1, Vec(N));
        for (auto& v : frame)
          for (int i = 0; i < N; ++i) v[i] = gauss(rng);
      } while (!gram_schmidt(packet.metric(), frame, 1e-6));
      const double r = ric_k(packet, frame[0], std::span<const Vec>(frame).subspan(1));
      ++out.samples;
      if (r < out.min_ric_k) {
        out.min_ric_k = r;
        out.argmin = x;
      }
      out.min_margin = std::min(out.min_margin, r + shift);
    }
  }
  return out;
}

double unit_ball_volume(int d) {
  if (d < 1) throw Error(ErrorCode::BadDimension, "ball dimension must be >= 1");
  // |B^d| = 2 pi / d * |B^{d-2}|, |B^0| = 1, |B^1| = 2
  double v = (d % 2 == 0) ? 1.0 : 2.0;
  for (int j = (d % 2 == 0) ? 2 : 3; j <= d; j += 2) v *= 2.0 * std::numbers::pi / j;
  return v;
}

}  // namespace msv::geom
