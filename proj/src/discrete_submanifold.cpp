#include "msv/discrete_submanifold.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <queue>
#include <set>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include "msv/error.hpp"
#include "msv/parallel.hpp"

namespace msv::sub {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Triangulates the band between two closed rings, both listed by increasing angle.
void zip_rings(const std::vector<int>& inner, const std::vector<double>& ia,
               const std::vector<int>& outer, const std::vector<double>& oa,
               std::vector<std::array<int, 3>>& tris) {
  const std::size_t na = inner.size(), nb = outer.size();
  std::size_t i = 0, k = 0;
  const auto next = [](const std::vector<double>& a, std::size_t j) {
    return j + 1 < a.size() ? a[j + 1] : a[0] + kTwoPi;
  };
  while (i < na || k < nb) {
    const bool advance_inner = k == nb || (i < na && next(ia, i) < next(oa, k));
    if (advance_inner) {
      tris.push_back({inner[i % na], outer[k % nb], inner[(i + 1) % na]});
      ++i;
    } else {
      tris.push_back({inner[i % na], outer[k % nb], outer[(k + 1) % nb]});
      ++k;
    }
  }
}

void finalize(TriMesh& mesh) {
  mesh.on_boundary.assign(mesh.size(), 0);
  mesh.boundary_normal.assign(mesh.size(), P2::Zero());
  for (auto& t : mesh.triangles) {
    const P2 a = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    const P2 b = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    if (a.x() * b.y() - a.y() * b.x() < 0.0) std::swap(t[1], t[2]);
    for (int e = 0; e < 3; ++e) {
      mesh.h = std::max(mesh.h, (mesh.vertices[t[e]] - mesh.vertices[t[(e + 1) % 3]]).norm());
    }
  }
  for (const auto& e : mesh.boundary_edges) {
    mesh.on_boundary[e[0]] = mesh.on_boundary[e[1]] = 1;
  }
}

struct Ring {
  std::vector<int> idx;
  std::vector<double> angle;
};

Ring add_ring(TriMesh& mesh, double rho, int count, double phase) {
  Ring r;
  for (int i = 0; i < count; ++i) {
    const double a = phase + kTwoPi * i / count;
    r.idx.push_back(static_cast<int>(mesh.vertices.size()));
    r.angle.push_back(a);
    mesh.vertices.emplace_back(rho * std::cos(a), rho * std::sin(a));
  }
  return r;
}

void check_params(const std::string& what, const std::map<std::string, double>& given,
                  const std::set<std::string>& allowed) {
  for (const auto& [k, v] : given) {
    if (!allowed.count(k)) throw Error(ErrorCode::RegistryMiss, what + ": unknown parameter '" + k + "'");
    if (!std::isfinite(v)) throw Error(ErrorCode::RegistryMiss, what + ": parameter '" + k + "' not finite");
  }
}

double param(const std::map<std::string, double>& p, const std::string& k, double dflt) {
  const auto it = p.find(k);
  return it == p.end() ? dflt : it->second;
}

int ambient_param(const std::map<std::string, double>& p, const std::string& k, int dflt) {
  const double v = param(p, k, dflt);
  if (v != std::floor(v) || v < 1 || v > 16) {
    throw Error(ErrorCode::BadDimension, "dimension parameter '" + k + "' must be an integer in 1..16");
  }
  return static_cast<int>(v);
}

// Parameter gradients of the barycentric basis of triangle t (2 x 3).
Eigen::Matrix<double, 2, 3> basis_gradients(const TriMesh& mesh, const std::array<int, 3>& t,
                                            double* param_area) {
  const P2 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
  Eigen::Matrix2d E;
  E.col(0) = b - a;
  E.col(1) = c - a;
  if (param_area) *param_area = 0.5 * std::abs(E.determinant());
  const Eigen::Matrix2d Ei = E.inverse();  // rows: gradients of lambda_1, lambda_2
  Eigen::Matrix<double, 2, 3> G;
  G.col(1) = Ei.row(0).transpose();
  G.col(2) = Ei.row(1).transpose();
  G.col(0) = -G.col(1) - G.col(2);
  return G;
}

Mat first_derivatives(const std::function<Vec(const P2&)>& F, const P2& p) {
  const double d = 1e-5 * (1.0 + p.norm());
  Mat J(F(p).size(), 2);
  for (int i = 0; i < 2; ++i) {
    P2 e = P2::Zero();
    e[i] = d;
    J.col(i) = (F(p + e) - F(p - e)) / (2.0 * d);
  }
  return J;
}

std::array<Vec, 4> second_derivatives(const std::function<Vec(const P2&)>& F, const P2& p) {
  const double d = 1e-3;
  const P2 e1(d, 0), e2(0, d);
  const Vec f0 = F(p);
  std::array<Vec, 4> out;
  out[0] = (F(p + e1) - 2.0 * f0 + F(p - e1)) / (d * d);
  out[3] = (F(p + e2) - 2.0 * f0 + F(p - e2)) / (d * d);
  out[1] = (F(p + e1 + e2) - F(p + e1 - e2) - F(p - e1 + e2) + F(p - e1 - e2)) / (4.0 * d * d);
  out[2] = out[1];
  return out;
}

Eigen::Matrix2d induced_metric(const geom::MetricChart& chart, const std::function<Vec(const P2&)>& F,
                               const P2& p) {
  const Mat J = first_derivatives(F, p);
  const Mat G = geom::metric_at(chart, F(p));
  return J.transpose() * G * J;
}

std::vector<std::vector<int>> adjacency(const TriMesh& mesh) {
  std::vector<std::set<int>> adj(mesh.size());
  for (const auto& t : mesh.triangles)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) adj[t[a]].insert(t[b]);
  std::vector<std::vector<int>> out(mesh.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) out[i].assign(adj[i].begin(), adj[i].end());
  return out;
}

void check_connected(const TriMesh& mesh) {
  if (mesh.size() == 0 || mesh.triangles.empty()) {
    throw Error(ErrorCode::DisconnectedMesh, "empty mesh");
  }
  const auto adj = adjacency(mesh);
  std::vector<char> seen(mesh.size(), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        q.push(w);
      }
  }
  if (count != mesh.size()) {
    throw Error(ErrorCode::DisconnectedMesh, "mesh has " + std::to_string(mesh.size() - count) +
                                                 " vertices unreachable from vertex 0");
  }
}

// Area-weighted vertex average of per-triangle parameter gradients.
std::vector<P2> recovered_gradients(const ImmersedSubmanifold& s, const std::vector<double>& v) {
  std::vector<P2> g(s.size(), P2::Zero());
  std::vector<double> w(s.size(), 0.0);
  for (std::size_t t = 0; t < s.mesh.triangles.size(); ++t) {
    const auto& tri = s.mesh.triangles[t];
    const auto G = basis_gradients(s.mesh, tri, nullptr);
    const P2 grad = G * Eigen::Vector3d(v[tri[0]], v[tri[1]], v[tri[2]]);
    for (int a = 0; a < 3; ++a) {
      g[tri[a]] += s.tri_area[t] * grad;
      w[tri[a]] += s.tri_area[t];
    }
  }
  for (std::size_t i = 0; i < s.size(); ++i) g[i] /= w[i];
  return g;
}

Vec frame_components(const VertexGeometry& vg, const P2& param_grad) {
  return vg.coeff.transpose() * param_grad;
}

double radical_inverse(unsigned k, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (k > 0) {
    r += f * (k % base);
    k /= base;
    f *= inv;
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

TriMesh ring_disk_mesh(double radius, int level) {
  if (level < 0 || level > 10 || !(radius > 0.0)) {
    throw Error(ErrorCode::BadDimension, "disk mesh needs radius > 0 and level in 0..10");
  }
  const int K = 1 << level;
  TriMesh mesh;
  mesh.vertices.emplace_back(0.0, 0.0);
  Ring prev;
  for (int j = 1; j <= K; ++j) {
    Ring ring = add_ring(mesh, radius * j / K, 6 * j, 0.0);
    if (j == 1) {
      for (int i = 0; i < 6; ++i) mesh.triangles.push_back({0, ring.idx[i], ring.idx[(i + 1) % 6]});
    } else {
      zip_rings(prev.idx, prev.angle, ring.idx, ring.angle, mesh.triangles);
    }
    prev = std::move(ring);
  }
  for (std::size_t i = 0; i < prev.idx.size(); ++i) {
    mesh.boundary_edges.push_back({prev.idx[i], prev.idx[(i + 1) % prev.idx.size()]});
  }
  finalize(mesh);
  for (int v : prev.idx) mesh.boundary_normal[v] = mesh.vertices[v].normalized();
  return mesh;
}

TriMesh ring_annulus_mesh(double r_in, double r_out, int level) {
  if (!(r_in > 0.0) || !(r_out > r_in) || level < 0 || level > 10) {
    throw Error(ErrorCode::BadDimension, "annulus mesh needs 0 < r_in < r_out and level in 0..10");
  }
  const int K = std::max(1, static_cast<int>(std::ceil((r_out - r_in) * (1 << level) - 1e-9)));
  const double h = (r_out - r_in) / K;
  TriMesh mesh;
  std::vector<Ring> rings;
  for (int j = 0; j <= K; ++j) {
    const double rho = r_in + j * h;
    const int count = std::max(6, static_cast<int>(std::lround(6.0 * rho / h)));
    rings.push_back(add_ring(mesh, rho, count, 0.0));
    if (j > 0) zip_rings(rings[j - 1].idx, rings[j - 1].angle, rings[j].idx, rings[j].angle, mesh.triangles);
  }
  const auto& outer = rings.back().idx;
  const auto& inner = rings.front().idx;
  for (std::size_t i = 0; i < outer.size(); ++i) {
    mesh.boundary_edges.push_back({outer[i], outer[(i + 1) % outer.size()]});
  }
  for (std::size_t i = 0; i < inner.size(); ++i) {
    mesh.boundary_edges.push_back({inner[(i + 1) % inner.size()], inner[i]});
  }
  finalize(mesh);
  for (int v : outer) mesh.boundary_normal[v] = mesh.vertices[v].normalized();
  for (int v : inner) mesh.boundary_normal[v] = -mesh.vertices[v].normalized();
  return mesh;
}

const std::vector<std::string>& immersion_ids() {
  static const std::vector<std::string> ids = {"flat_disk", "flat_annulus", "sphere_cap", "graph",
                                               "product_slice"};
  return ids;
}

Immersion make_immersion(const ImmersionSpec& spec) {
  const auto& p = spec.params;
  const int L = spec.refinement;
  Immersion imm;
  imm.id = spec.id;
  if (spec.id == "flat_disk") {
    check_params(spec.id, p, {"ambient_dim", "radius"});
    const int N = ambient_param(p, "ambient_dim", 4);
    imm.ambient_dim = N;
    imm.mesh = ring_disk_mesh(param(p, "radius", 1.0), L);
    imm.map = [N](const P2& q) {
      Vec x = Vec::Zero(N);
      x.head(2) = q;
      return x;
    };
    imm.minimal = true;
  } else if (spec.id == "flat_annulus") {
    check_params(spec.id, p, {"ambient_dim", "r_in", "r_out"});
    const int N = ambient_param(p, "ambient_dim", 4);
    imm.ambient_dim = N;
    imm.mesh = ring_annulus_mesh(param(p, "r_in", 0.5), param(p, "r_out", 1.0), L);
    imm.map = [N](const P2& q) {
      Vec x = Vec::Zero(N);
      x.head(2) = q;
      return x;
    };
    imm.minimal = true;
  } else if (spec.id == "sphere_cap") {
    check_params(spec.id, p, {"ambient_dim", "radius", "polar_angle"});
    const int N = ambient_param(p, "ambient_dim", 4);
    const double R = param(p, "radius", 1.0);
    const double alpha = param(p, "polar_angle", std::numbers::pi / 2);
    if (N < 3 || !(R > 0.0) || !(alpha > 0.0) || alpha >= std::numbers::pi) {
      throw Error(ErrorCode::BadDimension, "sphere_cap needs ambient_dim >= 3, radius > 0, 0 < polar_angle < pi");
    }
    imm.ambient_dim = N;
    imm.mesh = ring_disk_mesh(1.0, L);
    imm.map = [N, R, alpha](const P2& q) {
      const double rho = q.norm();
      const double th = alpha * rho;
      // sin(alpha rho) / rho, smooth at 0
      const double s = rho < 1e-4 ? alpha * (1.0 - th * th / 6.0 + th * th * th * th / 120.0)
                                  : std::sin(th) / rho;
      Vec x = Vec::Zero(N);
      x.head(2) = R * s * q;
      x[2] = R * (1.0 - std::cos(th));
      return x;
    };
  } else if (spec.id == "graph") {
    check_params(spec.id, p, {"ambient_dim", "radius", "amplitude"});
    const int N = ambient_param(p, "ambient_dim", 4);
    if (N < 3) throw Error(ErrorCode::BadDimension, "graph needs ambient_dim >= 3");
    const double amp = param(p, "amplitude", 1.0);
    imm.ambient_dim = N;
    imm.mesh = ring_disk_mesh(param(p, "radius", 0.5), L);
    imm.map = [N, amp](const P2& q) {
      Vec x = Vec::Zero(N);
      x.head(2) = q;
      x[2] = 0.5 * amp * (q.x() * q.x() - q.y() * q.y());
      return x;
    };
  } else if (spec.id == "product_slice") {
    check_params(spec.id, p, {"flat_dim", "radius"});
    const int k = ambient_param(p, "flat_dim", 2);
    if (k < 2) throw Error(ErrorCode::BadDimension, "product_slice needs flat_dim >= 2");
    const int N = 2 + k;
    imm.ambient_dim = N;
    imm.mesh = ring_disk_mesh(param(p, "radius", 1.0), L);
    imm.map = [N](const P2& q) {
      Vec x = Vec::Zero(N);
      x.segment(2, 2) = q;
      return x;
    };
    imm.minimal = true;
  } else {
    throw Error(ErrorCode::RegistryMiss, "unknown immersion '" + spec.id + "'");
  }
  return imm;
}

// ---------------------------------------------------------------------------

ImmersedSubmanifold build_immersion(const geom::MetricChart& chart, const Immersion& imm) {
  if (chart.dim != imm.ambient_dim) {
    throw Error(ErrorCode::BadDimension, imm.id + " lives in dimension " + std::to_string(imm.ambient_dim) +
                                             " but the chart has dimension " + std::to_string(chart.dim));
  }
  if (chart.dim < 3) throw Error(ErrorCode::BadDimension, "ambient dimension must exceed 2");
  check_connected(imm.mesh);
  ImmersedSubmanifold s;
  s.N = chart.dim;
  s.m = chart.dim - 2;
  s.immersion_id = imm.id;
  s.mesh = imm.mesh;
  s.minimal = imm.minimal;
  const int N = s.N, m = s.m;
  s.vertex.resize(s.mesh.size());
  std::vector<double> dist(s.mesh.size(), 0.0);

  parallel_for(static_cast<int>(s.mesh.size()), env_threads(), [&](int v) {
    const P2 p = s.mesh.vertices[v];
    VertexGeometry& vg = s.vertex[v];
    vg.x = imm.map(p);
    vg.jacobian = first_derivatives(imm.map, p);
    const Mat G = geom::metric_at(chart, vg.x);
    vg.metric = vg.jacobian.transpose() * G * vg.jacobian;
    const double det = vg.metric.determinant();
    if (!(det > 1e-12 * vg.metric.trace() * vg.metric.trace())) {
      throw Error(ErrorCode::DegenerateImmersion, "induced metric singular at vertex " + std::to_string(v));
    }
    const Eigen::Matrix2d Lc = vg.metric.llt().matrixL();
    vg.coeff = Lc.transpose().inverse();
    vg.tangent = vg.jacobian * vg.coeff;
    // normal frame: complete the tangent frame in the ambient metric
    std::vector<Vec> basis{vg.tangent.col(0), vg.tangent.col(1)};
    for (int i = 0; i < N && static_cast<int>(basis.size()) < N; ++i) {
      Vec w = Vec::Unit(N, i);
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& b : basis) w -= b.dot(G * w) * b;
      const double nrm = std::sqrt(std::max(0.0, w.dot(G * w)));
      if (nrm > 1e-6) basis.push_back(w / nrm);
    }
    vg.normal.resize(N, m);
    for (int b = 0; b < m; ++b) vg.normal.col(b) = basis[2 + b];

    const auto gamma = geom::christoffel_symbols(chart, vg.x);
    const auto d2 = second_derivatives(imm.map, p);
    std::array<Vec, 4> acc;  // d_ij F + Gamma(d_i F, d_j F)
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        Vec a = d2[i * 2 + j];
        const Vec ui = vg.jacobian.col(i), uj = vg.jacobian.col(j);
        for (int k = 0; k < N; ++k) {
          double sum = 0.0;
          for (int q = 0; q < N; ++q)
            for (int r = 0; r < N; ++r) sum += gamma[(k * N + q) * N + r] * ui[q] * uj[r];
          a[k] += sum;
        }
        acc[i * 2 + j] = a;
      }
    }
    const Eigen::Matrix2d ginv = vg.metric.inverse();
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double sum = 0.0;
          for (int l = 0; l < 2; ++l) sum += ginv(k, l) * acc[i * 2 + j].dot(G * vg.jacobian.col(l));
          vg.surface_christoffel[(k * 2 + i) * 2 + j] = sum;
        }
    vg.second_fundamental.assign(m, Mat::Zero(2, 2));
    vg.mean_curvature_frame = Vec::Zero(m);
    for (int b = 0; b < m; ++b) {
      Eigen::Matrix2d coord;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) coord(i, j) = acc[i * 2 + j].dot(G * vg.normal.col(b));
      vg.second_fundamental[b] = vg.coeff.transpose() * coord * vg.coeff;
      vg.mean_curvature_frame[b] = vg.second_fundamental[b].trace();
    }
    vg.mean_curvature = vg.normal * vg.mean_curvature_frame;
    if (s.mesh.on_boundary[v]) {
      const P2 q = s.mesh.boundary_normal[v];
      const Vec w = vg.jacobian * q;
      const Vec t = vg.jacobian * P2(-q.y(), q.x());
      Vec nu = w - (t.dot(G * w) / t.dot(G * t)) * t;
      vg.conormal = nu / std::sqrt(nu.dot(G * nu));
    }
    if (chart.origin_distance) dist[v] = chart.origin_distance(vg.x);
  });

  for (std::size_t v = 0; v < s.size(); ++v) {
    const auto& vg = s.vertex[v];
    const double H = vg.mean_curvature_frame.norm();
    s.max_mean_curvature = std::max(s.max_mean_curvature, H);
    const Mat G = geom::metric_at(chart, vg.x);
    for (int i = 0; i < 2; ++i) {
      s.orthogonality_defect = std::max(
          s.orthogonality_defect, std::abs(vg.mean_curvature.dot(G * vg.jacobian.col(i))) / (1.0 + H));
    }
  }
  s.r0 = chart.origin_distance ? *std::max_element(dist.begin(), dist.end())
                               : std::numeric_limits<double>::quiet_NaN();

  const std::size_t T = s.mesh.triangles.size();
  s.tri_area.resize(T);
  s.tri_metric_inverse.resize(T);
  parallel_for(static_cast<int>(T), env_threads(), [&](int t) {
    const auto& tri = s.mesh.triangles[t];
    const P2 c = (s.mesh.vertices[tri[0]] + s.mesh.vertices[tri[1]] + s.mesh.vertices[tri[2]]) / 3.0;
    double pa = 0.0;
    basis_gradients(s.mesh, tri, &pa);
    const Eigen::Matrix2d g = induced_metric(chart, imm.map, c);
    s.tri_area[t] = pa * std::sqrt(g.determinant());
    s.tri_metric_inverse[t] = g.inverse();
  });
  s.lumped_mass.assign(s.size(), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    s.area += s.tri_area[t];
    for (int a : s.mesh.triangles[t]) s.lumped_mass[a] += s.tri_area[t] / 3.0;
  }
  for (const auto& e : s.mesh.boundary_edges) {
    const P2 a = s.mesh.vertices[e[0]], b = s.mesh.vertices[e[1]];
    const Eigen::Matrix2d g = induced_metric(chart, imm.map, 0.5 * (a + b));
    const P2 d = b - a;
    s.boundary_length.push_back(std::sqrt(d.dot(g * d)));
    s.boundary_measure += s.boundary_length.back();
  }
  return s;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& density_ids() {
  static const std::vector<std::string> ids = {"constant", "bump", "radial_polynomial"};
  return ids;
}

std::function<double(const Vec&)> make_density(const DensitySpec& spec) {
  const auto& p = spec.params;
  const double value = param(p, "value", 1.0);
  if (spec.id == "constant") {
    check_params(spec.id, p, {"value"});
    return [value](const Vec&) { return value; };
  }
  if (spec.id == "bump") {
    std::set<std::string> allowed{"value", "amplitude", "width"};
    for (int i = 0; i < 16; ++i) allowed.insert("center_" + std::to_string(i));
    check_params(spec.id, p, allowed);
    const double amp = param(p, "amplitude", 1.0), w = param(p, "width", 0.5);
    if (!(w > 0.0)) throw Error(ErrorCode::RegistryMiss, "bump width must be positive");
    std::vector<double> center(16, 0.0);
    for (int i = 0; i < 16; ++i) center[i] = param(p, "center_" + std::to_string(i), 0.0);
    return [value, amp, w, center](const Vec& x) {
      double r2 = 0.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) r2 += (x[i] - center[i]) * (x[i] - center[i]);
      return value * (1.0 + amp * std::exp(-r2 / (2.0 * w * w)));
    };
  }
  if (spec.id == "radial_polynomial") {
    check_params(spec.id, p, {"value", "a2", "a4"});
    const double a2 = param(p, "a2", 0.5), a4 = param(p, "a4", 0.0);
    return [value, a2, a4](const Vec& x) {
      const double r2 = x.squaredNorm();
      return value * (1.0 + a2 * r2 + a4 * r2 * r2);
    };
  }
  throw Error(ErrorCode::RegistryMiss, "unknown density '" + spec.id + "'");
}

std::vector<double> sample_density(const ImmersedSubmanifold& s, const DensitySpec& spec) {
  const auto f = make_density(spec);
  std::vector<double> out(s.size());
  for (std::size_t v = 0; v < s.size(); ++v) {
    out[v] = f(s.vertex[v].x);
    if (!(out[v] > 0.0) || !std::isfinite(out[v])) {
      throw Error(ErrorCode::NonPositiveF, "density " + spec.id + " is " + num(out[v]) + " at vertex " +
                                               std::to_string(v));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

NeumannSolution solve_neumann(const ImmersedSubmanifold& s, const std::vector<double>& f0,
                              const NeumannOptions& opt) {
  const int n = s.n;
  const std::size_t V = s.size();
  if (f0.size() != V) throw Error(ErrorCode::BadDimension, "density must have one value per vertex");
  for (double v : f0)
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::NonPositiveF, "density must be positive");
  check_connected(s.mesh);
  const double q = static_cast<double>(n) / (n - 1);
  const bool thm2 = opt.mode == NeumannMode::Theorem2;

  // unscaled source pieces
  const auto gf0 = recovered_gradients(s, f0);
  std::vector<double> t1(V), t2(V), t3(V), bnd(V, 0.0);
  for (std::size_t a = 0; a < V; ++a) {
    const Vec df = frame_components(s.vertex[a], gf0[a]);
    const double H = s.vertex[a].mean_curvature_frame.norm();
    t1[a] = n * std::pow(f0[a], q);
    t2[a] = std::sqrt(df.squaredNorm() + f0[a] * f0[a] * H * H);
    t3[a] = thm2 ? 2.0 * n * opt.b1 * f0[a] : 0.0;
  }
  for (std::size_t e = 0; e < s.mesh.boundary_edges.size(); ++e) {
    const auto& E = s.mesh.boundary_edges[e];
    bnd[E[0]] += 0.5 * s.boundary_length[e] * f0[E[0]];
    bnd[E[1]] += 0.5 * s.boundary_length[e] * f0[E[1]];
  }
  double A = 0.0, B = 0.0, C3 = 0.0, Lb = 0.0;
  for (std::size_t a = 0; a < V; ++a) {
    A += s.lumped_mass[a] * t1[a];
    B += s.lumped_mass[a] * t2[a];
    C3 += s.lumped_mass[a] * t3[a];
    Lb += bnd[a];
  }
  const double target = B + C3 + Lb;
  if (!(A > 0.0) || !(target > 0.0)) {
    throw Error(ErrorCode::CompatibilityUnreachable, "no positive rescaling of f balances the flux");
  }
  NeumannSolution sol;
  sol.scale = std::pow(target / A, n - 1);
  const double c = sol.scale, cq = std::pow(c, q);
  sol.f.resize(V);
  sol.rhs.resize(V);
  Vec b(V);
  for (std::size_t a = 0; a < V; ++a) {
    sol.f[a] = c * f0[a];
    sol.rhs[a] = cq * t1[a] - c * t2[a] - c * t3[a];
    b[a] = c * bnd[a] - s.lumped_mass[a] * sol.rhs[a];
    sol.rhs_integral += s.lumped_mass[a] * sol.rhs[a];
    sol.boundary_flux += c * bnd[a];
  }
  sol.compatibility_gap = std::abs(sol.rhs_integral - sol.boundary_flux) / sol.boundary_flux;
  b.array() -= b.mean();

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * s.mesh.triangles.size());
  for (std::size_t t = 0; t < s.mesh.triangles.size(); ++t) {
    const auto& tri = s.mesh.triangles[t];
    const auto G = basis_gradients(s.mesh, tri, nullptr);
    const double fbar = (sol.f[tri[0]] + sol.f[tri[1]] + sol.f[tri[2]]) / 3.0;
    const Eigen::Matrix3d Kt = fbar * s.tri_area[t] * G.transpose() * s.tri_metric_inverse[t] * G;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(tri[i], tri[j], Kt(i, j));
  }
  Eigen::SparseMatrix<double> K(V, V);
  K.setFromTriplets(trip.begin(), trip.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(opt.tolerance * 1e-2);
  cg.setMaxIterations(opt.max_iterations);
  cg.compute(K);
  Vec u = cg.solve(b);
  sol.iterations = static_cast<int>(cg.iterations());
  double mean = 0.0;
  for (std::size_t a = 0; a < V; ++a) mean += s.lumped_mass[a] * u[a];
  u.array() -= mean / s.area;
  const Vec Ku = K * u;
  const Vec r = Ku - b;
  sol.solver_residual = r.norm() / std::max(b.norm(), 1e-300);
  if (!(sol.solver_residual <= opt.tolerance)) {
    throw Error(ErrorCode::UnconvergedSolver, "conjugate gradient residual " + num(sol.solver_residual));
  }
  double pr = 0.0;
  for (std::size_t a = 0; a < V; ++a) pr += r[a] * r[a] / s.lumped_mass[a];
  sol.pde_residual = std::sqrt(pr);
  sol.u.assign(u.data(), u.data() + V);
  for (std::size_t a = 0; a < V; ++a) sol.divergence_integral += c * bnd[a] - Ku[a];

  const auto gu = recovered_gradients(s, sol.u);
  const auto gf = recovered_gradients(s, sol.f);
  sol.grad_u.resize(V);
  sol.grad_f.resize(V);
  sol.omega.assign(V, 0);
  sol.laplacian.assign(V, std::numeric_limits<double>::quiet_NaN());
  sol.hessian.assign(V, Mat::Zero(n, n));
  for (std::size_t a = 0; a < V; ++a) {
    sol.grad_u[a] = frame_components(s.vertex[a], gu[a]);
    sol.grad_f[a] = frame_components(s.vertex[a], gf[a]);
    if (s.mesh.on_boundary[a]) continue;
    sol.omega[a] = sol.grad_u[a].squaredNorm() < 1.0;
    const double weak_div = -Ku[a] / s.lumped_mass[a];
    sol.laplacian[a] = (weak_div - sol.grad_f[a].dot(sol.grad_u[a])) / sol.f[a];
  }

  // Hessian: quadratic least squares over the 2-ring, covariant correction, trace set to laplacian
  const auto adj = adjacency(s.mesh);
  for (std::size_t a = 0; a < V; ++a) {
    if (s.mesh.on_boundary[a]) continue;
    std::set<int> ring;
    for (int w : adj[a]) {
      ring.insert(w);
      for (int z : adj[w]) ring.insert(z);
    }
    ring.erase(static_cast<int>(a));
    const P2 pa = s.mesh.vertices[a];
    double scale = 0.0;
    for (int w : adj[a]) scale = std::max(scale, (s.mesh.vertices[w] - pa).norm());
    Mat X(ring.size() + 1, 6);
    Vec y(ring.size() + 1);
    int row = 0;
    const auto add = [&](int w) {
      const P2 d = (s.mesh.vertices[w] - pa) / scale;
      X.row(row) << 1.0, d.x(), d.y(), 0.5 * d.x() * d.x(), d.x() * d.y(), 0.5 * d.y() * d.y();
      y[row] = sol.u[w];
      ++row;
    };
    add(static_cast<int>(a));
    for (int w : ring) add(w);
    const Vec coef = X.colPivHouseholderQr().solve(y);
    const P2 du(coef[1] / scale, coef[2] / scale);
    Eigen::Matrix2d hp;
    hp << coef[3], coef[4], coef[4], coef[5];
    hp /= scale * scale;
    const auto& G = s.vertex[a].surface_christoffel;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) hp(i, j) -= G[(k * 2 + i) * 2 + j] * du[k];
    Mat hf = s.vertex[a].coeff.transpose() * hp * s.vertex[a].coeff;
    hf = 0.5 * (hf + hf.transpose()).eval();
    hf.diagonal().array() += (sol.laplacian[a] - hf.trace()) / n;
    sol.hessian[a] = hf;
  }
  return sol;
}

std::vector<Vec> normal_disk_samples(int m, double radius, int count) {
  std::vector<Vec> out;
  if (count <= 0 || m <= 0) return out;
  if (m == 1) {
    for (int k = 0; k < count; ++k) {
      Vec y(1);
      y[0] = count == 1 ? 0.0 : radius * (-1.0 + 2.0 * k / (count - 1));
      out.push_back(y);
    }
    return out;
  }
  if (m == 2) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < count; ++k) {
      const double r = radius * std::sqrt((k + 0.5) / count);
      out.push_back((Vec(2) << r * std::cos(k * golden), r * std::sin(k * golden)).finished());
    }
    return out;
  }
  static const unsigned primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  for (unsigned k = 1; static_cast<int>(out.size()) < count; ++k) {
    Vec y(m);
    for (int i = 0; i < m; ++i) y[i] = 2.0 * radical_inverse(k, primes[i % 16]) - 1.0;
    if (y.squaredNorm() <= 1.0) out.push_back(radius * y);
  }
  return out;
}

LemmaReport lemma_pointwise_check(const ImmersedSubmanifold& s, const NeumannSolution& sol,
                                  int normal_samples, const NeumannOptions& opt) {
  LemmaReport rep;
  rep.mesh_size = s.mesh.h;
  rep.max_value = -std::numeric_limits<double>::infinity();
  const int n = s.n;
  const double shift = opt.mode == NeumannMode::Theorem2 ? 2.0 * n * opt.b1 : 0.0;
  const auto adj = adjacency(s.mesh);
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (!sol.omega[a]) continue;
    ++rep.vertices_checked;
    const double R = std::sqrt(std::max(0.0, 1.0 - sol.grad_u[a].squaredNorm()));
    const double base = sol.laplacian[a] - n * std::pow(sol.f[a], 1.0 / (n - 1)) + shift;
    for (const auto& y : normal_disk_samples(s.m, R, normal_samples)) {
      const double v = base - s.vertex[a].mean_curvature_frame.dot(y);
      ++rep.samples;
      if (v > rep.max_value) {
        rep.max_value = v;
        rep.worst_vertex = static_cast<int>(a);
      }
    }
  }
  if (rep.samples == 0) rep.max_value = 0.0;
  rep.max_positive_part = std::max(0.0, rep.max_value);
  if (rep.worst_vertex >= 0) {
    for (int w : adj[rep.worst_vertex]) rep.boundary_adjacent_worst |= s.mesh.on_boundary[w] != 0;
  }
  return rep;
}

LhsBreakdown functional_lhs(const ImmersedSubmanifold& s, const std::vector<double>& f,
                            NeumannMode mode, double b1) {
  if (f.size() != s.size()) throw Error(ErrorCode::BadDimension, "density must have one value per vertex");
  LhsBreakdown out;
  for (std::size_t t = 0; t < s.mesh.triangles.size(); ++t) {
    const auto& tri = s.mesh.triangles[t];
    const auto G = basis_gradients(s.mesh, tri, nullptr);
    const P2 df = G * Eigen::Vector3d(f[tri[0]], f[tri[1]], f[tri[2]]);
    const double fT = (f[tri[0]] + f[tri[1]] + f[tri[2]]) / 3.0;
    double H = 0.0;
    for (int a : tri) H += s.vertex[a].mean_curvature_frame.norm() / 3.0;
    out.gradient_term += s.tri_area[t] * std::sqrt(df.dot(s.tri_metric_inverse[t] * df) + fT * fT * H * H);
    if (mode == NeumannMode::Theorem2) out.b1_term += 2.0 * s.n * b1 * s.tri_area[t] * fT;
  }
  for (std::size_t e = 0; e < s.mesh.boundary_edges.size(); ++e) {
    const auto& E = s.mesh.boundary_edges[e];
    out.boundary_term += 0.5 * s.boundary_length[e] * (f[E[0]] + f[E[1]]);
  }
  out.total = out.gradient_term + out.b1_term + out.boundary_term;
  return out;
}

double sobolev_constant(int n, int m) {
  return std::pow((n + m) * geom::unit_ball_volume(n + m) / (m * geom::unit_ball_volume(m)), 1.0 / n);
}

RhsBreakdown functional_rhs(const ImmersedSubmanifold& s, const std::vector<double>& f, double theta,
                            NeumannMode mode, const RhsExtras& extras) {
  if (s.m < 2) {
    throw Error(ErrorCode::BadCodimension,
                "the inequality requires codimension m >= 2, got m = " + std::to_string(s.m));
  }
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw Error(ErrorCode::BadDimension, "volume ratio must be positive, got " + num(theta));
  }
  if (f.size() != s.size()) throw Error(ErrorCode::BadDimension, "density must have one value per vertex");
  const int n = s.n, m = s.m;
  RhsBreakdown out;
  out.constant = sobolev_constant(n, m);
  out.theta = theta;
  if (mode == NeumannMode::Theorem2) {
    const double r = (1.0 + extras.b0) / std::exp(2.0 * extras.r0 * extras.b1 + extras.b0);
    out.decay_factor = std::pow(r, static_cast<double>(n + m - 1) / n);
  }
  const double q = static_cast<double>(n) / (n - 1);
  for (std::size_t t = 0; t < s.mesh.triangles.size(); ++t) {
    const auto& tri = s.mesh.triangles[t];
    const double fT = (f[tri[0]] + f[tri[1]] + f[tri[2]]) / 3.0;
    out.f_integral += s.tri_area[t] * std::pow(fT, q);
  }
  out.total = n * out.constant * std::pow(theta, 1.0 / n) * out.decay_factor *
              std::pow(out.f_integral, 1.0 / q);
  return out;
}

double gauge_l2_distance(const ImmersedSubmanifold& s, const std::vector<double>& a,
                         const std::vector<double>& b) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ma += s.lumped_mass[i] * a[i];
    mb += s.lumped_mass[i] * b[i];
  }
  ma /= s.area;
  mb /= s.area;
  double e = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = (a[i] - ma) - (b[i] - mb);
    e += s.lumped_mass[i] * d * d;
  }
  return std::sqrt(e);
}

void write_off(const ImmersedSubmanifold& s, std::ostream& out) {
  out << "nOFF\n" << s.N << "\n" << s.size() << " " << s.mesh.triangles.size() << " 0\n";
  char buf[40];
  for (const auto& v : s.vertex) {
    for (Eigen::Index i = 0; i < v.x.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v.x[i]);
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
  for (const auto& t : s.mesh.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!out) throw Error(ErrorCode::IOError, "mesh export failed");
}

void write_field_csv(const std::vector<double>& values, std::ostream& out) {
  out << "vertex,value\n";
  char buf[40];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    out << i << "," << buf << "\n";
  }
  if (!out) throw Error(ErrorCode::IOError, "field export failed");
}

}  // namespace msv::sub
