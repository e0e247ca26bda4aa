#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "msv/chart_registry.hpp"
#include "msv/comparison_ode.hpp"
#include "msv/discrete_submanifold.hpp"
#include "msv/error.hpp"
#include "msv/geodesic_transport.hpp"
#include "msv/tensor_geometry.hpp"
#include "msv/verifier.hpp"

using namespace msv;
using geom::Mat;
using geom::Vec;

namespace {

constexpr double kPi = std::numbers::pi;

// Pinned tolerances.
constexpr double kFlatRatioTol = 0.02;
constexpr double kFlatSeconds = 60.0;
constexpr double kConstantTol = 1e-12;
constexpr double kLinearProfileTol = 1e-13;
constexpr double kClosedFormTol = 1e-8;
constexpr double kConvergenceFactor = 8.0;
constexpr double kProfileIntegralTol = 1e-6;
constexpr double kJacobiTol = 1e-8;
constexpr double kSlackTol = 1e-6;
constexpr double kSymAnalytic = 1e-10;
constexpr double kSymFd = 1e-6;
constexpr double kRicMeanTol = 1e-8;
constexpr double kSphereRicTol = 1e-5;
constexpr double kNeumannOrder = 1.9;
constexpr double kDivergenceTol = 1e-8;
constexpr double kLemmaConstant = 2.0;
constexpr double kThetaTol = 0.01;
constexpr double kReductionTol = 1e-12;
constexpr double kHemisphereTol = 0.05;
constexpr double kAnnulusTol = 0.03;

struct Outcome {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string config_path(const std::string& name) {
  return std::string(MSV_SOURCE_DIR) + "/configs/" + name;
}

std::string json_of(const verify::Report& r) {
  std::ostringstream out;
  verify::emit_report(r, verify::Format::Json, out);
  return out.str();
}

// Shared with the determinism criterion.
std::string g_flat_json;

Outcome flat_disk_equality() {
  Outcome o;
  const auto s = verify::load_config(config_path("flat_disk.json"));
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = verify::run_verify(s);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  g_flat_json = json_of(r);
  const double ratio = r.get("ratio").value_or(NAN);
  o.require(r.passed(), verify::summary_line(r));
  o.require(std::abs(ratio - 1.0) <= kFlatRatioTol, fmt("ratio=%.6f", ratio));
  o.require(secs < kFlatSeconds, fmt("runtime=%.1fs", secs));
  o.detail = fmt("ratio=%.6f ", ratio) + fmt("runtime=%.1fs", secs) + (o.passed ? "" : " " + o.detail);
  return o;
}

Outcome constant_identity() {
  Outcome o;
  // |B^d| from |B^0| = 1, |B^1| = 2, |B^d| = 2 pi / d |B^{d-2}|
  std::vector<double> ball(13);
  ball[0] = 1.0;
  ball[1] = 2.0;
  for (int d = 2; d < 13; ++d) ball[d] = 2.0 * kPi / d * ball[d - 2];
  double worst = 0.0;
  for (int n = 1; n <= 10; ++n) {
    const double lhs = sub::sobolev_constant(n, 2);
    const double direct = std::pow((n + 2) * ball[n + 2] / (2.0 * ball[2]), 1.0 / n);
    const double rhs = std::pow(ball[n], 1.0 / n);
    worst = std::max({worst, std::abs(lhs - rhs) / rhs, std::abs(direct - rhs) / rhs});
  }
  o.require(worst <= kConstantTol, "mismatch");
  o.detail = fmt("max_rel_err=%.2e", worst) + (o.passed ? "" : " " + o.detail);
  return o;
}

double max_error(const ode::ODETrajectory& tr, const std::function<double(double)>& exact) {
  double e = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) e = std::max(e, std::abs(tr.values[k] - exact(tr.grid[k])));
  return e;
}

Outcome ode_suite() {
  Outcome o;
  const auto zero = ode::solve_h(ode::AsymptoticProfile::zero(), 20.0, 0.01);
  double lin = 0.0;
  for (std::size_t k = 0; k < zero.size(); ++k)
    lin = std::max(lin, std::abs(zero.values[k] - zero.grid[k]) / (1.0 + zero.grid[k]));
  o.require(lin <= kLinearProfileTol, fmt("h=t err=%.2e", lin));

  const auto cosh_err = [](double dt) {
    return max_error(ode::solve_linear_second_order([](double) { return 1.0; }, 1.0, 0.0, 2.0, dt),
                     [](double t) { return std::cosh(t); });
  };
  const auto euler = ode::AsymptoticProfile::unchecked("euler", [](double s) { return 2.0 / ((1 + s) * (1 + s)); });
  const auto euler_exact = [](double t) { return ((1 + t) * (1 + t) - 1 / (1 + t)) / 3.0; };
  const auto euler_err = [&](double dt) { return max_error(ode::solve_h(euler, 2.0, dt), euler_exact); };

  const double ec = cosh_err(0.01);
  const double ee = max_error(ode::solve_h(euler, 5.0, 0.005), euler_exact);
  o.require(ec <= kClosedFormTol, fmt("cosh err=%.2e", ec));
  o.require(ee <= kClosedFormTol, fmt("euler err=%.2e", ee));
  const double fc = cosh_err(0.02) / cosh_err(0.01);
  const double fe = euler_err(0.02) / euler_err(0.01);
  o.require(std::min(fc, fe) >= kConvergenceFactor, fmt("factor=%.2f", std::min(fc, fe)));
  o.detail = fmt("h=t:%.1e ", lin) + fmt("cosh:%.1e ", ec) + fmt("euler:%.1e ", ee) +
             fmt("factors=%.2f/", fc) + fmt("%.2f", fe) + (o.passed ? "" : " " + o.detail);
  return o;
}

Outcome profile_integrals() {
  Outcome o;
  double worst = 0.0;
  for (double l0 : {0.2, 1.0, 3.0}) {
    const auto p = ode::compute_b0_b1({ode::ProfileKind::Power, l0, 3.0});
    worst = std::max({worst, std::abs(p.b0 - l0 / 2), std::abs(p.b1 - l0 / 2)});
  }
  const auto e = ode::compute_b0_b1({ode::ProfileKind::Exponential, 1.0, 0.0});
  worst = std::max({worst, std::abs(e.b0 - 1.0), std::abs(e.b1 - 1.0)});
  o.require(worst <= kProfileIntegralTol, "mismatch");
  o.detail = fmt("max_abs_err=%.2e", worst) + (o.passed ? "" : " " + o.detail);
  return o;
}

Outcome jacobi_closed_form() {
  Outcome o;
  const auto chart = geom::euclidean_chart(4);
  const int n = 2, m = 2;
  const double alpha = 0.7;
  transport::PointData d;
  d.n = n;
  d.m = m;
  d.x = Vec::Zero(4);
  d.x << 0.2, -0.1, 0.4, 0.3;
  d.frame = Mat::Identity(4, 4);
  d.du = Vec(2);
  d.du << 0.3, 0.1;
  d.ybar = Vec(2);
  d.ybar << 0.4, -0.2;
  d.hessian = alpha * Mat::Identity(n, n);
  d.second_fundamental.assign(m, Mat::Zero(n, n));
  d.laplacian = n * alpha;
  const auto sys = transport::evolve_jacobi(chart, transport::make_transport_ray(d, 5.0, 0.01));
  o.require(!sys.conjugate_time, "conjugate point");
  double worst = 0.0;
  for (std::size_t k = 0; k < sys.t.size(); ++k) {
    const double t = sys.t[k];
    if (t < 0.01 - 1e-12) continue;
    const double exact = std::pow(1 + alpha * t, n) * std::pow(t, m);
    worst = std::max(worst, std::abs(sys.det[k] - exact) / exact);
  }
  o.require(worst <= kJacobiTol, fmt("det rel err=%.2e", worst));
  // f^{1/(n-1)} = alpha makes the lemma bound an equality
  const auto rep = transport::det_bound_check(sys, alpha, {});
  double slack = 0.0;
  for (std::size_t k = 0; k < rep.t.size(); ++k) {
    if (rep.t[k] < 0.01 - 1e-12) continue;
    slack = std::max({slack, std::abs(rep.bound_pairing[k] - rep.det[k]) / rep.bound_pairing[k],
                      std::abs(rep.bound_lemma[k] - rep.det[k]) / rep.bound_lemma[k]});
  }
  o.require(rep.passed && slack <= kSlackTol, fmt("slack=%.2e", slack));
  o.detail = fmt("det_rel_err=%.2e ", worst) + fmt("slack=%.2e", slack) + (o.passed ? "" : " " + o.detail);
  return o;
}

Vec random_point(const geom::MetricChart& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec x(c.dim);
  for (int i = 0; i < c.dim; ++i) {
    const double mid = 0.5 * (c.region.lo[i] + c.region.hi[i]);
    x[i] = mid + 0.4 * (c.region.hi[i] - c.region.lo[i]) * u(rng);
  }
  if (c.label == "warped_bump" || c.label == "h_model") x *= 3.0 / std::max(3.0, x.norm());
  if (c.label == "sphere" || c.label == "sphere_product") x.head(2) *= 0.5;
  return x;
}

std::vector<Vec> random_frame(const Mat& g, int count, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Vec> f;
  do {
    f.assign(count, Vec(g.rows()));
    for (auto& v : f)
      for (int i = 0; i < v.size(); ++i) v[i] = z(rng);
  } while (!geom::gram_schmidt(g, f, 1e-6));
  return f;
}

Outcome curvature_suite() {
  Outcome o;
  std::vector<geom::MetricChart> charts = {geom::euclidean_chart(4),
                                           geom::polar2_chart(),
                                           geom::sphere_chart(2, 1.0),
                                           geom::sphere_chart(4, 1.5),
                                           geom::sphere_product_chart(2, 1.0),
                                           geom::warped_bump_chart(4, 0.1),
                                           geom::h_model_chart(4, ode::AsymptoticProfile::exponential(1.0), 5.0)};
  auto fd = geom::sphere_chart(3, 1.0);
  fd.jet = nullptr;
  charts.push_back(fd);

  std::mt19937_64 rng(2024);
  double sym_ratio = 0.0, mean_err = 0.0;
  for (const auto& chart : charts) {
    const double tau = chart.mode() == geom::DerivativeMode::Analytic ? kSymAnalytic : kSymFd;
    for (int i = 0; i < 200; ++i) {
      const auto p = geom::curvature_packet(chart, random_point(chart, rng));
      sym_ratio = std::max(sym_ratio, p.symmetry_defect() / tau);
      if (chart.dim < 3 || i % 10 != 0) continue;
      const auto f = random_frame(p.metric(), chart.dim, rng);
      for (int k = 1; k < chart.dim; ++k) {
        const std::span<const Vec> V(f.data() + 1, k);
        double mean = 0.0;
        for (const auto& e : V) mean += geom::sectional(p, f[0], e) / k;
        mean_err = std::max(mean_err, std::abs(geom::ric_k(p, f[0], V) - mean));
      }
    }
  }
  o.require(sym_ratio <= 1.0, fmt("symmetry defect/tau=%.2f", sym_ratio));
  o.require(mean_err <= kRicMeanTol, fmt("ric_k vs mean=%.2e", mean_err));

  const double R = 1.5;
  const auto sph = geom::sphere_chart(4, R);
  double sph_err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto p = geom::curvature_packet(sph, random_point(sph, rng));
    const auto f = random_frame(p.metric(), 4, rng);
    for (int k = 1; k < 4; ++k)
      sph_err = std::max(sph_err, std::abs(geom::ric_k(p, f[0], std::span<const Vec>(f.data() + 1, k)) - 1 / (R * R)));
  }
  o.require(sph_err <= kSphereRicTol, fmt("sphere ric_k err=%.2e", sph_err));
  o.detail = fmt("sym/tau=%.2e ", sym_ratio) + fmt("ric_k_mean_err=%.2e ", mean_err) +
             fmt("sphere_err=%.2e", sph_err) + (o.passed ? "" : " " + o.detail);
  return o;
}

sub::ImmersedSubmanifold build(const std::string& id, int level, std::map<std::string, double> params = {}) {
  const auto imm = sub::make_immersion({id, std::move(params), level});
  return sub::build_immersion(geom::euclidean_chart(imm.ambient_dim), imm);
}

Outcome neumann_suite() {
  Outcome o;
  std::vector<double> err;
  for (int level = 2; level <= 5; ++level) {
    const auto s = build("flat_disk", level);
    const auto sol = sub::solve_neumann(s, std::vector<double>(s.size(), 1.0));
    std::vector<double> exact(s.size());
    for (std::size_t v = 0; v < s.size(); ++v) exact[v] = 0.5 * s.mesh.vertices[v].squaredNorm();
    err.push_back(sub::gauge_l2_distance(s, sol.u, exact));
  }
  double order = INFINITY;
  for (std::size_t i = 1; i < err.size(); ++i) order = std::min(order, std::log2(err[i - 1] / err[i]));
  o.require(order >= kNeumannOrder, fmt("order=%.3f", order));

  const auto g = build("graph", 4);
  const auto fg = sub::sample_density(g, {"bump", {{"amplitude", 0.8}, {"width", 0.3}}});
  const auto sg = sub::solve_neumann(g, fg);
  const double scale = 1.0 + std::abs(sg.rhs_integral);
  const double div = std::max(std::abs(sg.divergence_integral - sg.rhs_integral),
                              std::abs(sg.boundary_flux - sg.rhs_integral)) / scale;
  o.require(div <= kDivergenceTol, fmt("divergence=%.2e", div));

  double lemma = 0.0;
  for (int level = 3; level <= 5; ++level) {
    const auto s = build("sphere_cap", level);
    const auto f = sub::sample_density(s, {"bump", {{"amplitude", 0.5}, {"width", 0.4}}});
    const auto rep = sub::lemma_pointwise_check(s, sub::solve_neumann(s, f));
    lemma = std::max(lemma, rep.max_positive_part / rep.mesh_size);
  }
  o.require(lemma <= kLemmaConstant, fmt("lemma/h=%.2e", lemma));
  o.detail = fmt("order=%.3f ", order) + fmt("divergence=%.2e ", div) + fmt("lemma/h=%.2e", lemma) +
             (o.passed ? "" : " " + o.detail);
  return o;
}

Outcome avr_suite() {
  Outcome o;
  transport::AvrOptions opt;
  opt.r = 10.0;
  opt.n_dirs = 500;
  const auto est = transport::avr_estimate(geom::euclidean_chart(4), Vec::Zero(4), opt);
  o.require(std::abs(est.theta - 1.0) <= kThetaTol, fmt("theta=%.6f", est.theta));

  const auto t1 = verify::run_verify(verify::load_config(config_path("flat_disk.json")));
  const auto t2 = verify::run_verify(verify::load_config(config_path("flat_disk_theorem2_zero.json")));
  double worst = 0.0;
  int compared = 0;
  for (const auto& [key, v] : t1.scalars) {
    const auto w = t2.get(key);
    if (!w) {
      o.require(false, "missing " + key);
      continue;
    }
    if (std::isnan(v) && std::isnan(*w)) continue;
    worst = std::max(worst, std::abs(*w - v) / std::max(1.0, std::abs(v)));
    ++compared;
  }
  o.require(t1.complete() && t2.complete(), "incomplete report");
  o.require(worst <= kReductionTol, fmt("reduction err=%.2e", worst));
  o.detail = fmt("theta=%.6f ", est.theta) + fmt("scalars=%.0f ", compared) + fmt("reduction_err=%.2e", worst) +
             (o.passed ? "" : " " + o.detail);
  return o;
}

Outcome strict_scenarios() {
  Outcome o;
  const auto h = verify::run_verify(verify::load_config(config_path("hemisphere.json")));
  const double hr = h.get("ratio").value_or(NAN);
  const double h_exact = 3.0 / std::sqrt(2.0);
  o.require(h.passed(), "hemisphere " + verify::summary_line(h));
  o.require(std::abs(hr - h_exact) <= kHemisphereTol * h_exact, fmt("hemisphere ratio=%.5f", hr));

  const auto a = verify::run_isoperimetric(verify::load_config(config_path("flat_annulus.json")));
  const double ar = a.get("ratio").value_or(NAN);
  const double a_exact = std::sqrt(3.0);
  o.require(a.passed(), "annulus " + verify::summary_line(a));
  o.require(std::abs(ar - a_exact) <= kAnnulusTol * a_exact, fmt("annulus ratio=%.5f", ar));
  o.detail = fmt("hemisphere=%.5f ", hr) + fmt("(oracle %.5f) ", h_exact) + fmt("annulus=%.5f ", ar) +
             fmt("(oracle %.5f)", a_exact) + (o.passed ? "" : " " + o.detail);
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto again = json_of(verify::run_verify(verify::load_config(config_path("flat_disk.json"))));
  o.require(!g_flat_json.empty() && again == g_flat_json, "reports differ");
  o.detail = fmt("bytes=%.0f", static_cast<double>(again.size())) + (o.passed ? "" : " " + o.detail);
  return o;
}

}  // namespace

int main() {
  setenv("MSV_THREADS", "1", 1);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"flat-disk equality", flat_disk_equality},
      {"codimension-two constant", constant_identity},
      {"comparison ODE suite", ode_suite},
      {"decay profile integrals", profile_integrals},
      {"flat isotropic Jacobi determinant", jacobi_closed_form},
      {"curvature tensor suite", curvature_suite},
      {"Neumann solver", neumann_suite},
      {"volume ratio and zero-profile reduction", avr_suite},
      {"strict-inequality scenarios", strict_scenarios},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.passed) ++failures;
    std::printf("%s %2zu %s: %s\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
