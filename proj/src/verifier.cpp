#include "msv/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "msv/error.hpp"
#include "msv/geodesic_transport.hpp"
#include "msv/parallel.hpp"

namespace msv::verify {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using sub::NeumannMode;
using geom::Vec;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string g17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

[[noreturn]] void schema(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaError, path + ": " + what);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) schema(path, "expected an object");
}

void allow_keys(const json& j, const std::string& path, const std::set<std::string>& keys) {
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) schema(path + "." + k, "unknown key");
  }
}

double number(const json& j, const std::string& key, double dflt, const std::string& path) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_number()) schema(path + "." + key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) schema(path + "." + key, "must be finite");
  return d;
}

int integer(const json& j, const std::string& key, int dflt, const std::string& path) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) schema(path + "." + key, "expected an integer");
  const auto i = v.get<long long>();
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) {
    schema(path + "." + key, "out of range");
  }
  return static_cast<int>(i);
}

std::uint64_t seed_value(const json& j, const std::string& key, std::uint64_t dflt, const std::string& path) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  schema(path + "." + key, "expected a nonnegative integer");
}

std::string text(const json& j, const std::string& key, const std::string& dflt, const std::string& path) {
  if (!j.contains(key)) return dflt;
  const auto& v = j.at(key);
  if (!v.is_string()) schema(path + "." + key, "expected a string");
  return v.get<std::string>();
}

std::map<std::string, double> params(const json& j, const std::string& path) {
  std::map<std::string, double> out;
  if (!j.contains("params")) return out;
  const auto& p = j.at("params");
  expect_object(p, path + ".params");
  for (const auto& [k, v] : p.items()) {
    if (!v.is_number()) schema(path + ".params." + k, "expected a number");
    out[k] = v.get<double>();
  }
  return out;
}

const json& section(const json& root, const std::string& key, const json& empty) {
  if (!root.contains(key)) return empty;
  expect_object(root.at(key), "$." + key);
  return root.at(key);
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) schema(path, what);
}

std::string profile_kind_name(ode::ProfileKind k) {
  switch (k) {
    case ode::ProfileKind::Zero: return "zero";
    case ode::ProfileKind::Power: return "power";
    case ode::ProfileKind::Exponential: return "exponential";
    case ode::ProfileKind::Unchecked: return "unchecked";
  }
  return "unchecked";
}

// Canonical JSON of every validated field, defaults filled in.
json canonical_json(const Scenario& s) {
  json j;
  j["mode"] = s.mode == NeumannMode::Theorem1 ? "theorem1" : "theorem2";
  j["chart"]["id"] = s.chart.id;
  j["chart"]["params"] = s.chart.params;
  j["chart"]["hypothesis"] = s.hypothesis == Hypothesis::RicKNonneg ? "ric_k_nonneg" : "asymptotic";
  if (s.profile) {
    j["chart"]["profile"] = {{"kind", profile_kind_name(s.profile->kind)},
                             {"lambda0", s.profile->lambda0},
                             {"p", s.profile->p}};
  }
  j["immersion"] = {{"id", s.immersion.id}, {"params", s.immersion.params},
                    {"refinement", s.immersion.refinement}};
  j["density"] = {{"id", s.density.id}, {"params", s.density.params}};
  j["rays"] = {{"count", s.rays.count},     {"normal_samples", s.rays.normal_samples},
               {"horizon", s.rays.horizon}, {"dt", s.rays.dt},
               {"seed", s.rays.seed}};
  j["avr"] = {{"r", s.avr.r}, {"n_dirs", s.avr.n_dirs}, {"seed", s.avr.seed}, {"dt", s.avr.dt}};
  j["audit"] = {{"points", s.audit.points}, {"frames", s.audit.frames}, {"seed", s.audit.seed}};
  j["lemma"] = {{"normal_samples", s.lemma_samples}, {"constant", s.tol.lemma_constant}};
  j["tolerances"] = {{"ineq", s.tol.ineq},
                     {"riccati", s.tol.riccati},
                     {"det_relative", s.tol.det_relative},
                     {"orthogonality", s.tol.orthogonality},
                     {"curvature", s.tol.curvature},
                     {"compatibility", s.tol.compatibility},
                     {"divergence", s.tol.divergence},
                     {"minimal", s.tol.minimal}};
  return j;
}

void refresh_hash(Scenario& s) {
  s.canonical = canonical_json(s).dump();
  s.config_hash = fnv1a64(s.canonical);
}

// --- pipeline --------------------------------------------------------------

struct Context {
  const Scenario& s;
  geom::MetricChart chart;
  std::optional<ode::AsymptoticProfile> profile;
  sub::ImmersedSubmanifold sigma;
  std::vector<double> f;
  sub::NeumannOptions nopt;
  sub::NeumannSolution sol;
  sub::LemmaReport lemma;
};

template <class F>
bool stage(Report& r, const char* name, F&& fn) {
  try {
    fn();
    return true;
  } catch (const Error& e) {
    r.failed_stage = name;
    r.failure = e.what();
    return false;
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic choice of `count` entries, returned in ascending order.
std::vector<int> choose(std::vector<int> pool, int count, std::uint64_t seed) {
  std::uint64_t state = splitmix64(seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    state = splitmix64(state);
    std::swap(pool[i - 1], pool[state % i]);
  }
  if (static_cast<int>(pool.size()) > count) pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct RayOutcome {
  int vertex = -1;
  int sample = -1;
  std::string error;
  double riccati_tangent = kNaN;
  double riccati_normal = kNaN;
  bool riccati_ok = false;
  double slack_pairing = kNaN;
  double slack_lemma = kNaN;
  double slack_b = kNaN;
  bool lemma_hypothesis = true;
  bool det_passed = false;
  double envelope_min = kNaN;
  bool envelope_ok = true;
  bool conjugate = false;
  Table table;
};

RayOutcome run_ray_once(const Context& c, int a, int sample, const Vec& y, bool want_table, double dt,
                        std::optional<ErrorCode>& code) {
  const Scenario& s = c.s;
  const bool asym = s.mode == NeumannMode::Theorem2;
  RayOutcome out;
  out.vertex = a;
  out.sample = sample;
  try {
    const auto& vg = c.sigma.vertex[a];
    transport::PointData pd;
    pd.n = c.sigma.n;
    pd.m = c.sigma.m;
    pd.x = vg.x;
    pd.frame.resize(c.sigma.N, c.sigma.N);
    pd.frame << vg.tangent, vg.normal;
    pd.du = c.sol.grad_u[a];
    pd.ybar = y;
    pd.hessian = c.sol.hessian[a];
    pd.second_fundamental = vg.second_fundamental;
    pd.laplacian = c.sol.laplacian[a];
    double kink = -1.0;
    const double speed = std::sqrt(pd.du.squaredNorm() + y.squaredNorm());
    if (asym && !c.profile->is_zero() && speed > 0.0 && c.chart.origin_distance) {
      kink = c.chart.origin_distance(pd.x) / speed;
    }
    const auto ray = transport::make_transport_ray(pd, s.rays.horizon, dt, kink);
    const auto sys = transport::evolve_jacobi(c.chart, ray);
    const auto ric = transport::riccati_trace_residual(sys, s.tol.riccati, false);
    out.riccati_tangent = ric.max_tangent;
    out.riccati_normal = ric.max_normal;
    out.riccati_ok = ric.ok;
    out.conjugate = sys.conjugate_time.has_value();

    transport::DetBoundOptions o;
    o.lemma_tolerance = c.lemma.max_positive_part;
    o.relative_tolerance = s.tol.det_relative;
    o.throw_on_violation = false;
    std::optional<ode::RayComparison> comp;
    if (asym) {
      const auto lam = transport::lambda_along(c.chart, sys, *c.profile, transport::DistanceMode::Surrogate);
      comp = ode::integrate_ray_comparison(lam, pd.n, pd.m, ray.speed_a, ray.cos2_s, sys.t.back(), sys.step);
      o.mode = transport::CurvatureMode::Asymptotic;
      o.b0 = s.b0;
      o.b1 = s.b1;
      o.r0 = c.sigma.r0;
      o.comparison = &*comp;
      const auto env = ode::envelope_check(*comp, s.b0, s.b1, c.sigma.r0, ode::kOdeTolerance, false);
      out.envelope_min = env.min_slack;
      out.envelope_ok = !env.violated;
    }
    const auto det = transport::det_bound_check(sys, c.sol.f[a], o);
    out.slack_pairing = det.min_slack_pairing;
    out.slack_lemma = det.min_slack_lemma;
    out.slack_b = asym ? det.min_slack_b : kNaN;
    out.lemma_hypothesis = det.lemma_hypothesis;
    out.det_passed = det.passed;

    if (want_table) {
      Table& t = out.table;
      char name[64];
      std::snprintf(name, sizeof name, "ray_v%05d_y%02d", a, sample);
      t.name = name;
      t.columns = {"t", "det_P", "bound_pairing", "slack_pairing", "bound_lemma",
                   "trQ_tangent", "trQ_normal", "trS_tangent", "trS_normal"};
      if (asym) {
        t.columns.insert(t.columns.end(), {"bound_b", "psi", "psi_tilde"});
      }
      const auto traces = transport::partial_traces_S(sys);
      std::map<double, std::pair<double, double>> trq;
      for (std::size_t j = 0; j < ric.t.size(); ++j) {
        trq[ric.t[j]] = {ric.trace_q_tangent[j], ric.trace_q_normal[j]};
      }
      std::optional<ode::ODETrajectory> psi;
      if (asym) psi = transport::combined_psi(*comp, ray.pairing(), pd.n);
      for (std::size_t j = 0; j < det.t.size(); ++j) {
        const std::size_t k = j + 1;  // det samples start at grid index 1
        const double bound = det.bound_pairing[j];
        std::vector<double> row = {det.t[j], det.det[j], bound,
                                   bound != 0.0 ? (bound - det.det[j]) / std::abs(bound) : kNaN,
                                   det.bound_lemma.empty() ? kNaN : det.bound_lemma[j]};
        const auto q = trq.find(det.t[j]);
        row.push_back(q == trq.end() ? kNaN : q->second.first);
        row.push_back(q == trq.end() ? kNaN : q->second.second);
        row.push_back(traces.tangent[k]);
        row.push_back(traces.normal[k]);
        if (asym) {
          row.push_back(det.bound_b[j]);
          row.push_back(psi->values[k]);
          row.push_back(comp->psi_tilde.values[k]);
        }
        t.rows.push_back(std::move(row));
      }
    }
  } catch (const Error& e) {
    out.error = e.what();
    code = e.code();
  }
  return out;
}

// Halves the step while an ODE solve misses its tolerance.
RayOutcome run_ray(const Context& c, int a, int sample, const Vec& y, bool want_table) {
  double dt = c.s.rays.dt;
  for (int attempt = 0;; ++attempt, dt *= 0.5) {
    std::optional<ErrorCode> code;
    RayOutcome out = run_ray_once(c, a, sample, y, want_table, dt, code);
    if (code != ErrorCode::UnconvergedODE || attempt == 3) return out;
  }
}

std::vector<RayOutcome> run_rays(const Context& c, bool want_tables) {
  const Scenario& s = c.s;
  std::vector<int> omega;
  for (std::size_t a = 0; a < c.sigma.size(); ++a)
    if (c.sol.omega[a]) omega.push_back(static_cast<int>(a));
  if (!(s.rays.horizon > 0.0)) return {};
  const auto chosen = choose(omega, s.rays.count, s.rays.seed);
  struct Job {
    int vertex;
    int sample;
    Vec y;
  };
  std::vector<Job> jobs;
  for (int a : chosen) {
    const double R = std::sqrt(std::max(0.0, 1.0 - c.sol.grad_u[a].squaredNorm()));
    const auto ys = sub::normal_disk_samples(c.sigma.m, R, s.rays.normal_samples);
    for (std::size_t i = 0; i < ys.size(); ++i) jobs.push_back({a, static_cast<int>(i), ys[i]});
  }
  std::vector<RayOutcome> out(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), env_threads(), [&](int i) {
    out[i] = run_ray(c, jobs[i].vertex, jobs[i].sample, jobs[i].y, want_tables);
  });
  return out;
}

void add_check(Report& r, const std::string& name, bool passed, double value, double threshold,
               const std::string& claim) {
  r.checks.push_back({name, passed, value, threshold, claim});
}

void base_provenance(Report& r, const Scenario& s) {
  r.mode = s.mode == NeumannMode::Theorem1 ? "theorem1" : "theorem2";
  r.provenance = {{"config_hash", hex64(s.config_hash)},
                  {"chart", s.chart.id},
                  {"hypothesis", s.hypothesis == Hypothesis::RicKNonneg ? "ric_k_nonneg" : "asymptotic"},
                  {"immersion", s.immersion.id},
                  {"refinement", std::to_string(s.immersion.refinement)},
                  {"density", s.density.id},
                  {"ray_seed", std::to_string(s.rays.seed)},
                  {"avr_seed", std::to_string(s.avr.seed)},
                  {"audit_seed", std::to_string(s.audit.seed)},
                  {"tau_ineq", g17(s.tol.ineq)},
                  {"lemma_constant", g17(s.tol.lemma_constant)}};
  if (s.profile) r.provenance.emplace_back("profile", profile_kind_name(s.profile->kind));
}

bool setup(Report& r, Context& c, bool unit_density) {
  const Scenario& s = c.s;
  if (!stage(r, "chart", [&] {
        c.chart = geom::make_chart(s.chart);
        if (s.profile) c.profile = ode::AsymptoticProfile::from_spec(*s.profile);
      }))
    return false;
  if (!stage(r, "immersion", [&] {
        c.sigma = sub::build_immersion(c.chart, sub::make_immersion(s.immersion));
      }))
    return false;
  r.set("n", c.sigma.n);
  r.set("m", c.sigma.m);
  r.set("k", s.k);
  r.set("vertices", static_cast<double>(c.sigma.size()));
  r.set("triangles", static_cast<double>(c.sigma.mesh.triangles.size()));
  r.set("mesh_h", c.sigma.mesh.h);
  r.set("area", c.sigma.area);
  r.set("boundary_length", c.sigma.boundary_measure);
  r.set("max_mean_curvature", c.sigma.max_mean_curvature);
  r.set("orthogonality_defect", c.sigma.orthogonality_defect);
  if (s.mode == NeumannMode::Theorem2) {
    r.set("b0", s.b0);
    r.set("b1", s.b1);
    r.set("r0", c.sigma.r0);
  }
  add_check(r, "orthogonality", c.sigma.orthogonality_defect <= s.tol.orthogonality,
            c.sigma.orthogonality_defect, s.tol.orthogonality,
            "mean curvature vector is normal to the surface");
  return stage(r, "density", [&] {
    c.f = unit_density ? std::vector<double>(c.sigma.size(), 1.0) : sub::sample_density(c.sigma, s.density);
  });
}

double estimate_theta(const Context& c, Report& r) {
  const Scenario& s = c.s;
  transport::AvrOptions o;
  o.r = s.avr.r;
  o.n_dirs = s.avr.n_dirs;
  o.seed = s.avr.seed;
  o.dt = s.avr.dt;
  std::optional<ode::QuinticHermite> h;
  if (s.mode == NeumannMode::Theorem2) {
    const auto& prof = *c.profile;
    h.emplace(ode::solve_h(prof, 1.05 * s.avr.r + 1.0, 1e-3), [prof](double t) { return prof(t); });
    o.mode = transport::AvrMode::ThetaH;
    o.h = &*h;
  }
  const auto est = transport::avr_estimate(c.chart, Vec::Zero(c.chart.dim), o);
  r.set("theta", est.theta);
  r.set("theta_std_error", est.std_error);
  r.set("theta_truncated", est.truncated_at_conjugate);
  if (!est.caveat.empty()) r.provenance.emplace_back("theta_caveat", est.caveat);
  return est.theta;
}

Report run_pipeline(const Scenario& s, bool iso, std::vector<Table>* tables) {
  Report r;
  r.command = tables ? "ray-audit" : (iso ? "isoperimetric" : "verify");
  base_provenance(r, s);
  Context c{s, {}, {}, {}, {}, {}, {}, {}};
  c.nopt.mode = s.mode;
  c.nopt.b1 = s.b1;
  if (!setup(r, c, iso)) return r;
  if (iso && c.sigma.max_mean_curvature > s.tol.minimal) {
    throw Error(ErrorCode::NotMinimal, "max |H| = " + g17(c.sigma.max_mean_curvature) + " exceeds " +
                                           g17(s.tol.minimal) + "; isoperimetric runs need a minimal immersion");
  }

  if (!stage(r, "neumann", [&] { c.sol = sub::solve_neumann(c.sigma, c.f, c.nopt); })) return r;
  r.set("neumann_scale", c.sol.scale);
  r.set("solver_residual", c.sol.solver_residual);
  r.set("compatibility_gap", c.sol.compatibility_gap);
  r.set("pde_residual", c.sol.pde_residual);
  r.set("cg_iterations", c.sol.iterations);
  r.set("divergence_integral", c.sol.divergence_integral);
  r.set("rhs_integral", c.sol.rhs_integral);
  r.set("boundary_flux", c.sol.boundary_flux);
  const double omega = static_cast<double>(std::count(c.sol.omega.begin(), c.sol.omega.end(), 1));
  r.set("omega_vertices", omega);
  add_check(r, "neumann_solver", c.sol.solver_residual <= c.nopt.tolerance, c.sol.solver_residual,
            c.nopt.tolerance, "Neumann problem solved to the linear-solver tolerance");
  add_check(r, "compatibility", c.sol.compatibility_gap <= s.tol.compatibility, c.sol.compatibility_gap,
            s.tol.compatibility, "rescaled density balances the boundary flux");
  const double div_gap = std::abs(c.sol.divergence_integral - c.sol.rhs_integral) /
                         (1.0 + std::abs(c.sol.rhs_integral));
  add_check(r, "divergence_identity", div_gap <= s.tol.divergence, div_gap, s.tol.divergence,
            "discrete divergence theorem for the weak form");

  if (!stage(r, "lemma", [&] {
        c.lemma = sub::lemma_pointwise_check(c.sigma, c.sol, s.lemma_samples, c.nopt);
      }))
    return r;
  r.set("lemma_max_positive_part", c.lemma.max_positive_part);
  r.set("lemma_max_value", c.lemma.max_value);
  r.set("lemma_samples", c.lemma.samples);
  const double lemma_tau = s.tol.lemma_constant * c.lemma.mesh_size;
  add_check(r, "lemma", c.lemma.max_positive_part <= lemma_tau, c.lemma.max_positive_part, lemma_tau,
            "pointwise Laplacian bound on the contact set");
  if (c.lemma.boundary_adjacent_worst) r.provenance.emplace_back("lemma_note", "worst vertex is boundary-adjacent");

  if (!tables) {
    geom::RicKAudit audit;
    if (!stage(r, "curvature_audit", [&] {
          std::function<double(const Vec&)> floor;
          if (c.profile && c.chart.origin_distance) {
            const auto prof = *c.profile;
            const auto dist = c.chart.origin_distance;
            floor = [prof, dist](const Vec& x) { return prof(dist(x)); };
          }
          audit = geom::min_ric_k_sample(c.chart, s.k, s.audit.points, s.audit.frames, s.audit.seed, floor);
        }))
      return r;
    r.set("curvature_min_ric_k", audit.min_ric_k);
    r.set("curvature_min_margin", audit.min_margin);
    add_check(r, "curvature_hypothesis", audit.min_margin >= -s.tol.curvature, audit.min_margin,
              -s.tol.curvature, "sampled intermediate Ricci curvature meets the declared lower bound");
  }

  std::vector<RayOutcome> rays;
  if (!stage(r, "rays", [&] { rays = run_rays(c, tables != nullptr); })) return r;
  int completed = 0, conj = 0;
  bool ric_ok = true, det_ok = true, env_ok = true;
  double ric_t = 0.0, ric_n = 0.0, sp = kNaN, sl = kNaN, sb = kNaN, env = kNaN;
  const auto min_into = [](double& acc, double v) {
    if (std::isnan(v)) return;
    acc = std::isnan(acc) ? v : std::min(acc, v);
  };
  std::string first_error;
  for (auto& o : rays) {
    if (!o.error.empty()) {
      if (first_error.empty()) first_error = o.error;
      continue;
    }
    ++completed;
    conj += o.conjugate;
    ric_ok = ric_ok && o.riccati_ok;
    det_ok = det_ok && o.det_passed;
    env_ok = env_ok && o.envelope_ok;
    ric_t = std::max(ric_t, o.riccati_tangent);
    ric_n = std::max(ric_n, o.riccati_normal);
    min_into(sp, o.slack_pairing);
    if (o.lemma_hypothesis) min_into(sl, o.slack_lemma);
    min_into(sb, o.slack_b);
    min_into(env, o.envelope_min);
    if (tables) tables->push_back(std::move(o.table));
  }
  r.set("rays", static_cast<double>(rays.size()));
  r.set("rays_completed", completed);
  r.set("conjugate_rays", conj);
  r.set("riccati_max_tangent", ric_t);
  r.set("riccati_max_normal", ric_n);
  r.set("det_min_slack_pairing", sp);
  r.set("det_min_slack_lemma", sl);
  if (s.mode == NeumannMode::Theorem2) {
    r.set("det_min_slack_b", sb);
    r.set("envelope_min_slack", env);
  }
  if (!first_error.empty()) r.provenance.emplace_back("ray_error", first_error);
  if (rays.empty()) r.provenance.emplace_back("rays_summary", "no samples");
  add_check(r, "rays_completed", completed == static_cast<int>(rays.size()), completed,
            static_cast<double>(rays.size()), "every sampled transport ray integrated inside the chart");
  add_check(r, "riccati", ric_ok, std::max(ric_t, ric_n), s.tol.riccati,
            "trace Riccati inequalities along transport rays");
  add_check(r, "det_bound", det_ok, sp, -s.tol.det_relative,
            "Jacobian determinant bounded by the comparison function");
  if (s.mode == NeumannMode::Theorem2) {
    add_check(r, "envelope", env_ok, env, -ode::kOdeTolerance,
              "comparison solutions stay under their explicit envelopes");
  }
  if (tables) return r;

  double theta = 0.0;
  if (!stage(r, "avr", [&] { theta = estimate_theta(c, r); })) return r;
  const double se = *r.get("theta_std_error");

  const int n = c.sigma.n, m = c.sigma.m;
  double lhs = 0.0, rhs = 0.0;
  if (!stage(r, "functionals", [&] {
        const auto L = sub::functional_lhs(c.sigma, c.f, s.mode, s.b1);
        const auto R = sub::functional_rhs(c.sigma, c.f, theta, s.mode, {s.b0, s.b1, c.sigma.r0});
        r.set("lhs_gradient", L.gradient_term);
        r.set("lhs_b1", L.b1_term);
        r.set("lhs_boundary", L.boundary_term);
        r.set("lhs_total", L.total);
        r.set("rhs_constant", R.constant);
        r.set("rhs_theta", R.theta);
        r.set("rhs_decay_factor", R.decay_factor);
        r.set("rhs_f_integral", R.f_integral);
        r.set("rhs_total", R.total);
        lhs = L.total;
        rhs = R.total;
        if (iso) {
          // |boundary| >= n |Sigma|^{(n-1)/n} [K theta^{1/n} F - 2 b1 |Sigma|^{1/n}]
          const double A = c.sigma.area;
          const double bracket = R.constant * std::pow(theta, 1.0 / n) * R.decay_factor -
                                 2.0 * s.b1 * std::pow(A, 1.0 / n);
          lhs = c.sigma.boundary_measure;
          rhs = n * std::pow(A, (n - 1.0) / n) * bracket;
          r.set("iso_lhs", lhs);
          r.set("iso_bracket", bracket);
          r.set("iso_rhs", rhs);
        }
      }))
    return r;
  (void)m;
  const double tau = s.tol.ineq + 2.0 * se / (n * theta);
  r.set("tau_effective", tau);
  if (rhs <= 0.0) {
    r.vacuous = true;
    r.set("ratio", kNaN);
    r.inequality_passed = true;
    r.provenance.emplace_back("inequality_note", "vacuous bound: right-hand side is not positive");
    add_check(r, "inequality", true, lhs, rhs, "inequality holds (vacuous bound)");
    return r;
  }
  const double ratio = lhs / rhs;
  r.set("ratio", ratio);
  r.inequality_passed = ratio >= 1.0 - tau;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Scenario parse_config(const std::string& text_in) {
  json root;
  try {
    root = json::parse(text_in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("$: malformed JSON (") + e.what() + ")");
  }
  expect_object(root, "$");
  allow_keys(root, "$", {"description", "mode", "chart", "immersion", "density", "rays", "avr", "audit",
                         "lemma", "tolerances"});
  if (root.contains("description") && !root.at("description").is_string()) {
    schema("$.description", "expected a string");
  }
  const json empty = json::object();
  Scenario s;

  const std::string mode = text(root, "mode", "theorem1", "$");
  if (mode == "theorem1") {
    s.mode = NeumannMode::Theorem1;
  } else if (mode == "theorem2") {
    s.mode = NeumannMode::Theorem2;
  } else {
    schema("$.mode", "expected \"theorem1\" or \"theorem2\"");
  }

  if (!root.contains("chart")) schema("$.chart", "required");
  const json& ch = section(root, "chart", empty);
  allow_keys(ch, "$.chart", {"id", "params", "hypothesis", "profile"});
  if (!ch.contains("id")) schema("$.chart.id", "required");
  s.chart.id = text(ch, "id", "", "$.chart");
  s.chart.params = params(ch, "$.chart");
  const std::string hyp = text(ch, "hypothesis", mode == "theorem2" ? "asymptotic" : "ric_k_nonneg", "$.chart");
  if (hyp == "ric_k_nonneg") {
    s.hypothesis = Hypothesis::RicKNonneg;
  } else if (hyp == "asymptotic") {
    s.hypothesis = Hypothesis::Asymptotic;
  } else {
    schema("$.chart.hypothesis", "expected \"ric_k_nonneg\" or \"asymptotic\"");
  }
  if (ch.contains("profile")) {
    const json& p = ch.at("profile");
    expect_object(p, "$.chart.profile");
    allow_keys(p, "$.chart.profile", {"kind", "lambda0", "p"});
    ode::ProfileSpec spec;
    const std::string kind = text(p, "kind", "zero", "$.chart.profile");
    if (kind == "zero") {
      spec.kind = ode::ProfileKind::Zero;
    } else if (kind == "power") {
      spec.kind = ode::ProfileKind::Power;
    } else if (kind == "exponential") {
      spec.kind = ode::ProfileKind::Exponential;
    } else {
      schema("$.chart.profile.kind", "expected \"zero\", \"power\" or \"exponential\"");
    }
    spec.lambda0 = number(p, "lambda0", 0.0, "$.chart.profile");
    spec.p = number(p, "p", 3.0, "$.chart.profile");
    s.profile = spec;
    s.chart.profile = spec;
  }
  if (s.mode == NeumannMode::Theorem2 && s.hypothesis != Hypothesis::Asymptotic) {
    schema("$.chart.hypothesis", "theorem2 needs the asymptotic hypothesis");
  }
  if (s.mode == NeumannMode::Theorem1 && s.hypothesis != Hypothesis::RicKNonneg) {
    schema("$.chart.hypothesis", "theorem1 needs the ric_k_nonneg hypothesis");
  }
  if (s.hypothesis == Hypothesis::Asymptotic && !s.profile) {
    schema("$.chart.profile", "required by the asymptotic hypothesis");
  }
  if (s.profile) {
    // surfaces DivergentIntegral and NegativeLambda before any work is done
    const auto b = ode::compute_b0_b1(*s.profile);
    s.b0 = b.b0;
    s.b1 = b.b1;
  }

  if (!root.contains("immersion")) schema("$.immersion", "required");
  const json& im = section(root, "immersion", empty);
  allow_keys(im, "$.immersion", {"id", "params", "refinement"});
  if (!im.contains("id")) schema("$.immersion.id", "required");
  s.immersion.id = text(im, "id", "", "$.immersion");
  s.immersion.params = params(im, "$.immersion");
  s.immersion.refinement = integer(im, "refinement", 4, "$.immersion");
  require(s.immersion.refinement >= 0 && s.immersion.refinement <= 8, "$.immersion.refinement",
          "must be in 0..8");

  const json& de = section(root, "density", empty);
  allow_keys(de, "$.density", {"id", "params"});
  s.density.id = text(de, "id", "constant", "$.density");
  s.density.params = params(de, "$.density");

  const json& ra = section(root, "rays", empty);
  allow_keys(ra, "$.rays", {"count", "normal_samples", "horizon", "dt", "seed"});
  s.rays.count = integer(ra, "count", s.rays.count, "$.rays");
  s.rays.normal_samples = integer(ra, "normal_samples", s.rays.normal_samples, "$.rays");
  s.rays.horizon = number(ra, "horizon", s.rays.horizon, "$.rays");
  s.rays.dt = number(ra, "dt", s.rays.dt, "$.rays");
  s.rays.seed = seed_value(ra, "seed", s.rays.seed, "$.rays");
  require(s.rays.count >= 0, "$.rays.count", "must be >= 0");
  require(s.rays.normal_samples >= 1, "$.rays.normal_samples", "must be >= 1");
  require(s.rays.horizon >= 0.0, "$.rays.horizon", "must be >= 0");
  require(s.rays.dt > 0.0, "$.rays.dt", "must be > 0");

  const json& av = section(root, "avr", empty);
  allow_keys(av, "$.avr", {"r", "n_dirs", "seed", "dt"});
  s.avr.r = number(av, "r", s.avr.r, "$.avr");
  s.avr.n_dirs = integer(av, "n_dirs", s.avr.n_dirs, "$.avr");
  s.avr.seed = seed_value(av, "seed", s.avr.seed, "$.avr");
  s.avr.dt = number(av, "dt", s.avr.dt, "$.avr");
  require(s.avr.r > 0.0, "$.avr.r", "must be > 0");
  require(s.avr.n_dirs >= 100, "$.avr.n_dirs", "must be >= 100");
  require(s.avr.dt >= 0.0, "$.avr.dt", "must be >= 0");

  const json& au = section(root, "audit", empty);
  allow_keys(au, "$.audit", {"points", "frames", "seed"});
  s.audit.points = integer(au, "points", s.audit.points, "$.audit");
  s.audit.frames = integer(au, "frames", s.audit.frames, "$.audit");
  s.audit.seed = seed_value(au, "seed", s.audit.seed, "$.audit");
  require(s.audit.points >= 1 && s.audit.frames >= 1, "$.audit", "points and frames must be >= 1");

  const json& le = section(root, "lemma", empty);
  allow_keys(le, "$.lemma", {"normal_samples", "constant"});
  s.lemma_samples = integer(le, "normal_samples", s.lemma_samples, "$.lemma");
  s.tol.lemma_constant = number(le, "constant", s.tol.lemma_constant, "$.lemma");
  require(s.lemma_samples >= 1, "$.lemma.normal_samples", "must be >= 1");
  require(s.tol.lemma_constant > 0.0, "$.lemma.constant", "must be > 0");

  const json& to = section(root, "tolerances", empty);
  allow_keys(to, "$.tolerances", {"ineq", "riccati", "det_relative", "orthogonality", "curvature",
                                  "compatibility", "divergence", "minimal"});
  const auto tol = [&](const char* key, double& field) {
    field = number(to, key, field, "$.tolerances");
    require(field >= 0.0, std::string("$.tolerances.") + key, "must be >= 0");
  };
  tol("ineq", s.tol.ineq);
  tol("riccati", s.tol.riccati);
  tol("det_relative", s.tol.det_relative);
  tol("orthogonality", s.tol.orthogonality);
  tol("curvature", s.tol.curvature);
  tol("compatibility", s.tol.compatibility);
  tol("divergence", s.tol.divergence);
  tol("minimal", s.tol.minimal);

  // registry lookups and dimension bookkeeping
  const auto chart = geom::make_chart(s.chart);
  const auto imm = sub::make_immersion(s.immersion);
  sub::make_density(s.density);
  if (chart.dim != imm.ambient_dim) {
    schema("$.immersion", "immersion '" + imm.id + "' maps into dimension " + std::to_string(imm.ambient_dim) +
                              " but chart '" + s.chart.id + "' has dimension " + std::to_string(chart.dim));
  }
  s.n = 2;
  s.m = chart.dim - s.n;
  if (s.m < 2) {
    throw Error(ErrorCode::BadCodimension, "the inequality needs codimension m >= 2; this scenario has m = " +
                                               std::to_string(s.m));
  }
  s.k = std::min(s.n - 1, s.m - 1);
  refresh_hash(s);
  return s;
}

Scenario load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IOError, "cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void override_seed(Scenario& s, std::uint64_t seed) {
  s.rays.seed = s.avr.seed = s.audit.seed = seed;
  refresh_hash(s);
}

void override_refinement(Scenario& s, int level) {
  if (level < 0 || level > 8) throw Error(ErrorCode::SchemaError, "--refine: must be in 0..8");
  s.immersion.refinement = level;
  refresh_hash(s);
}

// ---------------------------------------------------------------------------

void Report::set(const std::string& key, double value) {
  for (auto& [k, v] : scalars) {
    if (k == key) {
      v = value;
      return;
    }
  }
  scalars.emplace_back(key, value);
}

std::optional<double> Report::get(const std::string& key) const {
  for (const auto& [k, v] : scalars)
    if (k == key) return v;
  return std::nullopt;
}

bool Report::checks_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

bool Report::passed() const { return complete() && checks_passed() && inequality_passed.value_or(true); }

int Report::exit_code() const {
  if (!complete() || !checks_passed()) return 3;
  if (inequality_passed && !*inequality_passed) return 2;
  return 0;
}

Report run_verify(const Scenario& s) { return run_pipeline(s, false, nullptr); }

Report run_isoperimetric(const Scenario& s) { return run_pipeline(s, true, nullptr); }

RayAudit run_ray_audit(const Scenario& s) {
  RayAudit out;
  out.summary = run_pipeline(s, false, &out.rays);
  return out;
}

Report run_avr(const Scenario& s) {
  Report r;
  r.command = "avr";
  base_provenance(r, s);
  Context c{s, {}, {}, {}, {}, {}, {}, {}};
  if (!stage(r, "chart", [&] {
        c.chart = geom::make_chart(s.chart);
        if (s.profile) c.profile = ode::AsymptoticProfile::from_spec(*s.profile);
      }))
    return r;
  r.set("r", s.avr.r);
  r.set("n_dirs", s.avr.n_dirs);
  stage(r, "avr", [&] { estimate_theta(c, r); });
  return r;
}

Report run_curvature_audit(const Scenario& s) {
  Report r;
  r.command = "curvature-audit";
  base_provenance(r, s);
  stage(r, "curvature_audit", [&] {
    const auto chart = geom::make_chart(s.chart);
    std::function<double(const Vec&)> floor;
    if (s.profile && chart.origin_distance) {
      const auto prof = ode::AsymptoticProfile::from_spec(*s.profile);
      const auto dist = chart.origin_distance;
      floor = [prof, dist](const Vec& x) { return prof(dist(x)); };
    }
    const auto a = geom::min_ric_k_sample(chart, s.k, s.audit.points, s.audit.frames, s.audit.seed, floor);
    r.set("k", s.k);
    r.set("samples", a.samples);
    r.set("min_ric_k", a.min_ric_k);
    r.set("min_margin", a.min_margin);
    for (Eigen::Index i = 0; i < a.argmin.size(); ++i) r.set("argmin_" + std::to_string(i), a.argmin[i]);
    add_check(r, "curvature_hypothesis", a.min_margin >= -s.tol.curvature, a.min_margin, -s.tol.curvature,
              "sampled intermediate Ricci curvature meets the declared lower bound");
  });
  return r;
}

// ---------------------------------------------------------------------------

Format parse_format(const std::string& name) {
  if (name == "json") return Format::Json;
  if (name == "csv") return Format::Csv;
  if (name == "text") return Format::Text;
  throw Error(ErrorCode::SchemaError, "--format: expected json, csv or text");
}

std::string summary_line(const Report& r) {
  const auto ratio = r.get("ratio");
  std::string ratio_text = ratio && std::isfinite(*ratio) ? " ratio=" + g17(*ratio) : "";
  if (r.vacuous) ratio_text = " vacuous bound";
  if (r.passed()) return "PASS" + ratio_text;
  if (!r.complete()) return "FAIL stage=" + r.failed_stage + ": " + r.failure;
  if (!r.checks_passed()) {
    std::string names;
    for (const auto& c : r.checks)
      if (!c.passed) names += (names.empty() ? "" : ",") + c.name;
    return "FAIL checks=" + names + ratio_text;
  }
  return "FAIL inequality" + ratio_text;
}

void emit_report(const Report& r, Format format, std::ostream& out) {
  if (format == Format::Json) {
    ojson j;
    j["command"] = r.command;
    j["mode"] = r.mode;
    j["status"] = r.complete() ? "complete" : "partial";
    if (!r.complete()) {
      j["failed_stage"] = r.failed_stage;
      j["failure"] = r.failure;
    }
    j["verdict"] = r.passed() ? "pass" : "fail";
    j["exit_code"] = r.exit_code();
    j["inequality_passed"] = r.inequality_passed ? ojson(*r.inequality_passed) : ojson(nullptr);
    j["vacuous"] = r.vacuous;
    ojson sc = ojson::object();
    for (const auto& [k, v] : r.scalars) sc[k] = std::isfinite(v) ? ojson(v) : ojson(g17(v));
    j["scalars"] = sc;
    ojson checks = ojson::array();
    for (const auto& c : r.checks) {
      checks.push_back({{"name", c.name},
                        {"passed", c.passed},
                        {"value", std::isfinite(c.value) ? ojson(c.value) : ojson(g17(c.value))},
                        {"threshold", c.threshold},
                        {"claim", c.claim}});
    }
    j["checks"] = checks;
    ojson prov = ojson::object();
    for (const auto& [k, v] : r.provenance) prov[k] = v;
    j["provenance"] = prov;
    j["summary"] = summary_line(r);
    out << j.dump(2) << "\n";
  } else if (format == Format::Csv) {
    out << "kind,key,value\n";
    out << "meta,command," << r.command << "\n";
    out << "meta,mode," << r.mode << "\n";
    out << "meta,status," << (r.complete() ? "complete" : "partial") << "\n";
    if (!r.complete()) out << "meta,failed_stage," << r.failed_stage << "\n";
    out << "meta,verdict," << (r.passed() ? "pass" : "fail") << "\n";
    for (const auto& [k, v] : r.scalars) out << "scalar," << k << "," << g17(v) << "\n";
    for (const auto& c : r.checks) {
      out << "check," << c.name << "," << (c.passed ? "pass" : "fail") << "\n";
    }
    for (const auto& [k, v] : r.provenance) {
      std::string q = v;
      for (char& ch : q)
        if (ch == ',' || ch == '\n') ch = ';';
      out << "provenance," << k << "," << q << "\n";
    }
  } else {
    out << "msverify " << r.command << " (" << r.mode << ")\n";
    if (!r.complete()) out << "STAGE FAILED: " << r.failed_stage << ": " << r.failure << "\n";
    out << "\nscalars\n";
    for (const auto& [k, v] : r.scalars) {
      char line[128];
      std::snprintf(line, sizeof line, "  %-26s %s\n", k.c_str(), g17(v).c_str());
      out << line;
    }
    out << "\nchecks (claim -> measured vs threshold)\n";
    for (const auto& c : r.checks) {
      out << "  [" << (c.passed ? "ok" : "FAIL") << "] " << c.name << ": " << c.claim << " -> " << g17(c.value)
          << " vs " << g17(c.threshold) << "\n";
    }
    if (r.inequality_passed) {
      out << "  [" << (*r.inequality_passed ? "ok" : "FAIL") << "] inequality: lhs / rhs >= 1 - tau_effective\n";
    }
    out << "\nprovenance\n";
    for (const auto& [k, v] : r.provenance) out << "  " << k << ": " << v << "\n";
    out << "\n" << summary_line(r) << "\n";
  }
  if (!out) throw Error(ErrorCode::IOError, "report output failed");
}

void write_table(const Table& t, std::ostream& out) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << g17(row[i]);
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::IOError, "table output failed");
}

std::vector<std::pair<std::string, double>> read_csv_scalars(std::istream& in) {
  std::vector<std::pair<std::string, double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("scalar,", 0) != 0) continue;
    const auto comma = line.find(',', 7);
    if (comma == std::string::npos) throw Error(ErrorCode::SchemaError, "malformed CSV row '" + line + "'");
    const std::string value = line.substr(comma + 1);
    out.emplace_back(line.substr(7, comma - 7), value == "nan" ? kNaN : std::strtod(value.c_str(), nullptr));
  }
  return out;
}

std::vector<std::pair<std::string, double>> read_json_scalars(const std::string& text_in) {
  const ojson j = ojson::parse(text_in);
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [k, v] : j.at("scalars").items()) {
    if (v.is_number()) {
      out.emplace_back(k, v.get<double>());
    } else {
      const auto s = v.get<std::string>();
      out.emplace_back(k, s == "nan" ? kNaN : std::strtod(s.c_str(), nullptr));
    }
  }
  return out;
}

}  // namespace msv::verify
