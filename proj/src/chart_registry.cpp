#include "msv/chart_registry.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <set>

#include "msv/error.hpp"

namespace msv::geom {

namespace {

Box cube(int dim, double half_width) {
  return {Vec::Constant(dim, -half_width), Vec::Constant(dim, half_width)};
}

void require_dim(int dim, int lo) {
  if (dim < lo) throw Error(ErrorCode::BadDimension, "chart dimension too small");
}

// Conformal factor 4R^4/(R^2+|y|^2)^2 on the leading two-or-more coordinates,
// with its first and second derivatives.
struct Conformal {
  double phi;
  Vec d;
  Mat dd;
};

Conformal stereo_factor(const Vec& y, double R) {
  const double D = R * R + y.squaredNorm();
  const double phi = 4.0 * std::pow(R, 4) / (D * D);
  Conformal c{phi, (-4.0 * phi / D) * y, Mat()};
  c.dd = phi * (-4.0 / D * Mat::Identity(y.size(), y.size()) + 24.0 / (D * D) * y * y.transpose());
  return c;
}

double stereo_distance(const Vec& y, double R) { return 2.0 * R * std::atan(y.norm() / R); }

// g = phi^2 I + psi x x^T with phi = w(r)/r, psi = (1 - phi^2)/r^2.
MetricChart warped_chart(std::string label, int dim, double half_width,
                         std::function<std::pair<double, double>(double)> phi_psi) {
  MetricChart c;
  c.label = std::move(label);
  c.dim = dim;
  c.region = cube(dim, half_width);
  c.metric = [phi_psi, dim](const Vec& x) {
    const auto [phi, psi] = phi_psi(x.norm());
    Mat g = (phi * phi) * Mat::Identity(dim, dim);
    g.noalias() += psi * x * x.transpose();
    return g;
  };
  c.origin_distance = [](const Vec& x) { return x.norm(); };
  return c;
}

}  // namespace

MetricChart euclidean_chart(int dim, double half_width) {
  require_dim(dim, 1);
  MetricChart c;
  c.label = "euclidean";
  c.dim = dim;
  c.region = cube(dim, half_width);
  c.metric = [dim](const Vec&) { return Mat::Identity(dim, dim); };
  c.jet = [dim](const Vec&) {
    MetricJet j;
    j.g = Mat::Identity(dim, dim);
    j.dg.assign(dim, Mat::Zero(dim, dim));
    j.ddg.assign(static_cast<std::size_t>(dim) * dim, Mat::Zero(dim, dim));
    return j;
  };
  c.origin_distance = [](const Vec& x) { return x.norm(); };
  return c;
}

MetricChart polar2_chart() {
  MetricChart c;
  c.label = "polar2";
  c.dim = 2;
  c.region = {Eigen::Vector2d(0.05, -std::numbers::pi), Eigen::Vector2d(20.0, std::numbers::pi)};
  c.metric = [](const Vec& x) {
    Mat g = Mat::Identity(2, 2);
    g(1, 1) = x[0] * x[0];
    return g;
  };
  c.jet = [](const Vec& x) {
    MetricJet j;
    j.g = Mat::Identity(2, 2);
    j.g(1, 1) = x[0] * x[0];
    j.dg.assign(2, Mat::Zero(2, 2));
    j.dg[0](1, 1) = 2.0 * x[0];
    j.ddg.assign(4, Mat::Zero(2, 2));
    j.ddg[0](1, 1) = 2.0;
    return j;
  };
  return c;
}

MetricChart sphere_chart(int dim, double radius, double half_width) {
  require_dim(dim, 2);
  if (!(radius > 0.0)) throw Error(ErrorCode::RegistryMiss, "sphere radius must be > 0");
  MetricChart c;
  c.label = "sphere";
  c.dim = dim;
  c.region = cube(dim, half_width);
  c.declared_noncompact = false;
  c.metric = [radius, dim](const Vec& x) {
    return Mat(stereo_factor(x, radius).phi * Mat::Identity(dim, dim));
  };
  c.jet = [radius, dim](const Vec& x) {
    const Conformal f = stereo_factor(x, radius);
    MetricJet j;
    j.g = f.phi * Mat::Identity(dim, dim);
    for (int k = 0; k < dim; ++k) j.dg.push_back(f.d[k] * Mat::Identity(dim, dim));
    for (int k = 0; k < dim; ++k)
      for (int l = 0; l < dim; ++l) j.ddg.push_back(f.dd(k, l) * Mat::Identity(dim, dim));
    return j;
  };
  c.origin_distance = [radius](const Vec& x) { return stereo_distance(x, radius); };
  return c;
}

MetricChart sphere_product_chart(int flat_dim, double radius, double half_width) {
  require_dim(flat_dim, 1);
  if (!(radius > 0.0)) throw Error(ErrorCode::RegistryMiss, "sphere radius must be > 0");
  const int dim = flat_dim + 2;
  MetricChart c;
  c.label = "sphere_product";
  c.dim = dim;
  c.region = cube(dim, half_width);
  const auto block = [](int dim, double v) {
    Mat m = Mat::Zero(dim, dim);
    m(0, 0) = m(1, 1) = v;
    return m;
  };
  c.metric = [=](const Vec& x) {
    Mat g = Mat::Identity(dim, dim);
    g.topLeftCorner(2, 2) *= stereo_factor(x.head(2), radius).phi;
    return g;
  };
  c.jet = [=](const Vec& x) {
    const Conformal f = stereo_factor(x.head(2), radius);
    MetricJet j;
    j.g = Mat::Identity(dim, dim);
    j.g.topLeftCorner(2, 2) *= f.phi;
    for (int k = 0; k < dim; ++k) j.dg.push_back(block(dim, k < 2 ? f.d[k] : 0.0));
    for (int k = 0; k < dim; ++k)
      for (int l = 0; l < dim; ++l)
        j.ddg.push_back(block(dim, (k < 2 && l < 2) ? f.dd(k, l) : 0.0));
    return j;
  };
  c.origin_distance = [radius](const Vec& x) {
    return std::hypot(stereo_distance(x.head(2), radius), x.tail(x.size() - 2).norm());
  };
  return c;
}

MetricChart warped_bump_chart(int dim, double eps, double half_width) {
  require_dim(dim, 2);
  // phi = 1 + eps r^2 e^{-r^2}; psi closed form avoids the 0/0 at r = 0.
  return warped_chart("warped_bump", dim, half_width, [eps](double r) {
    const double e = std::exp(-r * r);
    const double phi = 1.0 + eps * r * r * e;
    const double psi = -(2.0 * eps * e + eps * eps * r * r * e * e);
    return std::pair{phi, psi};
  });
}

MetricChart h_model_chart(int dim, const ode::AsymptoticProfile& profile, double half_width) {
  require_dim(dim, 2);
  const double reach = half_width * std::sqrt(static_cast<double>(dim)) + 1.0;
  const double dt = 1e-3;
  auto coeff = [profile](double t) { return profile(t); };
  auto h = std::make_shared<ode::QuinticHermite>(ode::solve_h(profile, reach, dt), coeff);
  const double lambda0 = profile(0.0);
  MetricChart c = warped_chart("h_model", dim, half_width, [h, lambda0](double r) {
    if (r < 1e-6) return std::pair{1.0, -lambda0 / 3.0};
    const double phi = h->value(r) / r;
    return std::pair{phi, (1.0 - phi * phi) / (r * r)};
  });
  return c;
}

const std::vector<std::string>& chart_ids() {
  static const std::vector<std::string> ids{"euclidean",      "polar2",      "sphere",
                                            "sphere_product", "warped_bump", "h_model"};
  return ids;
}

MetricChart make_chart(const ChartSpec& spec) {
  const auto allowed = [&](std::set<std::string> keys) {
    for (const auto& [k, v] : spec.params) {
      if (!keys.count(k)) {
        throw Error(ErrorCode::RegistryMiss, "chart '" + spec.id + "' has no parameter '" + k + "'");
      }
    }
  };
  const auto get = [&](const std::string& k, double def) {
    auto it = spec.params.find(k);
    return it == spec.params.end() ? def : it->second;
  };
  const auto dim = [&](double def) { return static_cast<int>(std::lround(get("dim", def))); };
  if (spec.id == "euclidean") {
    allowed({"dim", "half_width"});
    return euclidean_chart(dim(4), get("half_width", 50.0));
  }
  if (spec.id == "polar2") {
    allowed({});
    return polar2_chart();
  }
  if (spec.id == "sphere") {
    allowed({"dim", "radius", "half_width"});
    return sphere_chart(dim(4), get("radius", 1.0), get("half_width", 5.0));
  }
  if (spec.id == "sphere_product") {
    allowed({"flat_dim", "radius", "half_width"});
    return sphere_product_chart(static_cast<int>(std::lround(get("flat_dim", 2))),
                                get("radius", 1.0), get("half_width", 5.0));
  }
  if (spec.id == "warped_bump") {
    allowed({"dim", "eps", "half_width"});
    return warped_bump_chart(dim(4), get("eps", 0.1), get("half_width", 20.0));
  }
  if (spec.id == "h_model") {
    allowed({"dim", "half_width"});
    if (!spec.profile) throw Error(ErrorCode::RegistryMiss, "h_model chart needs a profile");
    return h_model_chart(dim(4), ode::AsymptoticProfile::from_spec(*spec.profile),
                         get("half_width", 20.0));
  }
  throw Error(ErrorCode::RegistryMiss, "unknown chart id '" + spec.id + "'");
}

}  // namespace msv::geom
