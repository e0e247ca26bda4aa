#pragma once

// Registered ambient charts. Ids: euclidean, polar2, sphere, sphere_product,
// warped_bump, h_model.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msv/comparison_ode.hpp"
#include "msv/tensor_geometry.hpp"

namespace msv::geom {

struct ChartSpec {
  std::string id;
  std::map<std::string, double> params;
  std::optional<ode::ProfileSpec> profile;  // h_model only
};

MetricChart euclidean_chart(int dim, double half_width = 50.0);
/// (r, theta) on [0.05, 20] x [-pi, pi].
MetricChart polar2_chart();
/// Stereographic chart of the round sphere S^dim(R) from the north pole.
MetricChart sphere_chart(int dim, double radius = 1.0, double half_width = 5.0);
/// S^2(R) x R^flat_dim, stereographic on the first two coordinates.
MetricChart sphere_product_chart(int flat_dim, double radius = 1.0, double half_width = 5.0);
/// Rotationally symmetric dr^2 + w(r)^2 dw^2 with w = r + eps r^3 exp(-r^2).
MetricChart warped_bump_chart(int dim, double eps, double half_width = 20.0);
/// Rotationally symmetric model dr^2 + h(r)^2 dw^2 built from the h-ODE of `profile`.
MetricChart h_model_chart(int dim, const ode::AsymptoticProfile& profile, double half_width);

/// Throws RegistryMiss for unknown ids or parameters.
MetricChart make_chart(const ChartSpec& spec);
const std::vector<std::string>& chart_ids();

}  // namespace msv::geom
