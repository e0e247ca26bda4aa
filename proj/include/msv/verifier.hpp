#pragma once

// Scenario configuration, the end-to-end verification pipelines and report
// emission shared by the msverify CLI and the acceptance binary.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msv/chart_registry.hpp"
#include "msv/comparison_ode.hpp"
#include "msv/discrete_submanifold.hpp"

namespace msv::verify {

enum class Hypothesis { RicKNonneg, Asymptotic };

struct RaySpec {
  int count = 24;          // vertices of Omega
  int normal_samples = 2;  // normal vectors per vertex
  double horizon = 2.0;
  double dt = 0.01;
  std::uint64_t seed = 1;
};

struct AvrSpec {
  double r = 10.0;
  int n_dirs = 500;
  std::uint64_t seed = 1;
  double dt = 0.0;  // 0: r / 200
};

struct AuditSpec {
  int points = 50;
  int frames = 4;
  std::uint64_t seed = 1;
};

struct Tolerances {
  double ineq = 0.03;
  double lemma_constant = 2.0;  // lemma positive part <= C h
  double riccati = 1e-4;
  double det_relative = 1e-5;
  double orthogonality = 1e-6;
  double curvature = 1e-6;
  double compatibility = 1e-8;
  double divergence = 1e-8;
  double minimal = 1e-6;  // max |H| for isoperimetric runs
};

struct Scenario {
  sub::NeumannMode mode = sub::NeumannMode::Theorem1;
  geom::ChartSpec chart;
  Hypothesis hypothesis = Hypothesis::RicKNonneg;
  std::optional<ode::ProfileSpec> profile;
  sub::ImmersionSpec immersion;
  sub::DensitySpec density;
  RaySpec rays;
  AvrSpec avr;
  AuditSpec audit;
  int lemma_samples = 16;
  Tolerances tol;

  // derived at parse time
  int n = 2;
  int m = 0;
  int k = 0;  // min(n - 1, m - 1)
  double b0 = 0.0;
  double b1 = 0.0;
  std::uint64_t config_hash = 0;
  std::string canonical;  // canonical JSON of the validated scenario
};

/// Parses a JSON scenario. Throws SchemaError (message carries the JSON
/// path), RegistryMiss, BadCodimension, DivergentIntegral.
Scenario parse_config(const std::string& text);
Scenario load_config(const std::string& path);

/// Re-derives the canonical form and hash after CLI overrides.
void override_seed(Scenario& s, std::uint64_t seed);
void override_refinement(Scenario& s, int level);

std::uint64_t fnv1a64(const std::string& bytes);

struct Check {
  std::string name;
  bool passed = true;
  double value = 0.0;
  double threshold = 0.0;
  std::string claim;  // what the check certifies
};

struct Report {
  std::string command;
  std::string mode;
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<Check> checks;
  std::vector<std::pair<std::string, std::string>> provenance;
  std::optional<bool> inequality_passed;
  bool vacuous = false;
  std::string failed_stage;  // empty when every stage completed
  std::string failure;

  void set(const std::string& key, double value);
  std::optional<double> get(const std::string& key) const;
  bool complete() const { return failed_stage.empty(); }
  bool checks_passed() const;
  bool passed() const;
  /// 0 pass, 2 inequality fail, 3 sub-check or stage failure.
  int exit_code() const;
};

Report run_verify(const Scenario& s);
/// Throws NotMinimal when the immersion's mean curvature exceeds tol.minimal.
Report run_isoperimetric(const Scenario& s);
Report run_avr(const Scenario& s);
Report run_curvature_audit(const Scenario& s);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct RayAudit {
  Report summary;
  std::vector<Table> rays;
};
RayAudit run_ray_audit(const Scenario& s);

enum class Format { Json, Csv, Text };
Format parse_format(const std::string& name);

/// Throws IOError when the stream fails.
void emit_report(const Report& report, Format format, std::ostream& out);
void write_table(const Table& table, std::ostream& out);

/// Scalar table of a CSV report, in emitted order.
std::vector<std::pair<std::string, double>> read_csv_scalars(std::istream& in);
/// Scalar table of a JSON report, in emitted order.
std::vector<std::pair<std::string, double>> read_json_scalars(const std::string& text);

/// Exit line: "PASS ratio=..." / "FAIL ...".
std::string summary_line(const Report& report);

}  // namespace msv::verify
