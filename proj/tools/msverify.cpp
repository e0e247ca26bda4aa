#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "msv/error.hpp"
#include "msv/verifier.hpp"

namespace {

struct Options {
  std::string config;
  std::string format = "json";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> refine;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("config", o.config, "scenario JSON file")->required();
  cmd->add_option("--format", o.format, "json, csv or text")->check(CLI::IsMember({"json", "csv", "text"}));
  cmd->add_option("--out", o.out, "output path (directory for ray-audit)");
  cmd->add_option("--seed", o.seed, "override every seed");
  cmd->add_option("--refine", o.refine, "override the mesh refinement level");
}

int emit(const msv::verify::Report& r, const Options& o) {
  const auto fmt = msv::verify::parse_format(o.format);
  if (o.out.empty()) {
    msv::verify::emit_report(r, fmt, std::cout);
    std::cerr << msv::verify::summary_line(r) << "\n";
  } else {
    std::ofstream f(o.out);
    if (!f) throw msv::Error(msv::ErrorCode::IOError, "cannot write '" + o.out + "'");
    msv::verify::emit_report(r, fmt, f);
    std::cout << msv::verify::summary_line(r) << "\n";
  }
  return r.exit_code();
}

int run(const std::string& command, const Options& o) {
  auto s = msv::verify::load_config(o.config);
  if (o.seed) msv::verify::override_seed(s, *o.seed);
  if (o.refine) msv::verify::override_refinement(s, *o.refine);
  if (command == "verify") return emit(msv::verify::run_verify(s), o);
  if (command == "isoperimetric") return emit(msv::verify::run_isoperimetric(s), o);
  if (command == "avr") return emit(msv::verify::run_avr(s), o);
  if (command == "curvature-audit") return emit(msv::verify::run_curvature_audit(s), o);

  auto audit = msv::verify::run_ray_audit(s);
  if (o.out.empty()) {
    Options summary = o;
    return emit(audit.summary, summary);
  }
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw msv::Error(msv::ErrorCode::IOError, "cannot create '" + o.out + "': " + ec.message());
  for (const auto& t : audit.rays) {
    std::ofstream f(fs::path(o.out) / (t.name + ".csv"));
    if (!f) throw msv::Error(msv::ErrorCode::IOError, "cannot write ray table " + t.name);
    msv::verify::write_table(t, f);
  }
  Options summary = o;
  summary.out = (fs::path(o.out) / ("summary." + o.format)).string();
  return emit(audit.summary, summary);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical verification of Sobolev inequalities on submanifolds"};
  app.require_subcommand(1);
  Options o;
  std::string command;
  const std::pair<const char*, const char*> commands[] = {
      {"verify", "end-to-end inequality check"},
      {"isoperimetric", "f = 1 on a minimal immersion"},
      {"ray-audit", "per-ray Jacobi and comparison tables"},
      {"avr", "asymptotic volume ratio estimate at the chart origin"},
      {"curvature-audit", "sampled minimum of the intermediate Ricci curvature"}};
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    cmd->callback([&command, name] { command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    return run(command, o);
  } catch (const msv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
