// Command-line entry points: serve, replay, calibrate, workspace, acceptance,
// scenario. Exit status is 0 on success, 1 when a run completes but fails its
// check, 2 on bad input.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "toos/gateway/acceptance.hpp"
#include "toos/gateway/config.hpp"
#include "toos/gateway/io.hpp"
#include "toos/gateway/replay.hpp"
#include "toos/gateway/scenario.hpp"
#include "toos/gateway/server.hpp"
#include "toos/kinematics.hpp"
#include "toos/stiffness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace toos;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

int cmd_serve(const fs::path& config, int port, std::optional<fs::path> trace, std::optional<double> factor,
              std::size_t sessions, const std::string& bind) {
  const auto cfg = gateway::load_config(config);
  gateway::ServeOptions opt;
  opt.port = port >= 0 ? port : cfg.port;
  opt.bind_address = bind;
  opt.trace_path = trace;
  opt.realtime_factor = factor.value_or(cfg.realtime_factor);
  opt.max_sessions = sessions;
  opt.stop = &g_stop;
  opt.verbose = true;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  gateway::serve(cfg, opt);
  return 0;
}

int cmd_replay(const fs::path& config, const fs::path& input, const fs::path& out, std::optional<fs::path> report) {
  const auto cfg = gateway::load_config(config);
  const auto traj = gateway::load_trajectory(input, cfg.dt);
  const auto r = gateway::replay(traj, cfg);
  gateway::save_trace(out, r.trace);
  for (const auto& msg : r.rejected) fmt::print(stderr, "rejected {}\n", msg);
  json j{{"rows", r.trace.size()},
         {"final_phase", teleop::to_string(r.final_phase)},
         {"success", r.success.success},
         {"dwell_s", r.success.dwell_s},
         {"max_normal_force_n", r.success.max_normal_force},
         {"max_lateral_force_n", r.success.max_lateral_force},
         {"f_safety_n", cfg.f_safety},
         {"rejected", r.rejected.size()}};
  fmt::print("{}\n", j.dump(2));
  if (report) write_json(*report, j);
  return r.success.success ? 0 : 1;
}

int cmd_calibrate(const fs::path& table, const fs::path& swabs, const fs::path& out, double spread) {
  const auto rows = gateway::load_effective(table);
  const auto registry = gateway::load_swabs(swabs);
  const auto res = stiffness::calibrate_from_effective(rows, registry, spread);
  for (const auto& name : res.skipped_swabs)
    fmt::print(stderr, "warning: swab '{}' is not in the registry; its rows were skipped\n", name);
  for (const auto& e : res.excluded)
    fmt::print(stderr, "warning: excluded {} {} kPa {}: implied wrist {:.4f} ({})\n", e.swab, e.pressure_kpa,
               stiffness::to_string(e.axis), e.implied_wrist, e.reason);
  for (const auto& r : res.residuals)
    fmt::print(stderr, "residual {} {} kPa {}: implied wrist {:.4f}, {:+.2f}% from mean\n", r.swab, r.pressure_kpa,
               stiffness::to_string(r.axis), r.implied_wrist, 100.0 * r.relative_deviation);
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write '" + out.string() + "'");
  gateway::write_calibration(f, res.table);
  fmt::print("wrote {} rows to {}\n", res.table.rows().size(), out.string());
  return 0;
}

int cmd_workspace(std::optional<fs::path> config, int samples, const fs::path& out, bool with_points) {
  kinematics::WristGeometry geom;
  if (config) geom = gateway::load_config(*config).geometry;
  const auto ws = kinematics::workspace_sample(geom, samples);
  auto vec = [](const kinematics::Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json j{{"samples_per_axis", samples},
         {"count", ws.points.size()},
         {"extents", {{"min", vec(ws.extents.min)}, {"max", vec(ws.extents.max)}}},
         {"span", vec(ws.extents.max - ws.extents.min)}};
  if (with_points) {
    json pts = json::array();
    for (const auto& p : ws.points) pts.push_back(vec(p));
    j["points"] = pts;
  }
  write_json(out, j);
  fmt::print("{} points, x [{:.3f}, {:.3f}] y [{:.3f}, {:.3f}] z [{:.3f}, {:.3f}] mm\n", ws.points.size(),
             ws.extents.min.x(), ws.extents.max.x(), ws.extents.min.y(), ws.extents.max.y(), ws.extents.min.z(),
             ws.extents.max.z());
  return 0;
}

int cmd_acceptance(const fs::path& config, std::optional<fs::path> json_out) {
  const auto cfg = gateway::load_config(config);
  const auto report = acceptance::run(cfg);
  for (const auto& c : report.criteria) fmt::print("{}\n", acceptance::line(c));
  fmt::print("{}\n", report.all_pass() ? "ALL PASS" : "FAILED");
  if (json_out) write_json(*json_out, report.to_json());
  return report.all_pass() ? 0 : 1;
}

int cmd_scenario(const fs::path& config, const fs::path& out, std::uint64_t seed, bool overdrive, bool vf_off) {
  const auto cfg = gateway::load_config(config);
  gateway::ScenarioOptions opt;
  opt.seed = seed;
  opt.kind = overdrive ? gateway::ScenarioKind::overdrive : gateway::ScenarioKind::sampling;
  opt.vf_enabled = !vf_off;
  const auto sc = gateway::make_scenario(cfg, opt);
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write '" + out.string() + "'");
  gateway::write_trajectory(f, sc.trajectory);
  fmt::print("wrote {} steps to {}\n", sc.trajectory.last_step() + 1, out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Oropharyngeal swab teleoperation: service, replay and tooling"};
  app.require_subcommand(1);

  fs::path config, input, out, table, swabs;
  std::optional<fs::path> trace, report;
  std::optional<double> factor;
  int port = -1;
  int samples = 16;
  std::size_t sessions = 0;
  std::string bind = "127.0.0.1";
  double spread = 0.30;
  std::uint64_t seed = 1;
  bool overdrive = false, vf_off = false, points = false;

  auto* serve = app.add_subcommand("serve", "run the teleoperation service");
  serve->add_option("--config", config, "run configuration")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "listen port (default from config, 0 = any)");
  serve->add_option("--trace", trace, "trace output path (default from config)");
  serve->add_option("--realtime-factor", factor, "speed-up of the control clock");
  serve->add_option("--sessions", sessions, "exit after this many sessions (0 = run until interrupted)");
  serve->add_option("--bind", bind, "listen address");

  auto* replay = app.add_subcommand("replay", "run a trajectory file in-process");
  replay->add_option("--config", config)->required()->check(CLI::ExistingFile);
  replay->add_option("--input", input, "trajectory csv")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", out, "trace csv")->required();
  replay->add_option("--report", report, "write the verdict as json");

  auto* calibrate = app.add_subcommand("calibrate", "derive the wrist calibration from effective stiffness");
  calibrate->add_option("--table", table, "effective stiffness csv")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--swabs", swabs, "swab registry ini")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--out", out, "calibration csv")->required();
  calibrate->add_option("--spread", spread, "relative spread from the median before a swab is excluded");

  auto* workspace = app.add_subcommand("workspace", "sample the wrist workspace");
  std::optional<fs::path> ws_config;
  workspace->add_option("--config", ws_config, "geometry from this configuration")->check(CLI::ExistingFile);
  workspace->add_option("--samples", samples, "grid samples per axis")->check(CLI::Range(2, 400));
  workspace->add_option("--out", out, "json output")->required();
  workspace->add_flag("--points", points, "include every sampled point");

  auto* accept = app.add_subcommand("acceptance", "run the acceptance suite");
  accept->add_option("--config", config)->required()->check(CLI::ExistingFile);
  accept->add_option("--json", report, "write the report as json");

  auto* scenario = app.add_subcommand("scenario", "write a scripted operator trajectory");
  scenario->add_option("--config", config)->required()->check(CLI::ExistingFile);
  scenario->add_option("--out", out, "trajectory csv")->required();
  scenario->add_option("--seed", seed);
  scenario->add_flag("--overdrive", overdrive, "press 3 mm past the surface instead of sampling");
  scenario->add_flag("--vf-off", vf_off, "trigger with the fixture disabled");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return cmd_serve(config, port, trace, factor, sessions, bind);
    if (*replay) return cmd_replay(config, input, out, report);
    if (*calibrate) return cmd_calibrate(table, swabs, out, spread);
    if (*workspace) return cmd_workspace(ws_config, samples, out, points);
    if (*accept) return cmd_acceptance(config, report);
    if (*scenario) return cmd_scenario(config, out, seed, overdrive, vf_off);
  } catch (const toos::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 2;
}
