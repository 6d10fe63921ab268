#pragma once

// Text formats: calibration table, effective-stiffness table, trajectory
// (operator input script) and session trace. All comma separated with a
// fixed header line; numbers are written in shortest round-trip form.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <fmt/format.h>

#include "toos/errors.hpp"
#include "toos/stiffness.hpp"
#include "toos/teleop.hpp"

namespace toos::gateway {

inline constexpr std::string_view kCalibrationHeader = "pressure_kpa,axial_n_per_mm,lateral_n_per_rad";
inline constexpr std::string_view kEffectiveHeader = "swab,pressure_kpa,axial_n_per_mm,lateral_n_per_rad";
inline constexpr std::string_view kTrajectoryHeader = "t_s,kind,x_mm,y_mm,z_mm,value,label";
inline constexpr std::string_view kTraceHeader = "t_s,phase,x_mm,y_mm,z_mm,alpha,beta,l_mm,fx_n,fy_n,fz_n,vf_active";

namespace csv {

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    out.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double number(const std::string& cell, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v))
    throw ParseError(line, "column '" + std::string(column) + "': not a number: '" + cell + "'");
  return v;
}

inline std::string num(double v) { return fmt::format("{}", v); }

inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  return out;
}

inline void expect_header(const std::vector<std::string>& lines, std::string_view header) {
  if (lines.empty() || lines.front() != header)
    throw ParseError(1, "expected header '" + std::string(header) + "'");
}

}  // namespace csv

// ---------------------------------------------------------------------------

inline stiffness::CalibrationTable parse_calibration(std::istream& in) {
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, kCalibrationHeader);
  std::vector<stiffness::CalibrationRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = csv::split(lines[i]);
    if (cells.size() != 3) throw ParseError(i + 1, "expected 3 columns");
    rows.push_back({csv::number(cells[0], i + 1, "pressure_kpa"), csv::number(cells[1], i + 1, "axial_n_per_mm"),
                    csv::number(cells[2], i + 1, "lateral_n_per_rad")});
  }
  try {
    return stiffness::CalibrationTable(std::move(rows));
  } catch (const ConfigError& e) {
    throw ParseError(lines.size(), e.what());
  }
}

inline stiffness::CalibrationTable load_calibration(const std::filesystem::path& p) {
  auto in = csv::open_in(p);
  return parse_calibration(in);
}

inline void write_calibration(std::ostream& out, const stiffness::CalibrationTable& table) {
  out << kCalibrationHeader << '\n';
  for (const auto& r : table.rows())
    out << csv::num(r.pressure_kpa) << ',' << csv::num(r.axial) << ',' << csv::num(r.lateral) << '\n';
}

inline std::vector<stiffness::EffectiveRow> parse_effective(std::istream& in) {
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, kEffectiveHeader);
  std::vector<stiffness::EffectiveRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = csv::split(lines[i]);
    if (cells.size() != 4) throw ParseError(i + 1, "expected 4 columns");
    if (cells[0].empty()) throw ParseError(i + 1, "empty swab name");
    rows.push_back({cells[0], csv::number(cells[1], i + 1, "pressure_kpa"),
                    {csv::number(cells[2], i + 1, "axial_n_per_mm"), csv::number(cells[3], i + 1, "lateral_n_per_rad")}});
  }
  return rows;
}

inline std::vector<stiffness::EffectiveRow> load_effective(const std::filesystem::path& p) {
  auto in = csv::open_in(p);
  return parse_effective(in);
}

// ---------------------------------------------------------------------------
// Trajectory: operator inputs keyed by control step.

struct Trajectory {
  double dt = 0.04;
  std::map<std::uint64_t, std::vector<teleop::Event>> steps;

  void add(std::uint64_t step, teleop::Event e) { steps[step].push_back(std::move(e)); }
  std::uint64_t last_step() const { return steps.empty() ? 0 : steps.rbegin()->first; }
  const std::vector<teleop::Event>& at(std::uint64_t step) const {
    static const std::vector<teleop::Event> none;
    const auto it = steps.find(step);
    return it == steps.end() ? none : it->second;
  }
};

inline Trajectory parse_trajectory(std::istream& in, double dt) {
  using namespace teleop;
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, kTrajectoryHeader);
  Trajectory traj;
  traj.dt = dt;
  double last_t = 0.0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (lines[i].empty() || lines[i].front() == '#') continue;
    const auto c = csv::split(lines[i]);
    if (c.size() != 7) throw ParseError(ln, "expected 7 columns");
    const double t = csv::number(c[0], ln, "t_s");
    if (t < 0.0) throw ParseError(ln, "negative time");
    if (t < last_t) throw ParseError(ln, "time must be nondecreasing");
    last_t = t;
    const double steps = std::round(t / dt);
    if (std::abs(steps * dt - t) > 1e-6) throw ParseError(ln, "time is not a multiple of the control period");
    const auto step = static_cast<std::uint64_t>(steps);
    auto val = [&] { return csv::number(c[5], ln, "value"); };
    const std::string& kind = c[1];
    try {
      if (kind == "master_delta") {
        traj.add(step, MasterDelta{{csv::number(c[2], ln, "x_mm"), csv::number(c[3], ln, "y_mm"),
                                    csv::number(c[4], ln, "z_mm")}});
      } else if (kind == "trigger") {
        traj.add(step, Trigger{c[5].empty() || val() != 0.0});
      } else if (kind == "pedal") {
        traj.add(step, Pedal{});
      } else if (kind == "jog") {
        traj.add(step, Jog{joint_from_string(c[6]), val()});
      } else if (kind == "set_pressure") {
        traj.add(step, SetPressure{val()});
      } else if (kind == "set_vf_radius") {
        traj.add(step, SetVfDiameter{val()});
      } else if (kind == "set_scale") {
        traj.add(step, SetScale{val()});
      } else if (kind == "phase_event") {
        traj.add(step, PhaseEvent{phase_command_from_string(c[6])});
      } else {
        throw ParseError(ln, "unknown event kind '" + kind + "'");
      }
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      std::string msg = e.what();
      msg.erase(0, msg.find(": ") + 2);
      throw ParseError(ln, msg);
    }
  }
  return traj;
}

inline Trajectory load_trajectory(const std::filesystem::path& p, double dt) {
  auto in = csv::open_in(p);
  return parse_trajectory(in, dt);
}

inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
  using namespace teleop;
  out << kTrajectoryHeader << '\n';
  for (const auto& [step, events] : traj.steps) {
    const std::string t = csv::num(static_cast<double>(step) * traj.dt);
    for (const auto& e : events) {
      std::visit(
          [&](const auto& ev) {
            using T = std::decay_t<decltype(ev)>;
            out << t << ',';
            if constexpr (std::is_same_v<T, MasterDelta>) {
              out << "master_delta," << csv::num(ev.delta.x()) << ',' << csv::num(ev.delta.y()) << ','
                  << csv::num(ev.delta.z()) << ",,";
            } else if constexpr (std::is_same_v<T, Trigger>) {
              out << "trigger,,,," << (ev.enable ? 1 : 0) << ',';
            } else if constexpr (std::is_same_v<T, Pedal>) {
              out << "pedal,,,,,";
            } else if constexpr (std::is_same_v<T, Jog>) {
              out << "jog,,,," << csv::num(ev.delta) << ',' << to_string(ev.joint);
            } else if constexpr (std::is_same_v<T, SetPressure>) {
              out << "set_pressure,,,," << csv::num(ev.kpa) << ',';
            } else if constexpr (std::is_same_v<T, SetVfDiameter>) {
              out << "set_vf_radius,,,," << csv::num(ev.diameter_mm) << ',';
            } else if constexpr (std::is_same_v<T, SetScale>) {
              out << "set_scale,,,," << csv::num(ev.k_scale) << ',';
            } else if constexpr (std::is_same_v<T, PhaseEvent>) {
              out << "phase_event,,,,," << to_string(ev.command);
            }
            out << '\n';
          },
          e);
    }
  }
}

// ---------------------------------------------------------------------------
// Trace

inline void write_trace(std::ostream& out, const std::vector<teleop::TraceEntry>& trace) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace) {
    out << csv::num(r.t_s) << ',' << teleop::to_string(r.phase) << ',' << csv::num(r.tip.position.x()) << ','
        << csv::num(r.tip.position.y()) << ',' << csv::num(r.tip.position.z()) << ',' << csv::num(r.q.alpha) << ','
        << csv::num(r.q.beta) << ',' << csv::num(r.q.length) << ',' << csv::num(r.master_force.x()) << ','
        << csv::num(r.master_force.y()) << ',' << csv::num(r.master_force.z()) << ',' << (r.active ? 1 : 0) << '\n';
  }
}

inline void save_trace(const std::filesystem::path& p, const std::vector<teleop::TraceEntry>& trace) {
  auto out = csv::open_out(p);
  write_trace(out, trace);
}

struct TraceRow {
  double t_s = 0.0;
  std::string phase;
  std::array<double, 9> values{};  // x y z alpha beta l fx fy fz
  int vf_active = 0;
};

inline std::vector<TraceRow> parse_trace(std::istream& in) {
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, kTraceHeader);
  std::vector<TraceRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto c = csv::split(lines[i]);
    if (c.size() != 12) throw ParseError(i + 1, "expected 12 columns");
    TraceRow r;
    r.t_s = csv::number(c[0], i + 1, "t_s");
    r.phase = c[1];
    for (std::size_t k = 0; k < 9; ++k) r.values[k] = csv::number(c[2 + k], i + 1, "value");
    r.vf_active = static_cast<int>(csv::number(c[11], i + 1, "vf_active"));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<TraceRow> load_trace(const std::filesystem::path& p) {
  auto in = csv::open_in(p);
  return parse_trace(in);
}

/// Largest absolute difference between numeric columns; infinity when the
/// traces differ in length or phase sequence.
inline double trace_difference(const std::vector<TraceRow>& a, const std::vector<TraceRow>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].phase != b[i].phase || a[i].vf_active != b[i].vf_active) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(a[i].t_s - b[i].t_s));
    for (std::size_t k = 0; k < 9; ++k) worst = std::max(worst, std::abs(a[i].values[k] - b[i].values[k]));
  }
  return worst;
}

}  // namespace toos::gateway
