#pragma once

// Run configuration: INI file with [geometry] [stiffness] [phantom] [mapping]
// [haptics] [fixture] [runtime] [service] sections. Relative paths resolve
// against the directory of the file that names them. Every range is checked
// here so a loaded config never fails at step time.

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "toos/errors.hpp"
#include "toos/gateway/io.hpp"
#include "toos/kinematics.hpp"
#include "toos/mapping.hpp"
#include "toos/sim_env.hpp"
#include "toos/stiffness.hpp"
#include "toos/teleop.hpp"
#include "toos/virtual_fixture.hpp"

namespace toos::gateway {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

struct RunConfig {
  kinematics::WristGeometry geometry;
  fs::path calibration_path;
  stiffness::CalibrationTable calibration;
  fs::path swabs_path;
  std::vector<stiffness::SwabSpec> swabs;
  stiffness::SwabSpec swab;
  double initial_pressure_kpa = 90.0;
  double f_safety = stiffness::kDefaultSafetyForce;
  sim::PhantomModel phantom;
  MasterMapping mapping;
  fixture::HapticGains gains;
  double force_cap = fixture::kDefaultForceCap;
  double initial_vf_diameter_mm = 40.0;
  double dt = 0.04;
  teleop::JogRates rates;
  int port = 7400;
  fs::path trace_path = "trace.csv";
  double realtime_factor = 1.0;

  teleop::RuntimeContext runtime_context() const {
    teleop::RuntimeContext ctx;
    ctx.geom = geometry;
    ctx.calibration = calibration;
    ctx.swab = swab;
    ctx.gains = gains;
    ctx.mapping = mapping;
    ctx.rates = rates;
    ctx.force_cap = force_cap;
    ctx.f_safety = f_safety;
    ctx.dt = dt;
    ctx.initial_pressure_kpa = initial_pressure_kpa;
    ctx.initial_vf_diameter_mm = initial_vf_diameter_mm;
    return ctx;
  }

  stiffness::StiffnessPair effective_at(double kpa) const {
    return stiffness::effective_stiffness(stiffness::wrist_stiffness(stiffness::PressureSetting(kpa), calibration),
                                          swab.stiffness);
  }
};

namespace detail {

template <class T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  std::istringstream in(*node);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("key '" + key + "': cannot parse '" + *node + "'");
  return v;
}

inline std::string get_string(const pt::ptree& tree, const std::string& key, const std::string& fallback) {
  return tree.get<std::string>(key, fallback);
}

inline double positive(double v, const std::string& key) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("key '" + key + "' must be > 0");
  return v;
}

inline fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

inline pt::ptree read_ini(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("file not found: '" + p.string() + "'");
  pt::ptree tree;
  try {
    pt::read_ini(p.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  return tree;
}

// Wraps library range errors so every load failure surfaces as ConfigError.
template <class F>
void checked(const std::string& what, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace detail

/// Swab registry: one INI section per swab.
inline std::vector<stiffness::SwabSpec> load_swabs(const fs::path& p) {
  const pt::ptree tree = detail::read_ini(p);
  std::vector<stiffness::SwabSpec> out;
  for (const auto& [name, section] : tree) {
    if (section.empty()) throw ConfigError("swab registry: '" + name + "' is not a section");
    stiffness::SwabSpec s;
    s.name = name;
    s.stiffness.axial = detail::positive(detail::get(section, "axial_n_per_mm", 0.0), name + ".axial_n_per_mm");
    s.stiffness.lateral =
        detail::positive(detail::get(section, "lateral_n_per_rad", 0.0), name + ".lateral_n_per_rad");
    s.length_mm = detail::positive(detail::get(section, "length_mm", 60.0), name + ".length_mm");
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("swab registry '" + p.string() + "' is empty");
  return out;
}

inline const stiffness::SwabSpec& find_swab(const std::vector<stiffness::SwabSpec>& swabs, const std::string& name) {
  for (const auto& s : swabs)
    if (s.name == name) return s;
  throw ConfigError("unknown swab '" + name + "'");
}

inline Eigen::Matrix3d parse_axis_map(const std::string& text) {
  std::istringstream in(text);
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) {
    double v = 0.0;
    if (!(in >> v)) throw ConfigError("mapping.axis_map needs 9 numbers (row major)");
    m(i / 3, i % 3) = v;
  }
  if (!(in >> std::ws).eof()) throw ConfigError("mapping.axis_map needs 9 numbers (row major)");
  return m;
}

inline RunConfig load_config(const fs::path& path) {
  using detail::get;
  const pt::ptree t = detail::read_ini(path);
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  RunConfig c;

  auto& g = c.geometry;
  g.cable_radius = get(t, "geometry.cable_radius_mm", g.cable_radius);
  g.rest_length = get(t, "geometry.rest_length_mm", g.rest_length);
  g.tip_offset = get(t, "geometry.tip_offset_mm", g.tip_offset);
  g.l_min = get(t, "geometry.l_min_mm", g.l_min);
  g.l_max = get(t, "geometry.l_max_mm", g.l_max);
  g.beta_max = get(t, "geometry.beta_max_rad", g.beta_max);
  detail::checked("geometry", [&] { g.validate(); });

  const auto cal = t.get_optional<std::string>("stiffness.calibration");
  if (!cal) throw ConfigError("stiffness.calibration is required");
  c.calibration_path = detail::resolve(base, *cal);
  const auto swabs = t.get_optional<std::string>("stiffness.swabs");
  if (!swabs) throw ConfigError("stiffness.swabs is required");
  c.swabs_path = detail::resolve(base, *swabs);
  try {
    c.calibration = load_calibration(c.calibration_path);
  } catch (const ParseError& e) {
    throw ConfigError(c.calibration_path.string() + ": " + e.what());
  }
  c.swabs = load_swabs(c.swabs_path);
  c.swab = find_swab(c.swabs, detail::get_string(t, "stiffness.swab", "plastic"));
  c.initial_pressure_kpa = get(t, "stiffness.initial_pressure_kpa", c.initial_pressure_kpa);
  c.f_safety = detail::positive(get(t, "stiffness.f_safety_n", c.f_safety), "stiffness.f_safety_n");
  detail::checked("stiffness", [&] { (void)c.effective_at(c.initial_pressure_kpa); });

  auto& ph = c.phantom;
  ph.z_throat = get(t, "phantom.z_throat_mm", ph.z_throat);
  ph.entrance_depth = get(t, "phantom.entrance_depth_mm", ph.entrance_depth);
  ph.cavity_radius = get(t, "phantom.cavity_radius_mm", ph.cavity_radius);
  ph.patch_center.x() = get(t, "phantom.patch_x_mm", ph.patch_center.x());
  ph.patch_center.y() = get(t, "phantom.patch_y_mm", ph.patch_center.y());
  ph.patch_radius = get(t, "phantom.patch_radius_mm", ph.patch_radius);
  ph.seed = get<std::uint64_t>(t, "phantom.seed", ph.seed);
  ph.validate();
  const double home_tip = g.rest_length + g.tip_offset;
  if (ph.z_throat < home_tip || ph.z_throat > home_tip + teleop::kJ1Max)
    throw ConfigError("phantom.z_throat_mm must lie within J1 insertion reach");

  c.mapping.k_scale = get(t, "mapping.k_scale", c.mapping.k_scale);
  if (const auto m = t.get_optional<std::string>("mapping.axis_map")) c.mapping.axis_map = parse_axis_map(*m);
  detail::checked("mapping", [&] { c.mapping.validate(); });

  c.gains.k_motion = get(t, "haptics.k_motion", c.gains.k_motion);
  c.gains.k_stiffness = get(t, "haptics.k_stiffness", c.gains.k_stiffness);
  detail::checked("haptics", [&] { c.gains.validate(); });
  c.force_cap = detail::positive(get(t, "haptics.force_cap_n", c.force_cap), "haptics.force_cap_n");

  c.initial_vf_diameter_mm = get(t, "fixture.initial_diameter_mm", c.initial_vf_diameter_mm);
  detail::checked("fixture", [&] { (void)fixture::FixtureSpec::radius_from_diameter(c.initial_vf_diameter_mm); });

  c.dt = detail::positive(get(t, "runtime.dt_s", c.dt), "runtime.dt_s");
  c.rates.linear_mm_s = detail::positive(get(t, "runtime.jog_linear_mm_s", c.rates.linear_mm_s), "runtime.jog_linear_mm_s");
  c.rates.angular_deg_s =
      detail::positive(get(t, "runtime.jog_angular_deg_s", c.rates.angular_deg_s), "runtime.jog_angular_deg_s");

  c.port = get(t, "service.port", c.port);
  if (c.port < 0 || c.port > 65535) throw ConfigError("service.port out of range");
  c.trace_path = detail::resolve(base, detail::get_string(t, "service.trace", c.trace_path.string()));
  c.realtime_factor =
      detail::positive(get(t, "service.realtime_factor", c.realtime_factor), "service.realtime_factor");
  return c;
}

}  // namespace toos::gateway
