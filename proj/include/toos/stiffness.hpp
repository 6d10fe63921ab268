#pragma once

// Pressure-tunable wrist stiffness, swab registry and the series composition
// of wrist and swab into the effective terminal stiffness.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toos/errors.hpp"

namespace toos::stiffness {

inline constexpr double kPressureMin = -30.0;  // kPa
inline constexpr double kPressureMax = 90.0;
inline constexpr double kExtrapolationMargin = 10.0;  // kPa beyond the table hull
inline constexpr double kStandardGravity = 9.80665;
// 60 gf comfort bound, rounded to the 0.588 N used across the controller.
inline constexpr double kDefaultSafetyForce = 0.588;

class PressureSetting {
 public:
  explicit PressureSetting(double kpa) : kpa_(kpa) {
    if (!std::isfinite(kpa) || kpa < kPressureMin || kpa > kPressureMax)
      throw OutOfRange("pressure " + std::to_string(kpa) + " kPa outside [-30, 90]");
  }
  double kpa() const noexcept { return kpa_; }

 private:
  double kpa_;
};

struct StiffnessPair {
  double axial = 0.0;    // N/mm
  double lateral = 0.0;  // N/rad

  bool valid() const { return axial > 0.0 && lateral > 0.0 && std::isfinite(axial) && std::isfinite(lateral); }
};

struct CalibrationRow {
  double pressure_kpa = 0.0;
  double axial = 0.0;
  double lateral = 0.0;
};

class CalibrationTable {
 public:
  CalibrationTable() = default;
  explicit CalibrationTable(std::vector<CalibrationRow> rows) : rows_(std::move(rows)) { validate(); }

  const std::vector<CalibrationRow>& rows() const noexcept { return rows_; }
  double min_pressure() const { return rows_.front().pressure_kpa; }
  double max_pressure() const { return rows_.back().pressure_kpa; }
  bool empty() const noexcept { return rows_.empty(); }

 private:
  void validate() const {
    if (rows_.size() < 2) throw ConfigError("calibration table needs at least 2 rows");
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      if (!(r.axial > 0.0) || !(r.lateral > 0.0))
        throw ConfigError("calibration row " + std::to_string(i) + " has non-positive stiffness");
      if (i > 0 && !(r.pressure_kpa > rows_[i - 1].pressure_kpa))
        throw ConfigError("calibration pressures must be strictly increasing");
    }
  }

  std::vector<CalibrationRow> rows_;
};

struct SwabSpec {
  std::string name;  // plastic | wood | metal | custom
  StiffnessPair stiffness;
  double length_mm = 60.0;
};

/// Piecewise-linear lookup per axis, extrapolating linearly up to
/// kExtrapolationMargin beyond the first/last row.
inline StiffnessPair wrist_stiffness(const PressureSetting& p, const CalibrationTable& cal,
                                     double margin = kExtrapolationMargin) {
  if (cal.empty()) throw ConfigError("empty calibration table");
  const double x = p.kpa();
  if (x < cal.min_pressure() - margin || x > cal.max_pressure() + margin)
    throw OutOfCalibrationRange("pressure " + std::to_string(x) + " kPa beyond calibrated range");
  const auto& rows = cal.rows();
  std::size_t hi = 1;
  while (hi + 1 < rows.size() && rows[hi].pressure_kpa < x) ++hi;
  const auto& a = rows[hi - 1];
  const auto& b = rows[hi];
  if (x == a.pressure_kpa) return {a.axial, a.lateral};
  if (x == b.pressure_kpa) return {b.axial, b.lateral};
  const double t = (x - a.pressure_kpa) / (b.pressure_kpa - a.pressure_kpa);
  StiffnessPair out{a.axial + t * (b.axial - a.axial), a.lateral + t * (b.lateral - a.lateral)};
  if (!out.valid()) throw OutOfCalibrationRange("extrapolated stiffness is not positive");
  return out;
}

inline double series(double a, double b) { return a * b / (a + b); }

/// Series composition per axis: k = kw*ks / (kw + ks).
inline StiffnessPair effective_stiffness(const StiffnessPair& wrist, const StiffnessPair& swab) {
  if (!wrist.valid() || !swab.valid()) throw OutOfRange("stiffness values must be > 0");
  return {series(wrist.axial, swab.axial), series(wrist.lateral, swab.lateral)};
}

/// Axial travel allowed beyond the trigger point before f_safety is reached.
inline double safe_deflection(const StiffnessPair& effective, double f_safety) {
  if (!(effective.axial > 0.0)) throw OutOfRange("effective axial stiffness must be > 0");
  return f_safety / effective.axial;
}

// Measured effective stiffness of one swab at one pressure.
struct EffectiveRow {
  std::string swab;
  double pressure_kpa = 0.0;
  StiffnessPair effective;
};

enum class Axis { axial, lateral };

inline const char* to_string(Axis a) { return a == Axis::axial ? "axial" : "lateral"; }

struct ExcludedEntry {
  std::string swab;
  double pressure_kpa = 0.0;
  Axis axis = Axis::axial;
  double implied_wrist = 0.0;  // NaN when the inversion is impossible
  std::string reason;
};

struct SwabResidual {
  std::string swab;
  double pressure_kpa = 0.0;
  Axis axis = Axis::axial;
  double implied_wrist = 0.0;
  double relative_deviation = 0.0;  // from the per-pressure mean
};

struct CalibrationResult {
  CalibrationTable table;
  std::vector<ExcludedEntry> excluded;
  std::vector<SwabResidual> residuals;
  std::vector<std::string> skipped_swabs;  // rows naming swabs absent from the registry
};

/// Wrist stiffness that, in series with `swab`, gives `effective`.
inline std::optional<double> invert_series(double effective, double swab) {
  if (!(effective > 0.0) || !(effective < swab)) return std::nullopt;
  return effective * swab / (swab - effective);
}

/// Recovers the wrist calibration from effective-stiffness measurements.
///
/// Per pressure and axis, every usable swab gives an implied wrist stiffness.
/// Entries with k_eff >= k_swab cannot be inverted; entries further than
/// `spread_limit` (relative) from the per-pressure median are treated as
/// inconsistent. Both are reported and left out of the mean.
inline CalibrationResult calibrate_from_effective(const std::vector<EffectiveRow>& rows,
                                                  const std::vector<SwabSpec>& swabs,
                                                  double spread_limit = 0.30) {
  std::map<std::string, SwabSpec> registry;
  for (const auto& s : swabs) {
    if (!s.stiffness.valid()) throw ConfigError("swab '" + s.name + "' has non-positive stiffness");
    registry[s.name] = s;
  }

  CalibrationResult result;
  struct Implied {
    std::string swab;
    double value;
  };
  // pressure -> axis -> implied wrist values
  std::map<double, std::map<Axis, std::vector<Implied>>> implied;

  for (const auto& row : rows) {
    const auto it = registry.find(row.swab);
    if (it == registry.end()) {
      if (std::find(result.skipped_swabs.begin(), result.skipped_swabs.end(), row.swab) ==
          result.skipped_swabs.end())
        result.skipped_swabs.push_back(row.swab);
      continue;
    }
    auto& slot = implied[row.pressure_kpa];
    for (Axis axis : {Axis::axial, Axis::lateral}) {
      const double eff = axis == Axis::axial ? row.effective.axial : row.effective.lateral;
      const double sw = axis == Axis::axial ? it->second.stiffness.axial : it->second.stiffness.lateral;
      if (auto w = invert_series(eff, sw)) {
        slot[axis].push_back({row.swab, *w});
      } else {
        result.excluded.push_back({row.swab, row.pressure_kpa, axis, std::nan(""),
                                   "InconsistentRow: effective stiffness >= swab stiffness"});
      }
    }
  }

  std::vector<CalibrationRow> table_rows;
  for (auto& [pressure, by_axis] : implied) {
    CalibrationRow out{pressure, 0.0, 0.0};
    bool complete = true;
    for (Axis axis : {Axis::axial, Axis::lateral}) {
      auto& values = by_axis[axis];
      if (values.empty()) {
        complete = false;
        continue;
      }
      std::vector<double> sorted;
      for (const auto& v : values) sorted.push_back(v.value);
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

      std::vector<Implied> kept;
      for (const auto& v : values) {
        if (std::abs(v.value - median) / median > spread_limit) {
          result.excluded.push_back({v.swab, pressure, axis, v.value, "spread: too far from consensus"});
        } else {
          kept.push_back(v);
        }
      }
      if (kept.empty()) {
        complete = false;
        continue;
      }
      double mean = 0.0;
      for (const auto& v : kept) mean += v.value;
      mean /= static_cast<double>(kept.size());
      for (const auto& v : kept)
        result.residuals.push_back({v.swab, pressure, axis, v.value, (v.value - mean) / mean});
      (axis == Axis::axial ? out.axial : out.lateral) = mean;
    }
    if (complete) table_rows.push_back(out);
  }
  result.table = CalibrationTable(std::move(table_rows));
  return result;
}

}  // namespace toos::stiffness
