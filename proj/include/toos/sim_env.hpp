#pragma once

// Simulated testee: a planar throat surface in the RCM insertion frame with a
// target patch, spring-only contact through the effective swab stiffness, and
// the sampling-success verdict.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include <Eigen/Core>

#include "toos/errors.hpp"
#include "toos/kinematics.hpp"
#include "toos/stiffness.hpp"
#include "toos/teleop.hpp"

namespace toos::sim {

using kinematics::TipPose;
using kinematics::Vec3;

struct PhantomModel {
  double z_throat = 205.0;        // throat plane depth along the insertion axis [mm]
  double entrance_depth = 165.0;  // oral-cavity entrance, 40 mm before the throat
  double cavity_radius = 20.0;
  Eigen::Vector2d patch_center = Eigen::Vector2d::Zero();
  double patch_radius = 4.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(cavity_radius > 0.0)) throw ConfigError("cavity radius must be > 0");
    if (!(patch_radius > 0.0)) throw ConfigError("patch radius must be > 0");
    if (patch_center.norm() + patch_radius > cavity_radius)
      throw ConfigError("target patch must lie within the cavity cross-section");
    if (!(entrance_depth < z_throat)) throw ConfigError("cavity entrance must precede the throat");
  }
};

struct ContactReport {
  bool in_contact = false;
  double penetration = 0.0;  // mm
  double normal_force = 0.0;  // N
  double lateral_force = 0.0;
  bool on_target = false;
  Eigen::Vector2d contact_point = Eigen::Vector2d::Zero();
};

/// Spring contact of the swab tip with the throat plane.
///
/// The normal force is k_axial * penetration. A swab tilted by angle t from
/// the plane normal pushes its tip tangentially by penetration * tan(t) past
/// the point where its axis crosses the surface; that offset over the swab
/// length is the small-angle bend that loads the lateral stiffness.
inline ContactReport contact(const TipPose& tip, const PhantomModel& phantom, const stiffness::StiffnessPair& k_eff,
                             double swab_length) {
  if (!k_eff.valid()) throw OutOfRange("effective stiffness must be > 0");
  if (!(swab_length > 0.0)) throw OutOfRange("swab length must be > 0");
  ContactReport r;
  r.penetration = std::max(0.0, tip.position.z() - phantom.z_throat);
  const Vec3 axis = tip.orientation.col(2);
  Eigen::Vector2d cross = tip.position.head<2>();
  if (r.penetration > 0.0 && axis.z() > 0.0) {
    const Eigen::Vector2d tangential = axis.head<2>() * (r.penetration / axis.z());
    cross -= tangential;
    r.lateral_force = k_eff.lateral * tangential.norm() / swab_length;
  }
  r.contact_point = cross;
  r.in_contact = r.penetration > 0.0;
  r.normal_force = k_eff.axial * r.penetration;
  r.on_target = r.in_contact && (cross - phantom.patch_center).norm() <= phantom.patch_radius;
  return r;
}

struct SuccessCriteria {
  double min_dwell_s = 0.5;
  double min_force = 0.05;   // exclusive
  double max_force = 0.588;  // inclusive
};

struct SuccessReport {
  bool success = false;
  double dwell_s = 0.0;
  double max_normal_force = 0.0;
  double max_lateral_force = 0.0;
};

/// Cumulative on-target dwell inside the force window. Each row accounts for
/// the interval since the previous row.
inline SuccessReport evaluate_success(std::span<const teleop::TraceEntry> trace, const PhantomModel& phantom,
                                      const stiffness::StiffnessPair& k_eff, double swab_length,
                                      const SuccessCriteria& criteria = {}) {
  SuccessReport rep;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const ContactReport c = contact(trace[i].tip, phantom, k_eff, swab_length);
    rep.max_normal_force = std::max(rep.max_normal_force, c.normal_force);
    rep.max_lateral_force = std::max(rep.max_lateral_force, c.lateral_force);
    if (i == 0) continue;
    const double dt = trace[i].t_s - trace[i - 1].t_s;
    // the upper bound is inclusive; allow for rounding at the clamped depth
    if (c.on_target && c.normal_force > criteria.min_force && c.normal_force <= criteria.max_force + 1e-9)
      rep.dwell_s += dt;
  }
  rep.success = rep.dwell_s >= criteria.min_dwell_s - 1e-9;
  return rep;
}

}  // namespace toos::sim
