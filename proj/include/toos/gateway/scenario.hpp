#pragma once

// Scripted operator for the sampling procedure. Produces a trajectory that
// walks the full session: mount, insert to first contact, trigger, move to the
// target patch, press, wipe, withdraw and collect.

#include <cmath>
#include <cstdint>
#include <random>

#include "toos/gateway/config.hpp"
#include "toos/gateway/io.hpp"
#include "toos/sim_env.hpp"
#include "toos/teleop.hpp"

namespace toos::gateway {

enum class ScenarioKind {
  sampling,   // light press and wipe on the patch
  overdrive,  // pushes deep past the surface, as in the force comparison run
};

struct ScenarioOptions {
  ScenarioKind kind = ScenarioKind::sampling;
  bool vf_enabled = true;
  std::uint64_t seed = 1;
  bool randomize_phantom = false;
  double noise_mm = 0.02;  // master hand tremor per step, 1 sigma
};

struct Scenario {
  sim::PhantomModel phantom;
  Trajectory trajectory;
};

inline Scenario make_scenario(const RunConfig& cfg, const ScenarioOptions& opt) {
  using namespace teleop;
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> tremor(0.0, opt.noise_mm);

  Scenario sc;
  sc.phantom = cfg.phantom;
  sc.phantom.seed = opt.seed;
  if (opt.randomize_phantom) {
    const double r = 5.0 * std::sqrt(unit(rng));
    const double a = 2.0 * kinematics::kPi * unit(rng);
    sc.phantom.patch_center = {r * std::cos(a), r * std::sin(a)};
    sc.phantom.z_throat += 10.0 * unit(rng) - 5.0;
    sc.phantom.entrance_depth = sc.phantom.z_throat - (cfg.phantom.z_throat - cfg.phantom.entrance_depth);
  }

  Trajectory& tr = sc.trajectory;
  tr.dt = cfg.dt;
  std::uint64_t k = 0;
  auto wait_for = [&](double seconds) { k += static_cast<std::uint64_t>(std::ceil(seconds / cfg.dt - 1e-9)) + 1; };
  // master motion that maps onto the requested slave displacement
  auto slave = [&](const Vec3& d, bool noisy) {
    Vec3 m = cfg.mapping.k_scale * cfg.mapping.axis_map.transpose() * d;
    if (noisy && opt.noise_mm > 0.0) m += Vec3(tremor(rng), tremor(rng), 0.0);
    tr.add(k++, MasterDelta{m});
  };

  const double gap = sc.phantom.z_throat - (cfg.geometry.rest_length + cfg.geometry.tip_offset);
  const double travel_s = gap / cfg.rates.linear_mm_s;

  tr.add(k, SetPressure{cfg.initial_pressure_kpa});
  tr.add(k, PhaseEvent{PhaseCommand::start});
  wait_for(kGripperDwell);
  tr.add(k, Pedal{});
  wait_for(kGripperDwell);
  tr.add(k++, PhaseEvent{PhaseCommand::next});
  tr.add(k++, PhaseEvent{PhaseCommand::next});
  tr.add(k, SetVfDiameter{cfg.initial_vf_diameter_mm});
  tr.add(k, Jog{Joint::j1, gap});
  wait_for(travel_s);
  tr.add(k++, Trigger{opt.vf_enabled});

  Vec3 target = Vec3::Zero();
  target.head<2>() = sc.phantom.patch_center;
  if (opt.kind == ScenarioKind::sampling) {
    const double r = std::sqrt(unit(rng));
    const double a = 2.0 * kinematics::kPi * unit(rng);
    target.x() += r * std::cos(a);
    target.y() += r * std::sin(a);
  }
  const double depth = opt.kind == ScenarioKind::sampling ? 1.0 : 3.0;

  constexpr int kApproach = 25;
  constexpr int kPress = 10;
  constexpr int kWipe = 30;
  constexpr int kRetract = 10;
  const Vec3 lateral(target.x() / kApproach, target.y() / kApproach, 0.0);
  for (int i = 0; i < kApproach; ++i) slave(lateral, true);
  for (int i = 0; i < kPress; ++i) slave(Vec3(0, 0, depth / kPress), false);
  if (opt.kind == ScenarioKind::sampling) {
    constexpr double kWipeRadius = 0.8;
    for (int i = 0; i < kWipe; ++i) {
      const double a0 = 2.0 * kinematics::kPi * i / kWipe;
      const double a1 = 2.0 * kinematics::kPi * (i + 1) / kWipe;
      slave(Vec3(kWipeRadius * (std::sin(a1) - std::sin(a0)), kWipeRadius * (std::cos(a0) - std::cos(a1)), 0.0),
            true);
    }
  } else {
    for (int i = 0; i < kWipe; ++i) slave(Vec3::Zero(), false);
  }
  for (int i = 0; i < kRetract; ++i) slave(Vec3(0, 0, -(depth + 2.0) / kRetract), false);
  for (int i = 0; i < kApproach; ++i) slave(-lateral, false);

  tr.add(k++, PhaseEvent{PhaseCommand::lock});
  tr.add(k++, PhaseEvent{PhaseCommand::next});
  tr.add(k, Jog{Joint::j1, -gap});
  wait_for(travel_s);
  tr.add(k, PhaseEvent{PhaseCommand::next});
  wait_for(kGripperDwell);
  tr.add(k, PhaseEvent{PhaseCommand::next});
  return sc;
}

}  // namespace toos::gateway
