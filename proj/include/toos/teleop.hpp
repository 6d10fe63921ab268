#pragma once

// 25 Hz master -> slave control loop and the sampling-session state machine.
//
// Session phases follow the sampling procedure:
//   Prepare -> SwabMount -> LockedHome -> InsertionAndVfSelect -> TeleopSampling
//   -> LockAndHome -> Withdraw -> SwabCollect -> Done
// with an abort path to LockAndHome from every phase but Done.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "toos/errors.hpp"
#include "toos/kinematics.hpp"
#include "toos/mapping.hpp"
#include "toos/stiffness.hpp"
#include "toos/virtual_fixture.hpp"

namespace toos::teleop {

using kinematics::ActuatorLengths;
using kinematics::ConfigState;
using kinematics::TipPose;
using kinematics::Vec3;
using kinematics::WristGeometry;

enum class Phase {
  Prepare,
  SwabMount,
  LockedHome,
  InsertionAndVfSelect,
  TeleopSampling,
  LockAndHome,
  Withdraw,
  SwabCollect,
  Done,
};

inline constexpr std::array<std::string_view, 9> kPhaseNames{
    "Prepare", "SwabMount", "LockedHome", "InsertionAndVfSelect", "TeleopSampling",
    "LockAndHome", "Withdraw", "SwabCollect", "Done"};

inline std::string_view to_string(Phase p) { return kPhaseNames[static_cast<std::size_t>(p)]; }

inline Phase phase_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i)
    if (kPhaseNames[i] == s) return static_cast<Phase>(i);
  throw ParseError(0, "unknown phase '" + std::string(s) + "'");
}

enum class PhaseCommand { start, next, lock, abort };

inline std::string_view to_string(PhaseCommand c) {
  switch (c) {
    case PhaseCommand::start: return "start";
    case PhaseCommand::next: return "next";
    case PhaseCommand::lock: return "lock";
    case PhaseCommand::abort: return "abort";
  }
  return "?";
}

inline PhaseCommand phase_command_from_string(std::string_view s) {
  if (s == "start") return PhaseCommand::start;
  if (s == "next") return PhaseCommand::next;
  if (s == "lock") return PhaseCommand::lock;
  if (s == "abort") return PhaseCommand::abort;
  throw ParseError(0, "unknown phase event '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// RCM platform

enum class Joint : int { j1 = 0, j2 = 1, j3 = 2 };

inline std::string_view to_string(Joint j) {
  static constexpr std::array<std::string_view, 3> names{"j1", "j2", "j3"};
  return names[static_cast<std::size_t>(j)];
}

inline Joint joint_from_string(std::string_view s) {
  if (s == "j1") return Joint::j1;
  if (s == "j2") return Joint::j2;
  if (s == "j3") return Joint::j3;
  throw ParseError(0, "unknown joint '" + std::string(s) + "'");
}

inline constexpr double kJ1Max = 100.0;  // mm
inline constexpr double kJ2Max = 47.0;   // deg
inline constexpr double kJ3Period = 360.0;

struct JogRates {
  double linear_mm_s = 10.0;
  double angular_deg_s = 10.0;
};

// j1 insertion [mm] in [0, 100]; j2 sagittal [deg] in [0, 47]; j3 frontal [deg] in [0, 360).
struct RcmState {
  double j1 = 0.0;
  double j2 = 0.0;
  double j3 = 0.0;
  double j1_target = 0.0;
  double j2_target = 0.0;
  double j3_pending = 0.0;  // signed remaining rotation, wraps
  std::array<bool, 3> locks{false, false, false};

  bool locked(Joint j) const { return locks[static_cast<std::size_t>(j)]; }
  bool moving() const { return j1 != j1_target || j2 != j2_target || j3_pending != 0.0; }
};

// ---------------------------------------------------------------------------
// Gripper: binary jaw driven by the sign of the applied pressure.

inline constexpr double kGripperDwell = 0.3;  // s

enum class Jaw { open, closed };
enum class PressureSign { negative, positive };

struct GripperState {
  Jaw state = Jaw::closed;
  PressureSign pressure_sign = PressureSign::positive;
  double settle_s = 0.0;

  bool settled() const { return settle_s <= 0.0; }
  bool closed_and_settled() const { return state == Jaw::closed && settled(); }

  void command(Jaw j) {
    if (j == state) return;
    state = j;
    pressure_sign = j == Jaw::open ? PressureSign::negative : PressureSign::positive;
    settle_s = kGripperDwell;
  }
};

// ---------------------------------------------------------------------------
// Inputs

struct MasterDelta {
  Vec3 delta = Vec3::Zero();  // master device displacement [mm]
};
struct Trigger {
  bool enable = true;  // VF switch state at trigger
};
struct Pedal {};
struct Jog {
  Joint joint = Joint::j1;
  double delta = 0.0;  // mm for j1, degrees for j2/j3
};
struct SetPressure {
  double kpa = 0.0;
};
struct SetVfDiameter {
  double diameter_mm = 0.0;
};
struct SetScale {
  double k_scale = 2.0;
};
struct PhaseEvent {
  PhaseCommand command = PhaseCommand::next;
};

using Event = std::variant<MasterDelta, Trigger, Pedal, Jog, SetPressure, SetVfDiameter, SetScale, PhaseEvent>;
using FsmEvent = std::variant<PhaseCommand, Trigger, Pedal>;

inline bool is_jog(const Event& e) { return std::holds_alternative<Jog>(e); }

struct StepInput {
  std::vector<Event> events;
};

// ---------------------------------------------------------------------------
// Session

struct RuntimeContext {
  WristGeometry geom;
  stiffness::CalibrationTable calibration;
  stiffness::SwabSpec swab;
  fixture::HapticGains gains;
  MasterMapping mapping;
  JogRates rates;
  double force_cap = fixture::kDefaultForceCap;
  double f_safety = stiffness::kDefaultSafetyForce;
  double dt = 0.04;
  double initial_pressure_kpa = 90.0;
  double initial_vf_diameter_mm = 40.0;

  stiffness::StiffnessPair effective_at(const stiffness::PressureSetting& p) const {
    return stiffness::effective_stiffness(stiffness::wrist_stiffness(p, calibration), swab.stiffness);
  }
};

struct TraceEntry {
  double t_s = 0.0;
  Phase phase = Phase::Prepare;
  TipPose tip;  // swab tip in the insertion frame
  ConfigState q;
  Vec3 master_force = Vec3::Zero();
  unsigned active = fixture::kNoConstraint;
  double j1 = 0.0;
};

struct SessionState {
  Phase phase = Phase::Prepare;
  RcmState rcm;
  ConfigState wrist_q;
  ActuatorLengths cables;
  fixture::FixtureSpec fixture;
  GripperState gripper;
  stiffness::PressureSetting pressure{90.0};
  MasterMapping mapping;
  Vec3 slave_target = Vec3::Zero();  // accumulated mapped master motion since trigger
  fixture::ConstraintForce force;
  unsigned active = fixture::kNoConstraint;
  std::uint64_t step = 0;
  bool finished = false;
  std::vector<TraceEntry> trace;

  double time_s(double dt) const { return static_cast<double>(step) * dt; }
};

inline ConfigState home_config(const WristGeometry& geom) { return {0.0, 0.0, geom.rest_length}; }

/// Swab tip in the insertion frame: wrist tip raised by the J1 insertion.
inline TipPose insertion_tip(const SessionState& s, const WristGeometry& geom) {
  TipPose tip = kinematics::config_to_tip(s.wrist_q, geom);
  tip.position.z() += s.rcm.j1;
  return tip;
}

inline SessionState make_session(const RuntimeContext& ctx) {
  ctx.geom.validate();
  ctx.mapping.validate();
  ctx.gains.validate();
  SessionState s;
  s.mapping = ctx.mapping;
  s.pressure = stiffness::PressureSetting(ctx.initial_pressure_kpa);
  s.wrist_q = home_config(ctx.geom);
  s.cables = kinematics::config_to_actuator(s.wrist_q, ctx.geom);
  s.fixture.r_throat = fixture::FixtureSpec::radius_from_diameter(ctx.initial_vf_diameter_mm);
  s.fixture.f_safety = ctx.f_safety;
  s.fixture.k_axial_effective = ctx.effective_at(s.pressure).axial;
  s.fixture.l_button = ctx.geom.rest_length;
  s.fixture.origin = kinematics::config_to_tip(s.wrist_q, ctx.geom);
  return s;
}

namespace detail {

inline void send_home(SessionState& s, const RuntimeContext& ctx) {
  s.wrist_q = home_config(ctx.geom);
  s.cables = kinematics::config_to_actuator(s.wrist_q, ctx.geom);
  s.fixture.enabled = false;
  s.slave_target = Vec3::Zero();
  s.force = {};
  s.active = fixture::kNoConstraint;
}

inline void lock_all(SessionState& s, bool j1) {
  s.rcm.locks = {j1, true, true};
}

inline void fsm(SessionState& s, const FsmEvent& ev, const RuntimeContext& ctx) {
  const Phase p = s.phase;
  auto illegal = [&](std::string_view what) {
    throw IllegalTransition(std::string(what) + " not allowed in phase " + std::string(to_string(p)));
  };

  if (const auto* cmd = std::get_if<PhaseCommand>(&ev)) {
    if (*cmd == PhaseCommand::abort) {
      if (p == Phase::Done) illegal("abort");
      send_home(s, ctx);
      lock_all(s, true);
      s.rcm.j1_target = s.rcm.j1;
      s.rcm.j2_target = s.rcm.j2;
      s.rcm.j3_pending = 0.0;
      s.phase = Phase::LockAndHome;
      return;
    }
    switch (p) {
      case Phase::Prepare:
        if (*cmd != PhaseCommand::start) illegal(to_string(*cmd));
        s.gripper.command(Jaw::open);
        s.phase = Phase::SwabMount;
        return;
      case Phase::SwabMount:
        if (*cmd != PhaseCommand::next) illegal(to_string(*cmd));
        if (!s.gripper.closed_and_settled()) throw IllegalTransition("swab not grasped: gripper must be closed");
        s.phase = Phase::LockedHome;
        return;
      case Phase::LockedHome:
        if (*cmd != PhaseCommand::next) illegal(to_string(*cmd));
        if (s.rcm.moving()) throw IllegalTransition("RCM still moving");
        s.rcm.locks = {false, true, true};
        s.phase = Phase::InsertionAndVfSelect;
        return;
      case Phase::TeleopSampling:
        if (*cmd != PhaseCommand::lock) illegal(to_string(*cmd));
        send_home(s, ctx);
        s.phase = Phase::LockAndHome;
        return;
      case Phase::LockAndHome:
        if (*cmd != PhaseCommand::next) illegal(to_string(*cmd));
        s.rcm.locks = {false, true, true};
        s.phase = Phase::Withdraw;
        return;
      case Phase::Withdraw:
        if (*cmd != PhaseCommand::next) illegal(to_string(*cmd));
        if (s.rcm.moving()) throw IllegalTransition("J1 still moving");
        lock_all(s, true);
        s.gripper.command(Jaw::open);
        s.phase = Phase::SwabCollect;
        return;
      case Phase::SwabCollect:
        if (*cmd != PhaseCommand::next) illegal(to_string(*cmd));
        if (!s.gripper.settled()) throw IllegalTransition("gripper still moving");
        s.phase = Phase::Done;
        return;
      case Phase::InsertionAndVfSelect:
      case Phase::Done:
        illegal(to_string(*cmd));
    }
  } else if (const auto* trig = std::get_if<Trigger>(&ev)) {
    if (p != Phase::InsertionAndVfSelect) illegal("trigger");
    if (!s.gripper.closed_and_settled()) throw IllegalTransition("trigger requires a grasped swab");
    if (s.rcm.moving()) throw IllegalTransition("trigger while J1 is moving");
    s.fixture.enabled = trig->enable;
    s.fixture.l_button = s.wrist_q.length;
    s.fixture.origin = kinematics::config_to_tip(s.wrist_q, ctx.geom);
    s.fixture.k_axial_effective = ctx.effective_at(s.pressure).axial;
    s.fixture.validate();
    s.slave_target = Vec3::Zero();
    s.force = {};
    s.active = fixture::kNoConstraint;
    lock_all(s, true);
    s.phase = Phase::TeleopSampling;
  } else {
    if (p != Phase::SwabMount && p != Phase::SwabCollect) throw PhaseViolation("pedal ignored in phase " +
                                                                                std::string(to_string(p)));
    s.gripper.command(s.gripper.state == Jaw::open ? Jaw::closed : Jaw::open);
  }
}

inline void set_pressure(SessionState& s, const stiffness::PressureSetting& p, const RuntimeContext& ctx) {
  if (s.phase != Phase::Prepare && s.phase != Phase::SwabMount && s.phase != Phase::LockedHome)
    throw PhaseViolation("pressure is pre-adjusted only before insertion");
  const auto eff = ctx.effective_at(p);
  s.pressure = p;
  s.fixture.k_axial_effective = eff.axial;
}

inline void command_wrist(SessionState& s, const Vec3& master_delta, const RuntimeContext& ctx) {
  if (s.phase != Phase::TeleopSampling) throw PhaseViolation("master motion only during TeleopSampling");
  if (!master_delta.allFinite()) throw OutOfRange("non-finite master delta");
  const Vec3 target = s.slave_target + map_master_delta(master_delta, s.mapping);

  fixture::ProjectionResult res = fixture::project(target, s.fixture, s.wrist_q, ctx.geom);
  if (!s.fixture.enabled) {
    const Vec3 origin = s.fixture.origin.position;
    const Vec3 anchor = kinematics::config_to_tip(s.wrist_q, ctx.geom).position - origin;
    const fixture::Reach reached = fixture::reach_toward(anchor, s.wrist_q, target, origin, ctx.geom);
    if (reached.delta != target) {
      res.active |= fixture::kWorkspace;
      res.motion_violation = reached.delta - target;
    }
    res.delta_cmd = reached.delta;
    res.q_cmd = reached.q;
  }
  const ActuatorLengths cables = kinematics::config_to_actuator(res.q_cmd, ctx.geom);
  const auto jac = kinematics::numeric_jacobian(res.q_cmd, ctx.geom);

  s.slave_target = target;
  s.wrist_q = res.q_cmd;
  s.cables = cables;
  s.active = res.active;
  if (res.active == fixture::kNoConstraint) {
    s.force = {};
  } else {
    s.force = fixture::master_force(fixture::motion_force(res.motion_violation, ctx.gains),
                                    fixture::stiffness_force(res.stiffness_violation, ctx.gains), jac, s.mapping,
                                    ctx.force_cap);
  }
}

inline void jog(SessionState& s, const Jog& j) {
  const Phase p = s.phase;
  const bool phase_ok = p == Phase::Prepare || p == Phase::SwabMount || p == Phase::LockedHome ||
                        p == Phase::InsertionAndVfSelect || p == Phase::Withdraw;
  if (!phase_ok) throw PhaseViolation("RCM jog not accepted in phase " + std::string(to_string(p)));
  if (s.rcm.locked(j.joint)) throw PhaseViolation(std::string(to_string(j.joint)) + " is locked");
  if (!std::isfinite(j.delta)) throw OutOfRange("non-finite jog");
  switch (j.joint) {
    case Joint::j1: s.rcm.j1_target = std::clamp(s.rcm.j1_target + j.delta, 0.0, kJ1Max); break;
    case Joint::j2: s.rcm.j2_target = std::clamp(s.rcm.j2_target + j.delta, 0.0, kJ2Max); break;
    case Joint::j3: s.rcm.j3_pending += j.delta; break;
  }
}

inline double approach(double value, double target, double max_step) {
  if (std::abs(target - value) <= max_step) return target;
  return value + std::copysign(max_step, target - value);
}

inline void apply(SessionState& s, const Event& e, const RuntimeContext& ctx) {
  if (s.finished) throw PhaseViolation("session finished");
  std::visit(
      [&](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, MasterDelta>) {
          command_wrist(s, ev.delta, ctx);
        } else if constexpr (std::is_same_v<T, Trigger>) {
          fsm(s, ev, ctx);
        } else if constexpr (std::is_same_v<T, Pedal>) {
          fsm(s, ev, ctx);
        } else if constexpr (std::is_same_v<T, PhaseEvent>) {
          fsm(s, ev.command, ctx);
        } else if constexpr (std::is_same_v<T, Jog>) {
          jog(s, ev);
        } else if constexpr (std::is_same_v<T, SetPressure>) {
          set_pressure(s, stiffness::PressureSetting(ev.kpa), ctx);
        } else if constexpr (std::is_same_v<T, SetVfDiameter>) {
          if (s.phase > Phase::TeleopSampling) throw PhaseViolation("VF range is fixed once sampling ends");
          s.fixture.r_throat = fixture::FixtureSpec::radius_from_diameter(ev.diameter_mm);
        } else if constexpr (std::is_same_v<T, SetScale>) {
          MasterMapping m = s.mapping;
          m.k_scale = ev.k_scale;
          m.validate();
          s.mapping = m;
        }
      },
      e);
}

// Copy of everything but the trace; events never touch the trace.
inline SessionState copy_without_trace(const SessionState& s) {
  SessionState out;
  out.phase = s.phase;
  out.rcm = s.rcm;
  out.wrist_q = s.wrist_q;
  out.cables = s.cables;
  out.fixture = s.fixture;
  out.gripper = s.gripper;
  out.pressure = s.pressure;
  out.mapping = s.mapping;
  out.slave_target = s.slave_target;
  out.force = s.force;
  out.active = s.active;
  out.step = s.step;
  out.finished = s.finished;
  return out;
}

/// Integrates joints and gripper over one period and records the step.
inline void advance(SessionState& s, double dt, const RuntimeContext& ctx) {
  if (!(dt > 0.0)) throw OutOfRange("dt must be > 0");
  if (s.finished) return;
  s.rcm.j1 = approach(s.rcm.j1, s.rcm.j1_target, ctx.rates.linear_mm_s * dt);
  s.rcm.j2 = approach(s.rcm.j2, s.rcm.j2_target, ctx.rates.angular_deg_s * dt);
  if (s.rcm.j3_pending != 0.0) {
    const double move = approach(0.0, s.rcm.j3_pending, ctx.rates.angular_deg_s * dt);
    s.rcm.j3_pending -= move;
    if (std::abs(s.rcm.j3_pending) < 1e-12) s.rcm.j3_pending = 0.0;
    s.rcm.j3 = std::fmod(s.rcm.j3 + move, kJ3Period);
    if (s.rcm.j3 < 0.0) s.rcm.j3 += kJ3Period;
    if (s.rcm.j3 >= kJ3Period) s.rcm.j3 = 0.0;
  }
  s.gripper.settle_s = std::max(0.0, s.gripper.settle_s - dt);
  if (s.gripper.settle_s < 1e-12) s.gripper.settle_s = 0.0;

  TraceEntry row;
  row.t_s = s.time_s(dt);
  row.phase = s.phase;
  row.tip = insertion_tip(s, ctx.geom);
  row.q = s.wrist_q;
  row.master_force = s.force.master_force;
  row.active = s.active;
  row.j1 = s.rcm.j1;
  s.trace.push_back(row);
  ++s.step;
  if (s.phase == Phase::Done) s.finished = true;
}

}  // namespace detail

/// Pure FSM transition for an operator event. Throws IllegalTransition or
/// PhaseViolation, leaving `s` untouched.
inline SessionState fsm_advance(const SessionState& s, const FsmEvent& event, const RuntimeContext& ctx) {
  SessionState next = s;
  detail::fsm(next, event, ctx);
  return next;
}

inline SessionState set_pressure(const SessionState& s, const stiffness::PressureSetting& p,
                                 const RuntimeContext& ctx) {
  SessionState next = s;
  detail::set_pressure(next, p, ctx);
  return next;
}

/// One control period: apply every input in order, then advance time and
/// append the trace row. Any illegal input throws and leaves `s` untouched.
inline SessionState control_step(const SessionState& s, const StepInput& input, double dt,
                                 const RuntimeContext& ctx) {
  SessionState next = detail::copy_without_trace(s);
  for (const auto& e : input.events) detail::apply(next, e, ctx);
  next.trace = s.trace;
  detail::advance(next, dt, ctx);
  return next;
}

/// Sole owner of a live session. Each input is applied transactionally so an
/// illegal event is reported and dropped without affecting the others.
class Controller {
 public:
  struct Rejected {
    std::size_t index = 0;  // position in the step's input list
    std::string message;
  };

  explicit Controller(RuntimeContext ctx) : ctx_(std::move(ctx)), state_(make_session(ctx_)) {}

  std::vector<Rejected> step(const std::vector<Event>& events) {
    std::vector<Rejected> rejected;
    for (std::size_t i = 0; i < events.size(); ++i) {
      SessionState work = detail::copy_without_trace(state_);
      try {
        detail::apply(work, events[i], ctx_);
      } catch (const Error& e) {
        rejected.push_back({i, e.what()});
        continue;
      }
      work.trace = std::move(state_.trace);
      state_ = std::move(work);
    }
    detail::advance(state_, ctx_.dt, ctx_);
    return rejected;
  }

  const SessionState& state() const noexcept { return state_; }
  const RuntimeContext& context() const noexcept { return ctx_; }

 private:
  RuntimeContext ctx_;
  SessionState state_;
};

}  // namespace toos::teleop
