#pragma once

#include <string>
#include <vector>

#include <fmt/format.h>

#include "toos/gateway/config.hpp"
#include "toos/gateway/io.hpp"
#include "toos/sim_env.hpp"
#include "toos/teleop.hpp"

namespace toos::gateway {

struct ReplayResult {
  std::vector<teleop::TraceEntry> trace;
  sim::SuccessReport success;
  std::vector<std::string> rejected;  // "step N: message"
  teleop::Phase final_phase = teleop::Phase::Prepare;
  double final_pressure_kpa = 0.0;
};

inline sim::SuccessReport judge(const std::vector<teleop::TraceEntry>& trace, double pressure_kpa,
                                const RunConfig& cfg) {
  sim::SuccessCriteria criteria;
  criteria.max_force = cfg.f_safety;
  return sim::evaluate_success(trace, cfg.phantom, cfg.effective_at(pressure_kpa), cfg.swab.length_mm, criteria);
}

/// Runs control steps 0..last stamped step. Deterministic in (trajectory, config).
inline ReplayResult replay(const Trajectory& traj, const RunConfig& cfg) {
  teleop::Controller controller(cfg.runtime_context());
  ReplayResult out;
  for (std::uint64_t k = 0; k <= traj.last_step(); ++k) {
    for (const auto& r : controller.step(traj.at(k))) out.rejected.push_back(fmt::format("step {}: {}", k, r.message));
  }
  const auto& s = controller.state();
  out.trace = s.trace;
  out.final_phase = s.phase;
  out.final_pressure_kpa = s.pressure.kpa();
  out.success = judge(out.trace, out.final_pressure_kpa, cfg);
  return out;
}

}  // namespace toos::gateway
