#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "toos/gateway/replay.hpp"
#include "toos/gateway/scenario.hpp"

using namespace toos;
using namespace toos::gateway;
namespace fs = std::filesystem;

namespace {

const RunConfig& config() {
  static const RunConfig cfg = load_config(fs::path(TOOS_DATA_DIR) / "default.ini");
  return cfg;
}

ReplayResult run_fixture(const char* name) {
  return replay(load_trajectory(fs::path(TOOS_DATA_DIR) / "trajectories" / name, config().dt), config());
}

ReplayResult run_scenario(const ScenarioOptions& so) {
  const auto sc = make_scenario(config(), so);
  RunConfig local = config();
  local.phantom = sc.phantom;
  return replay(sc.trajectory, local);
}

}  // namespace

TEST(Replay, EmptyTrajectoryRunsOneStepAndFails) {
  Trajectory t;
  t.dt = config().dt;
  const auto r = replay(t, config());
  EXPECT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.final_phase, teleop::Phase::Prepare);
  EXPECT_FALSE(r.success.success);
}

TEST(Replay, ShippedSuccessRun) {
  const auto r = run_fixture("success_run.csv");
  EXPECT_TRUE(r.rejected.empty()) << r.rejected.front();
  EXPECT_EQ(r.final_phase, teleop::Phase::Done);
  EXPECT_TRUE(r.success.success);
  EXPECT_GE(r.success.dwell_s, 0.5);
  EXPECT_LE(r.success.max_normal_force, config().f_safety + 1e-6);
}

TEST(Replay, ShippedOverdriveWithoutFixtureBreachesComfort) {
  const auto r = run_fixture("vf_off_overdrive.csv");
  EXPECT_GT(r.success.max_normal_force, config().f_safety);
}

TEST(Replay, IsDeterministic) {
  ScenarioOptions so;
  so.seed = 11;
  so.randomize_phantom = true;
  auto text = [&] {
    std::stringstream ss;
    write_trace(ss, run_scenario(so).trace);
    return ss.str();
  };
  EXPECT_EQ(text(), text());
}

TEST(Replay, FixtureCapsOverdriveForce) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ScenarioOptions so;
    so.kind = ScenarioKind::overdrive;
    so.seed = seed;
    so.vf_enabled = true;
    EXPECT_LE(run_scenario(so).success.max_normal_force, 0.588 + 1e-6) << seed;
    so.vf_enabled = false;
    EXPECT_GT(run_scenario(so).success.max_normal_force, 0.588) << seed;
  }
}

TEST(Replay, RandomizedSamplingSessionsSucceed) {
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    ScenarioOptions so;
    so.seed = seed;
    so.randomize_phantom = true;
    const auto r = run_scenario(so);
    EXPECT_TRUE(r.success.success) << seed;
    EXPECT_EQ(r.final_phase, teleop::Phase::Done) << seed;
  }
}

TEST(Replay, RejectedInputsAreReportedPerStep) {
  Trajectory t;
  t.dt = config().dt;
  t.add(0, teleop::Pedal{});
  t.add(2, teleop::SetPressure{120});
  const auto r = replay(t, config());
  ASSERT_EQ(r.rejected.size(), 2u);
  EXPECT_EQ(r.rejected[0].rfind("step 0:", 0), 0u);
  EXPECT_EQ(r.rejected[1].rfind("step 2:", 0), 0u);
}
