#pragma once

// End-to-end acceptance suite. Each criterion reports the measured value next
// to its bound so a failing run says by how much.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <future>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "toos/gateway/config.hpp"
#include "toos/gateway/io.hpp"
#include "toos/gateway/replay.hpp"
#include "toos/gateway/scenario.hpp"
#include "toos/gateway/server.hpp"
#include "toos/kinematics.hpp"
#include "toos/mapping.hpp"
#include "toos/testing/oracles.hpp"
#include "toos/virtual_fixture.hpp"

namespace toos::acceptance {

using gateway::RunConfig;
using kinematics::Vec3;
using nlohmann::json;

struct Criterion {
  std::string id;
  std::string description;
  bool pass = false;
  std::string measured;
  std::string bound;
  double seconds = 0.0;
};

struct Report {
  std::vector<Criterion> criteria;

  bool all_pass() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.pass; });
  }

  json to_json() const {
    json out = json::array();
    for (const auto& c : criteria)
      out.push_back({{"id", c.id},
                     {"description", c.description},
                     {"pass", c.pass},
                     {"measured", c.measured},
                     {"bound", c.bound},
                     {"seconds", c.seconds}});
    return {{"pass", all_pass()}, {"criteria", out}};
  }
};

inline std::string line(const Criterion& c) {
  return fmt::format("{} {:<24} measured: {}  bound: {}  ({:.2f} s)", c.pass ? "PASS" : "FAIL", c.id, c.measured,
                     c.bound, c.seconds);
}

struct Options {
  std::uint64_t seed = 20240611;
  double wire_realtime_factor = 4.0;
  std::filesystem::path scratch = std::filesystem::temp_directory_path();
};

// Measured effective axial stiffness [N/mm] at 0, 30, 60, 90 kPa.
inline constexpr std::array<double, 4> kMeasuredPressures{0.0, 30.0, 60.0, 90.0};
inline constexpr std::array<double, 4> kMeasuredWoodAxial{2.856, 4.364, 5.4659, 6.269};
inline constexpr std::array<double, 4> kMeasuredMetalAxial{3.010, 4.735, 6.061, 7.064};

namespace detail {

template <class F>
Criterion timed(std::string id, std::string description, F&& body) {
  Criterion c;
  c.id = std::move(id);
  c.description = std::move(description);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.pass = false;
    c.measured = std::string("error: ") + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

inline kinematics::ConfigState random_valid_config(std::mt19937_64& rng, const kinematics::WristGeometry& g) {
  std::uniform_real_distribution<double> alpha(-kinematics::kPi, kinematics::kPi);
  std::uniform_real_distribution<double> beta(0.0, g.beta_max);
  std::uniform_real_distribution<double> len(g.l_min, g.l_max);
  while (true) {
    const auto q = kinematics::canonical({alpha(rng), beta(rng), len(rng)});
    if (kinematics::within_limits(kinematics::detail::cables_unchecked(q, g.cable_radius), g)) return q;
  }
}

inline std::string sci(double v) { return fmt::format("{:.3e}", v); }

}  // namespace detail

inline Criterion kinematics_roundtrip(const RunConfig& cfg, const Options& opt) {
  return detail::timed("kinematics_roundtrip", "10000 random configurations, both roundtrips < 1e-9, < 5 s",
                       [&](Criterion& c) {
                         std::mt19937_64 rng(opt.seed);
                         const auto& g = cfg.geometry;
                         double err_a = 0.0, err_p = 0.0;
                         const auto t0 = std::chrono::steady_clock::now();
                         for (int i = 0; i < 10000; ++i) {
                           const auto q = detail::random_valid_config(rng, g);
                           const auto a = kinematics::config_to_actuator(q, g);
                           const auto a2 = kinematics::config_to_actuator(kinematics::actuator_to_config(a, g), g);
                           for (std::size_t k = 0; k < 3; ++k) err_a = std::max(err_a, std::abs(a[k] - a2[k]));
                           if (q.beta < 1e-9) continue;
                           const auto p = kinematics::centerline_endpoint(q);
                           const auto p2 = kinematics::centerline_endpoint(kinematics::tip_to_config(p, g));
                           err_p = std::max(err_p, (p - p2).norm());
                         }
                         const double secs =
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                         c.pass = err_a < 1e-9 && err_p < 1e-9 && secs < 5.0;
                         c.measured = fmt::format("actuator {} mm, tip {} mm, {:.3f} s", detail::sci(err_a),
                                                  detail::sci(err_p), secs);
                         c.bound = "< 1e-9 mm each, < 5 s";
                       });
}

inline Criterion stiffness_reproduction(const RunConfig& cfg, const Options&) {
  return detail::timed("stiffness_reproduction", "wood/metal effective axial stiffness vs measured within 5%",
                       [&](Criterion& c) {
                         double worst = 0.0;
                         for (const auto& [name, values] :
                              {std::pair{"wood", kMeasuredWoodAxial}, std::pair{"metal", kMeasuredMetalAxial}}) {
                           const auto& swab = gateway::find_swab(cfg.swabs, name);
                           for (std::size_t i = 0; i < 4; ++i) {
                             const auto w = stiffness::wrist_stiffness(stiffness::PressureSetting(kMeasuredPressures[i]),
                                                                       cfg.calibration);
                             const double k = stiffness::effective_stiffness(w, swab.stiffness).axial;
                             worst = std::max(worst, std::abs(k - values[i]) / values[i]);
                           }
                         }
                         c.pass = worst < 0.05;
                         c.measured = fmt::format("max relative error {:.4f}", worst);
                         c.bound = "< 0.05";
                       });
}

inline Criterion force_cap(const RunConfig& cfg, const Options& opt) {
  return detail::timed("force_cap", "overdrive: VF on <= 0.588 N + 1e-6, VF off > 0.588 N", [&](Criterion& c) {
    auto run = [&](bool vf) {
      gateway::ScenarioOptions so;
      so.kind = gateway::ScenarioKind::overdrive;
      so.vf_enabled = vf;
      so.seed = opt.seed;
      const auto sc = gateway::make_scenario(cfg, so);
      RunConfig local = cfg;
      local.phantom = sc.phantom;
      return gateway::replay(sc.trajectory, local).success.max_normal_force;
    };
    const double on = run(true);
    const double off = run(false);
    constexpr double kLimit = 0.588;
    c.pass = on <= kLimit + 1e-6 && off > kLimit;
    c.measured = fmt::format("VF on {:.6f} N, VF off {:.4f} N", on, off);
    c.bound = "on <= 0.588001, off > 0.588";
  });
}

inline Criterion projection_oracle(const RunConfig& cfg, const Options& opt) {
  return detail::timed("projection_oracle", "500 commands, projector objective within 1e-3 mm of brute force",
                       [&](Criterion& c) {
                         std::mt19937_64 rng(opt.seed + 1);
                         std::uniform_real_distribution<double> diameter(fixture::kMinDiameter, fixture::kMaxDiameter);
                         std::uniform_real_distribution<double> unit(-1.0, 1.0);
                         const auto& g = cfg.geometry;
                         const auto home = teleop::home_config(g);
                         double worst = 0.0;
                         int infeasible = 0;
                         for (int i = 0; i < 500; ++i) {
                           fixture::FixtureSpec fx;
                           fx.enabled = true;
                           fx.r_throat = diameter(rng) / 2.0;
                           fx.l_button = home.length;
                           fx.f_safety = cfg.f_safety;
                           fx.k_axial_effective = cfg.effective_at(cfg.initial_pressure_kpa).axial;
                           fx.origin = kinematics::config_to_tip(home, g);
                           const Vec3 cmd(1.5 * fx.r_throat * unit(rng), 1.5 * fx.r_throat * unit(rng),
                                          4.0 * unit(rng));
                           const auto res = fixture::project(cmd, fx, home, g);
                           const double ours = (res.delta_cmd - cmd).norm();
                           const auto oracle = testing::brute_force_projection(
                               cmd, fx.r_throat, fx.length_bound(), fx.origin.position.z(), g.tip_offset);
                           worst = std::max(worst, std::abs(ours - oracle.distance));
                           const double rho = std::hypot(res.delta_cmd.x(), res.delta_cmd.y());
                           const double cap = testing::max_tip_z(rho, fx.length_bound(), g.tip_offset) -
                                              fx.origin.position.z();
                           if (rho > fx.r_throat + 1e-9 || !(res.delta_cmd.z() <= cap + 1e-6)) ++infeasible;
                         }
                         c.pass = worst <= 1e-3 && infeasible == 0;
                         c.measured = fmt::format("max |objective gap| {} mm, {} infeasible", detail::sci(worst),
                                                  infeasible);
                         c.bound = "<= 1e-3 mm, 0 infeasible";
                       });
}

inline Criterion success_rate(const RunConfig& cfg, const Options&) {
  return detail::timed("success_rate", "20 seeded randomized sessions via replay, 20/20, < 60 s", [&](Criterion& c) {
    int ok = 0;
    double min_dwell = std::numeric_limits<double>::infinity();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      gateway::ScenarioOptions so;
      so.seed = seed;
      so.randomize_phantom = true;
      const auto sc = gateway::make_scenario(cfg, so);
      RunConfig local = cfg;
      local.phantom = sc.phantom;
      const auto r = gateway::replay(sc.trajectory, local);
      ok += r.success.success && r.final_phase == teleop::Phase::Done;
      min_dwell = std::min(min_dwell, r.success.dwell_s);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.pass = ok == 20 && secs < 60.0;
    c.measured = fmt::format("{}/20 (min dwell {:.2f} s), {:.2f} s", ok, min_dwell, secs);
    c.bound = "20/20, < 60 s";
  });
}

inline Criterion loop_timing(const RunConfig& cfg, const Options& opt) {
  return detail::timed("loop_timing", "10000 control steps, p99 < 40 ms", [&](Criterion& c) {
    gateway::ScenarioOptions so;
    so.seed = opt.seed;
    const auto sc = gateway::make_scenario(cfg, so);
    teleop::Controller ctrl(cfg.runtime_context());
    for (std::uint64_t k = 0; ctrl.state().phase != teleop::Phase::TeleopSampling; ++k) {
      if (k > sc.trajectory.last_step()) throw Error("scenario never reached TeleopSampling");
      ctrl.step(sc.trajectory.at(k));
    }
    // bounded random walk that keeps running into the fixture boundary
    std::mt19937_64 rng(opt.seed + 2);
    std::normal_distribution<double> n(0.0, 0.6);
    Vec3 pos = Vec3::Zero();
    std::vector<double> ms;
    ms.reserve(10000);
    for (int i = 0; i < 10000; ++i) {
      Vec3 d(n(rng), n(rng), n(rng));
      d -= 0.02 * pos;
      pos += d;
      const std::vector<teleop::Event> ev{teleop::MasterDelta{d}};
      const auto t0 = std::chrono::steady_clock::now();
      ctrl.step(ev);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const double p99 = ms[static_cast<std::size_t>(0.99 * (ms.size() - 1))];
    c.pass = p99 < 40.0;
    c.measured = fmt::format("p99 {:.4f} ms, max {:.4f} ms", p99, ms.back());
    c.bound = "p99 < 40 ms";
  });
}

inline Criterion mapping_arithmetic(const RunConfig&, const Options&) {
  return detail::timed("mapping_arithmetic", "k_scale halving and axis map", [&](Criterion& c) {
    MasterMapping m;  // k_scale 2, default axis map
    double err = 0.0;
    auto check = [&](const Vec3& master, const Vec3& expected) {
      err = std::max(err, (map_master_delta(master, m) - expected).norm());
    };
    check({10, 0, 0}, {0, 5, 0});
    check({0, 10, 0}, {5, 0, 0});
    check({0, 0, 10}, {0, 0, -5});
    check({2, -4, 6}, {-2, 1, -3});
    m.k_scale = 1.0;
    check({1, 2, 3}, {2, 1, -3});
    m.k_scale = 2.0;
    // a slave-frame force maps back through the transpose
    const auto f = fixture::master_force(Vec3(1, 0, 0), Vec3::Zero(), kinematics::Mat3::Identity(), m, 3.0);
    err = std::max(err, (f.master_force - Vec3(0, 1, 0)).norm());
    c.pass = err < 1e-12;
    c.measured = fmt::format("max error {}", detail::sci(err));
    c.bound = "< 1e-12";
  });
}

inline Criterion transport_transparency(const RunConfig& cfg, const Options& opt) {
  return detail::timed("transport_transparency", "wire-driven vs in-process trace, max difference <= 1e-9",
                       [&](Criterion& c) {
                         gateway::ScenarioOptions so;
                         so.seed = opt.seed;
                         const auto sc = gateway::make_scenario(cfg, so);
                         RunConfig local = cfg;
                         local.phantom = sc.phantom;
                         const auto in_process = gateway::replay(sc.trajectory, local);

                         const auto path = opt.scratch / fmt::format("toos_wire_trace_{}.csv", ::getpid());
                         gateway::ServeOptions so_srv;
                         so_srv.port = 0;
                         so_srv.max_sessions = 1;
                         so_srv.realtime_factor = opt.wire_realtime_factor;
                         so_srv.trace_path = path;
                         std::promise<int> port_promise;
                         so_srv.on_listening = [&](int p) { port_promise.set_value(p); };
                         gateway::SessionSummary summary;
                         so_srv.on_session_end = [&](const gateway::SessionSummary& s) { summary = s; };
                         std::exception_ptr server_error;
                         std::thread server([&] {
                           try {
                             gateway::serve(local, so_srv);
                           } catch (...) {
                             server_error = std::current_exception();
                             try {
                               port_promise.set_value(-1);
                             } catch (...) {
                             }
                           }
                         });
                         const int port = port_promise.get_future().get();
                         if (port < 0) {
                           server.join();
                           std::rethrow_exception(server_error);
                         }
                         {
                           auto client = gateway::WireClient::connect("127.0.0.1", port);
                           gateway::drive_trajectory(client, sc.trajectory);
                           client.close();
                         }
                         server.join();
                         if (server_error) std::rethrow_exception(server_error);

                         std::stringstream ss;
                         gateway::write_trace(ss, in_process.trace);
                         const auto a = gateway::parse_trace(ss);
                         const auto b = gateway::load_trace(path);
                         std::filesystem::remove(path);
                         const double diff = gateway::trace_difference(a, b);
                         c.pass = diff <= 1e-9;
                         c.measured = fmt::format("{} rows vs {} rows, max difference {}, late events {}", a.size(),
                                                  b.size(), detail::sci(diff), summary.late_events);
                         c.bound = "<= 1e-9";
                       });
}

inline Report run(const RunConfig& cfg, const Options& opt = {}) {
  Report r;
  r.criteria.push_back(kinematics_roundtrip(cfg, opt));
  r.criteria.push_back(stiffness_reproduction(cfg, opt));
  r.criteria.push_back(force_cap(cfg, opt));
  r.criteria.push_back(projection_oracle(cfg, opt));
  r.criteria.push_back(success_rate(cfg, opt));
  r.criteria.push_back(loop_timing(cfg, opt));
  r.criteria.push_back(mapping_arithmetic(cfg, opt));
  r.criteria.push_back(transport_transparency(cfg, opt));
  return r;
}

}  // namespace toos::acceptance
