#pragma once

// Wire messages: {"v":1, "kind":..., "seq":n, "t":ms, "payload":{...}}.
// Inbound kinds carry operator inputs; outbound kinds report the session.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "toos/errors.hpp"
#include "toos/gateway/config.hpp"
#include "toos/teleop.hpp"

namespace toos::gateway {

using nlohmann::json;

inline constexpr int kWireVersion = 1;

struct VersionMismatch : ProtocolError {
  using ProtocolError::ProtocolError;
};

struct Message {
  int v = kWireVersion;
  std::string kind;
  std::uint64_t seq = 0;
  double t_ms = 0.0;
  json payload = json::object();
};

inline constexpr std::array<std::string_view, 8> kInboundKinds{
    "master_delta", "trigger", "pedal", "jog", "set_pressure", "set_vf_radius", "set_scale", "phase_event"};
inline constexpr std::array<std::string_view, 3> kOutboundKinds{"state_update", "force_echo", "error"};

inline bool is_inbound_kind(std::string_view k) {
  for (auto s : kInboundKinds)
    if (s == k) return true;
  return false;
}

inline bool is_known_kind(std::string_view k) {
  if (is_inbound_kind(k)) return true;
  for (auto s : kOutboundKinds)
    if (s == k) return true;
  return false;
}

inline std::string encode(const Message& m) {
  json j{{"v", m.v}, {"kind", m.kind}, {"seq", m.seq}, {"t", m.t_ms}, {"payload", m.payload}};
  return j.dump();
}

inline Message decode(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  if (!j.contains("v") || !j["v"].is_number_integer()) throw ProtocolError("missing integer field 'v'");
  if (j["v"].get<int>() != kWireVersion)
    throw VersionMismatch("unsupported protocol version " + j["v"].dump());
  Message m;
  if (!j.contains("kind") || !j["kind"].is_string()) throw ProtocolError("missing string field 'kind'");
  m.kind = j["kind"].get<std::string>();
  if (!is_known_kind(m.kind)) throw ProtocolError("unknown kind '" + m.kind + "'");
  if (!j.contains("seq") || !j["seq"].is_number_unsigned()) throw ProtocolError("missing unsigned field 'seq'");
  m.seq = j["seq"].get<std::uint64_t>();
  if (j.contains("t")) {
    if (!j["t"].is_number() || j["t"].get<double>() < 0.0) throw ProtocolError("field 't' must be >= 0");
    m.t_ms = j["t"].get<double>();
  }
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw ProtocolError("payload must be an object");
    m.payload = j["payload"];
  }
  return m;
}

namespace detail {

inline double number(const json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_number()) throw ProtocolError(std::string("payload needs number '") + key + "'");
  return p[key].get<double>();
}

inline std::string text(const json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_string()) throw ProtocolError(std::string("payload needs string '") + key + "'");
  return p[key].get<std::string>();
}

}  // namespace detail

inline teleop::Event to_event(const Message& m) {
  using namespace teleop;
  const json& p = m.payload;
  try {
    if (m.kind == "master_delta")
      return MasterDelta{{detail::number(p, "dx"), detail::number(p, "dy"), detail::number(p, "dz")}};
    if (m.kind == "trigger") {
      if (p.contains("enable") && !p["enable"].is_boolean()) throw ProtocolError("'enable' must be boolean");
      return Trigger{p.value("enable", true)};
    }
    if (m.kind == "pedal") return Pedal{};
    if (m.kind == "jog") return Jog{joint_from_string(detail::text(p, "joint")), detail::number(p, "delta")};
    if (m.kind == "set_pressure") return SetPressure{detail::number(p, "kpa")};
    if (m.kind == "set_vf_radius") return SetVfDiameter{detail::number(p, "diameter_mm")};
    if (m.kind == "set_scale") return SetScale{detail::number(p, "k_scale")};
    if (m.kind == "phase_event") return PhaseEvent{phase_command_from_string(detail::text(p, "event"))};
  } catch (const ParseError& e) {
    throw ProtocolError(e.what());
  }
  throw ProtocolError("kind '" + m.kind + "' is not an operator input");
}

inline Message to_message(const teleop::Event& e) {
  using namespace teleop;
  Message m;
  std::visit(
      [&](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, MasterDelta>) {
          m.kind = "master_delta";
          m.payload = {{"dx", ev.delta.x()}, {"dy", ev.delta.y()}, {"dz", ev.delta.z()}};
        } else if constexpr (std::is_same_v<T, Trigger>) {
          m.kind = "trigger";
          m.payload = {{"enable", ev.enable}};
        } else if constexpr (std::is_same_v<T, Pedal>) {
          m.kind = "pedal";
        } else if constexpr (std::is_same_v<T, Jog>) {
          m.kind = "jog";
          m.payload = {{"joint", to_string(ev.joint)}, {"delta", ev.delta}};
        } else if constexpr (std::is_same_v<T, SetPressure>) {
          m.kind = "set_pressure";
          m.payload = {{"kpa", ev.kpa}};
        } else if constexpr (std::is_same_v<T, SetVfDiameter>) {
          m.kind = "set_vf_radius";
          m.payload = {{"diameter_mm", ev.diameter_mm}};
        } else if constexpr (std::is_same_v<T, SetScale>) {
          m.kind = "set_scale";
          m.payload = {{"k_scale", ev.k_scale}};
        } else if constexpr (std::is_same_v<T, PhaseEvent>) {
          m.kind = "phase_event";
          m.payload = {{"event", to_string(ev.command)}};
        }
      },
      e);
  return m;
}

inline json vec_json(const Eigen::Vector3d& v) { return {{"x", v.x()}, {"y", v.y()}, {"z", v.z()}}; }

inline json constraint_names(unsigned active) {
  json out = json::array();
  if (active & fixture::kMotion) out.push_back("motion");
  if (active & fixture::kStiffness) out.push_back("stiffness");
  if (active & fixture::kWorkspace) out.push_back("workspace");
  return out;
}

/// Scene snapshot for the UI: everything needed to draw the wrist, the
/// throat plane and the fixture without client-side prediction.
inline json state_payload(const teleop::SessionState& s, const RunConfig& cfg) {
  const auto tip = teleop::insertion_tip(s, cfg.geometry);
  json locks = json::array();
  for (bool l : s.rcm.locks) locks.push_back(l);
  return {
      {"step", s.step == 0 ? 0 : s.step - 1},
      {"t_s", s.trace.empty() ? 0.0 : s.trace.back().t_s},
      {"phase", teleop::to_string(s.phase)},
      {"finished", s.finished},
      {"rcm", {{"j1", s.rcm.j1}, {"j2", s.rcm.j2}, {"j3", s.rcm.j3}, {"locks", locks}}},
      {"wrist", {{"alpha", s.wrist_q.alpha}, {"beta", s.wrist_q.beta}, {"l", s.wrist_q.length}}},
      {"cables", {s.cables[0], s.cables[1], s.cables[2]}},
      {"tip", vec_json(tip.position)},
      {"gripper", s.gripper.state == teleop::Jaw::open ? "open" : "closed"},
      {"pressure_kpa", s.pressure.kpa()},
      {"k_scale", s.mapping.k_scale},
      {"vf",
       {{"enabled", s.fixture.enabled},
        {"diameter_mm", 2.0 * s.fixture.r_throat},
        {"l_button", s.fixture.l_button},
        {"l_stiffness", s.fixture.l_stiffness()},
        {"origin", vec_json(s.fixture.origin.position)}}},
      {"phantom",
       {{"z_throat", cfg.phantom.z_throat},
        {"entrance_depth", cfg.phantom.entrance_depth},
        {"cavity_radius", cfg.phantom.cavity_radius},
        {"patch", {{"x", cfg.phantom.patch_center.x()}, {"y", cfg.phantom.patch_center.y()}, {"r", cfg.phantom.patch_radius}}}}},
  };
}

inline json force_payload(const teleop::SessionState& s, double f_safety) {
  const Eigen::Vector3d f = s.force.master_force;
  return {{"step", s.step == 0 ? 0 : s.step - 1},
          {"fx", f.x()},
          {"fy", f.y()},
          {"fz", f.z()},
          {"magnitude", f.norm()},
          {"f_safety", f_safety},
          {"active", constraint_names(s.active)}};
}

inline json error_payload(const std::string& message, std::optional<std::uint64_t> ref_seq = std::nullopt) {
  json p{{"message", message}};
  if (ref_seq) p["ref_seq"] = *ref_seq;
  return p;
}

}  // namespace toos::gateway
