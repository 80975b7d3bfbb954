#include "levi/wire.hpp"

#include <cmath>

namespace levi::wire {

Vec3 vec_from_mm(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ProtocolError(std::string(what) + " must be an array of 3 numbers (mm)");
  }
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw ProtocolError(std::string(what) + " must hold numbers");
    v[a] = j[a].get<double>() * 1e-3;
  }
  if (!v.allFinite()) throw ProtocolError(std::string(what) + " must be finite");
  return v;
}

nlohmann::json vec_to_mm(const Vec3& v) { return {v[0] * 1e3, v[1] * 1e3, v[2] * 1e3}; }

ClientMessage parse_client_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  const std::string type = j.value("type", std::string("cursor"));
  if (type == "cursor") {
    runtime::CursorInput in;
    if (!j.contains("seq") || !j["seq"].is_number_unsigned()) {
      throw ProtocolError("cursor message needs a non-negative integer seq");
    }
    in.seq = j["seq"].get<std::uint64_t>();
    if (j.contains("t_client")) {
      if (!j["t_client"].is_number()) throw ProtocolError("t_client must be a number");
      in.t_client = j["t_client"].get<double>();
    }
    if (!j.contains("cursor")) throw ProtocolError("cursor message needs cursor");
    in.cursor = vec_from_mm(j["cursor"], "cursor");
    return in;
  }
  if (type == "calibrate") {
    CalibrateMessage m;
    if (!j.contains("index") || !j["index"].is_number_integer()) {
      throw ProtocolError("calibrate needs an integer index");
    }
    m.index = j["index"].get<int>();
    if (m.index != 0 && m.index != 1) throw ProtocolError("calibrate index must be 0 or 1");
    if (!j.contains("position")) throw ProtocolError("calibrate needs position");
    m.position = vec_from_mm(j["position"], "position");
    return m;
  }
  if (type == "start") return StartMessage{};
  if (type == "latency") {
    if (!j.contains("rtt_ms") || !j["rtt_ms"].is_number()) throw ProtocolError("latency needs rtt_ms");
    const double rtt = j["rtt_ms"].get<double>();
    if (!(rtt >= 0.0) || !std::isfinite(rtt)) throw ProtocolError("rtt_ms must be finite and >= 0");
    return LatencyMessage{rtt};
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

std::string encode_cursor(const runtime::CursorInput& in) {
  return nlohmann::json{{"seq", in.seq}, {"t_client", in.t_client}, {"cursor", vec_to_mm(in.cursor)}}
      .dump();
}

std::string encode_calibrate(int index, const Vec3& position) {
  return nlohmann::json{{"type", "calibrate"}, {"index", index}, {"position", vec_to_mm(position)}}
      .dump();
}

std::string encode_start() { return R"({"type":"start"})"; }

std::string encode_latency(double rtt_ms) {
  return nlohmann::json{{"type", "latency"}, {"rtt_ms", rtt_ms}}.dump();
}

nlohmann::json event_json(const session::SessionEvent& e) {
  return {{"kind", session::to_string(e.kind)}, {"t", e.t}, {"payload", e.payload}};
}

nlohmann::json frame_json(const session::Frame& f) {
  nlohmann::json j{{"type", "state"},
                   {"tick", f.tick},
                   {"t", f.t},
                   {"ack_seq", f.ack_seq},
                   {"particle", vec_to_mm(f.particle)},
                   {"trap", vec_to_mm(f.trap)},
                   {"target", vec_to_mm(f.target)},
                   {"in_target", f.in_target},
                   {"aim", f.aim},
                   {"condition", f.condition},
                   {"radius", f.radius * 1e3},
                   {"targets", {vec_to_mm(f.targets[0]), vec_to_mm(f.targets[1])}},
                   {"phase", session::to_string(f.phase)}};
  if (f.event) j["event"] = event_json(*f.event);
  return j;
}

nlohmann::json hello_json(const session::SessionEngine& engine, double frame_rate) {
  const auto& g = engine.geometry();
  const auto& cfg = engine.config();
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : engine.conditions()) {
    conds.push_back({{"radius", c.radius * 1e3}, {"nominal_radius", c.nominal_radius * 1e3}});
  }
  return {{"type", "hello"},
          {"units", "mm"},
          {"targets", {vec_to_mm(g.targets[0]), vec_to_mm(g.targets[1])}},
          {"scale", g.scale},
          {"conditions", conds},
          {"movements", cfg.movements},
          {"cd_ratio", cfg.cd_ratio},
          {"frame_rate", frame_rate},
          {"placement", vec_to_mm(engine.runtime_state().trap)},
          {"phase", session::to_string(engine.phase())}};
}

std::string encode_abort(const std::string& reason) {
  return nlohmann::json{{"type", "abort"}, {"reason", reason}}.dump();
}

std::string encode_error(const std::string& message) {
  return nlohmann::json{{"type", "error"}, {"message", message}}.dump();
}

StateView parse_state(const nlohmann::json& j) {
  if (j.value("type", "") != "state") throw ProtocolError("not a state frame");
  StateView s;
  s.tick = j.at("tick").get<std::uint64_t>();
  s.ack_seq = j.at("ack_seq").get<std::uint64_t>();
  s.t = j.at("t").get<double>();
  s.particle = vec_from_mm(j.at("particle"), "particle");
  s.trap = vec_from_mm(j.at("trap"), "trap");
  s.target = vec_from_mm(j.at("target"), "target");
  s.in_target = j.at("in_target").get<bool>();
  s.aim = j.at("aim").get<int>();
  s.radius = j.at("radius").get<double>() * 1e-3;
  s.phase = j.at("phase").get<std::string>();
  const auto& tg = j.at("targets");
  if (!tg.is_array() || tg.size() != 2) throw ProtocolError("targets must hold two points");
  s.targets = {vec_from_mm(tg[0], "targets"), vec_from_mm(tg[1], "targets")};
  if (j.contains("event")) s.event = j["event"];
  return s;
}

}  // namespace levi::wire
