#pragma once

#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

#include "levi/session.hpp"

// Text protocol between the session service and its client. Millimetres on
// the wire, metres everywhere else.
//
// client -> server
//   {"seq": n, "t_client": s, "cursor": [x, y, z]}         (type optional, "cursor")
//   {"type": "calibrate", "index": 0|1, "position": [x, y, z]}
//   {"type": "start"}
//   {"type": "latency", "rtt_ms": x}                        client-measured round trip
// server -> client
//   {"type": "hello", ...session geometry...}              once, on connect
//   {"type": "state", "tick", "ack_seq", "particle", "trap", "in_target", "event"?, ...}
//   {"type": "error", "message"}                            rejected request, session goes on
//   {"type": "abort", "reason"}                             then close
namespace levi::wire {

class ProtocolError : public Error {
 public:
  using Error::Error;
};

struct CalibrateMessage {
  int index = 0;
  Vec3 position = Vec3::Zero();
};
struct StartMessage {};
struct LatencyMessage {
  double rtt_ms = 0.0;
};
using ClientMessage =
    std::variant<runtime::CursorInput, CalibrateMessage, StartMessage, LatencyMessage>;

ClientMessage parse_client_message(std::string_view text);

std::string encode_cursor(const runtime::CursorInput& in);
std::string encode_calibrate(int index, const Vec3& position);
std::string encode_start();
std::string encode_latency(double rtt_ms);

nlohmann::json event_json(const session::SessionEvent& e);
nlohmann::json frame_json(const session::Frame& f);
nlohmann::json hello_json(const session::SessionEngine& engine, double frame_rate);
std::string encode_abort(const std::string& reason);
std::string encode_error(const std::string& message);

/// Decoded server state frame, for clients and tests.
struct StateView {
  std::uint64_t tick = 0;
  std::uint64_t ack_seq = 0;
  double t = 0.0;
  Vec3 particle = Vec3::Zero();
  Vec3 trap = Vec3::Zero();
  Vec3 target = Vec3::Zero();
  bool in_target = false;
  int aim = 0;
  double radius = 0.0;
  std::array<Vec3, 2> targets{};
  std::string phase;
  std::optional<nlohmann::json> event;
};
StateView parse_state(const nlohmann::json& j);

Vec3 vec_from_mm(const nlohmann::json& j, const char* what);
nlohmann::json vec_to_mm(const Vec3& v);

}  // namespace levi::wire
