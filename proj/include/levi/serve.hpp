#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include <json.hpp>

#include "levi/config.hpp"

namespace levi::serve {

struct ServeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 = any free port
  std::string log_path;        // Fitts CSV, appended as each condition completes
  std::string report_path;     // session report JSON, rewritten when the session ends
  bool exit_when_done = false;  // return from run() once the session is over
  std::ostream* diagnostics = nullptr;  // overruns, violations; nullptr = std::cerr
};

/// Single-client websocket service around one SessionEngine. The 1 kHz loop
/// runs on its own thread and never waits for the network; cursor input
/// reaches it through a latest-value mailbox, control messages through a
/// queue. A second concurrent client is refused with HTTP 503.
class SessionServer {
 public:
  /// Binds the listening socket; throws Error if that fails.
  SessionServer(const LookupTable& table, const acoustics::AcousticModel& model, const Config& cfg,
                ServeOptions options);
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  unsigned short port() const;
  /// Blocks until stop() or, with exit_when_done, the end of the session.
  void run();
  /// Thread-safe; run() returns shortly after.
  void stop();
  /// Session report with service statistics (latency, overruns).
  nlohmann::json report() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace levi::serve
