#include "levi/serve.hpp"

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "levi/session.hpp"
#include "levi/wire.hpp"

namespace levi::serve {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

struct TimedInput {
  runtime::CursorInput input;
  Clock::time_point received;
};

struct Control {
  enum Kind { calibrate, start, abort } kind = start;
  int index = 0;
  Vec3 position = Vec3::Zero();
  std::string reason;
};

// Frames queued beyond this are dropped unless they carry an event.
constexpr std::size_t kMaxQueuedFrames = 256;

nlohmann::json stats_ms(const std::vector<double>& seconds) {
  const auto s = runtime::timing_stats(seconds);
  return {{"count", seconds.size()}, {"mean", s.mean * 1e3}, {"p50", s.p50 * 1e3},
          {"p99", s.p99 * 1e3},      {"max", s.max * 1e3}};
}

void write_atomically(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
    if (!out) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

class Connection;

}  // namespace

struct SessionServer::Impl {
  Impl(const LookupTable& table, const acoustics::AcousticModel& model, const Config& cfg,
       ServeOptions opt);

  // Loop thread.
  void loop();
  void apply_controls();
  void publish_hello();
  void send_frame();
  void finish_session();

  // Network thread.
  void accept();
  bool claim(const std::shared_ptr<Connection>& c);
  void release(const Connection* c);
  void deliver(std::string text, bool droppable);

  // Any thread.
  void post_input(const runtime::CursorInput& in);
  void post_control(Control c);
  void record_rtt(double ms);
  std::ostream& diag() { return opt.diagnostics ? *opt.diagnostics : std::cerr; }
  void log_line(const std::string& s) {
    std::lock_guard lock(diag_mutex);
    diag() << "serve: " << s << '\n';
  }

  ServeOptions opt;
  Config cfg;
  session::SessionEngine engine;
  std::uint64_t frame_every = 1;

  net::io_context ioc;
  tcp::acceptor acceptor;
  std::shared_ptr<Connection> active;  // network thread only
  std::atomic<bool> connected{false};
  std::atomic<bool> stopping{false};

  runtime::Mailbox<TimedInput> mailbox;
  std::mutex control_mutex;
  std::deque<Control> controls;
  runtime::SnapshotBoard<std::string> hello;

  // Loop-thread statistics, copied into the report under report_mutex.
  std::optional<Clock::time_point> unacked;
  std::vector<double> input_to_frame;  // s
  std::uint64_t overruns = 0;
  std::uint64_t slips = 0;
  std::uint64_t frames_sent = 0;
  bool ended = false;

  std::mutex rtt_mutex;
  std::vector<double> client_rtt;  // s

  mutable std::mutex report_mutex;
  nlohmann::json final_report;
  std::mutex diag_mutex;
};

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(SessionServer::Impl& server, tcp::socket socket)
      : server_(server), ws_(std::move(socket)) {}

  void start() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       self->on_request(ec);
                     });
  }

  void send(std::string text, bool droppable) {
    if (closing_) return;
    if (droppable && out_.size() >= kMaxQueuedFrames) return;
    out_.push_back(std::move(text));
    if (!writing_) write_next();
  }

  void close_after(std::string last) {
    if (closing_) return;
    out_.push_back(std::move(last));
    closing_ = true;
    if (!writing_) write_next();
  }

  void shutdown() {
    if (!accepted_) return;
    closing_ = true;
    if (!writing_) close_now();
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return;
    if (!websocket::is_upgrade(request_)) {
      refuse(http::status::bad_request, "websocket upgrade required\n");
      return;
    }
    if (!server_.claim(shared_from_this())) {
      refuse(http::status::service_unavailable, "a session client is already connected\n");
      return;
    }
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec) {
      if (ec) {
        self->server_.release(self.get());
        return;
      }
      self->accepted_ = true;
      self->ws_.text(true);
      if (auto h = self->server_.hello.latest()) self->send(*h, false);
      self->read();
    });
  }

  void refuse(http::status status, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, request_.version());
    res->set(http::field::content_type, "text/plain");
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(ws_.next_layer(), *res,
                      [self = shared_from_this(), res](beast::error_code, std::size_t) {
                        beast::error_code ignored;
                        self->ws_.next_layer().socket().shutdown(tcp::socket::shutdown_both, ignored);
                      });
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->server_.release(self.get());
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->handle(text);
      if (!self->closing_) self->read();
    });
  }

  void handle(const std::string& text) {
    try {
      const auto msg = wire::parse_client_message(text);
      if (const auto* in = std::get_if<runtime::CursorInput>(&msg)) {
        if (have_seq_ && in->seq <= last_seq_) {
          throw wire::ProtocolError("cursor seq " + std::to_string(in->seq) +
                                    " does not increase (last " + std::to_string(last_seq_) + ")");
        }
        have_seq_ = true;
        last_seq_ = in->seq;
        server_.post_input(*in);
      } else if (const auto* c = std::get_if<wire::CalibrateMessage>(&msg)) {
        server_.post_control({Control::calibrate, c->index, c->position, {}});
      } else if (std::holds_alternative<wire::StartMessage>(msg)) {
        server_.post_control({Control::start, 0, Vec3::Zero(), {}});
      } else if (const auto* l = std::get_if<wire::LatencyMessage>(&msg)) {
        server_.record_rtt(l->rtt_ms);
      }
    } catch (const wire::ProtocolError& e) {
      const std::string reason = std::string("protocol violation: ") + e.what();
      server_.log_line(reason);
      server_.post_control({Control::abort, 0, Vec3::Zero(), reason});
      close_after(wire::encode_abort(reason));
    }
  }

  void write_next() {
    writing_ = true;
    ws_.async_write(net::buffer(out_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) {
                        self->writing_ = false;
                        self->server_.release(self.get());
                        return;
                      }
                      self->out_.pop_front();
                      if (!self->out_.empty()) {
                        self->write_next();
                        return;
                      }
                      self->writing_ = false;
                      if (self->closing_) self->close_now();
                    });
  }

  void close_now() {
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {
      self->server_.release(self.get());
    });
  }

  SessionServer::Impl& server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool closing_ = false;
  bool accepted_ = false;
  bool have_seq_ = false;
  std::uint64_t last_seq_ = 0;
};

}  // namespace

SessionServer::Impl::Impl(const LookupTable& table, const acoustics::AcousticModel& model,
                          const Config& c, ServeOptions o)
    : opt(std::move(o)), cfg(c), engine(table, model, c), acceptor(ioc) {
  frame_every = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::lround(cfg.stepper.tick_rate / cfg.session.frame_rate)));
  try {
    const tcp::endpoint ep(net::ip::make_address(opt.address), opt.port);
    acceptor.open(ep.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen();
  } catch (const boost::system::system_error& e) {
    throw Error("cannot listen on " + opt.address + ":" + std::to_string(opt.port) + ": " + e.what());
  }
  if (!opt.log_path.empty()) {
    const bool fresh = !std::filesystem::exists(opt.log_path) ||
                       std::filesystem::file_size(opt.log_path) == 0;
    std::ofstream out(opt.log_path, std::ios::app);
    if (!out) throw Error("cannot open log " + opt.log_path);
    if (fresh) out << fitts::kLogHeader << '\n';
    engine.set_log_sink([path = opt.log_path](const std::vector<fitts::MovementRecord>& rows) {
      std::ofstream out(path, std::ios::app);
      fitts::append_log_rows(out, rows);
    });
  }
  publish_hello();
}

void SessionServer::Impl::publish_hello() {
  hello.publish(wire::hello_json(engine, cfg.session.frame_rate).dump());
}

void SessionServer::Impl::post_input(const runtime::CursorInput& in) {
  mailbox.post({in, Clock::now()});
}

void SessionServer::Impl::post_control(Control c) {
  std::lock_guard lock(control_mutex);
  controls.push_back(std::move(c));
}

void SessionServer::Impl::record_rtt(double ms) {
  std::lock_guard lock(rtt_mutex);
  client_rtt.push_back(ms * 1e-3);
}

void SessionServer::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<Connection>(*this, std::move(socket))->start();
    accept();
  });
}

bool SessionServer::Impl::claim(const std::shared_ptr<Connection>& c) {
  if (active || stopping) return false;
  active = c;
  connected = true;
  return true;
}

void SessionServer::Impl::release(const Connection* c) {
  if (active.get() != c) return;
  active.reset();
  connected = false;
  if (stopping) ioc.stop();
}

void SessionServer::Impl::deliver(std::string text, bool droppable) {
  net::post(ioc, [this, text = std::move(text), droppable]() mutable {
    if (active) active->send(std::move(text), droppable);
  });
}

void SessionServer::Impl::apply_controls() {
  std::deque<Control> batch;
  {
    std::lock_guard lock(control_mutex);
    batch.swap(controls);
  }
  for (const auto& c : batch) {
    try {
      switch (c.kind) {
        case Control::calibrate:
          engine.calibrate(c.index, c.position);
          break;
        case Control::start:
          engine.start();
          break;
        case Control::abort:
          engine.abort(c.reason);
          break;
      }
    } catch (const Error& e) {
      deliver(wire::encode_error(e.what()), false);
    }
    publish_hello();
  }
}

void SessionServer::Impl::send_frame() {
  const auto f = engine.frame();
  auto j = wire::frame_json(f);
  if (unacked) {
    input_to_frame.push_back(std::chrono::duration<double>(Clock::now() - *unacked).count());
    unacked.reset();
  }
  ++frames_sent;
  deliver(j.dump(), !f.event.has_value());
}

void SessionServer::Impl::finish_session() {
  ended = true;
  publish_hello();
  auto rep = session::session_report(engine);
  {
    std::lock_guard lock(rtt_mutex);
    rep["service"]["client_rtt_ms"] = stats_ms(client_rtt);
  }
  rep["service"]["input_to_frame_ms"] = stats_ms(input_to_frame);
  rep["service"]["tick_overruns"] = overruns;
  rep["service"]["schedule_slips"] = slips;
  rep["service"]["frames_sent"] = frames_sent;
  rep["service"]["tick_budget_us"] = 1e6 / cfg.stepper.tick_rate;
  if (!opt.report_path.empty()) {
    try {
      write_atomically(opt.report_path, rep.dump(2) + "\n");
    } catch (const std::exception& e) {
      log_line(std::string("report not written: ") + e.what());
    }
  }
  std::lock_guard lock(report_mutex);
  final_report = std::move(rep);
}

void SessionServer::Impl::loop() {
  const auto period = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / cfg.stepper.tick_rate));
  const double budget = 1.0 / cfg.stepper.tick_rate;
  auto next = Clock::now();
  while (!stopping) {
    apply_controls();
    const auto in = mailbox.take();
    if (in) unacked = in->received;
    engine.tick(in ? std::optional(in->input) : std::nullopt);

    const double took = engine.tick_durations().back();
    if (took > budget) {
      ++overruns;
      if (overruns <= 10 || overruns % 1000 == 0) {
        log_line("tick " + std::to_string(engine.runtime_state().tick) + " overran its budget (" +
                 std::to_string(took * 1e6) + " us, overrun #" + std::to_string(overruns) + ")");
      }
    }

    const auto phase = engine.phase();
    const bool over = phase == session::Phase::finished || phase == session::Phase::aborted;
    if (over && !ended) finish_session();
    // Held back while nobody listens, so a reconnecting client still gets
    // every event. Outside the running phase queued events go out at once.
    const bool frame_tick = engine.runtime_state().tick % frame_every == 0;
    if (connected && (frame_tick || (phase != session::Phase::running && engine.has_pending_events()))) {
      send_frame();
    }
    if (over && opt.exit_when_done && (!connected || !engine.has_pending_events())) break;

    next += period;
    const auto now = Clock::now();
    if (now > next + 50 * period) {
      ++slips;  // far behind: resynchronise rather than burst
      next = now;
    }
    std::this_thread::sleep_until(next);
  }
  if (!ended) finish_session();
}

SessionServer::SessionServer(const LookupTable& table, const acoustics::AcousticModel& model,
                             const Config& cfg, ServeOptions options)
    : impl_(std::make_unique<Impl>(table, model, cfg, std::move(options))) {}

SessionServer::~SessionServer() = default;

unsigned short SessionServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void SessionServer::run() {
  auto& s = *impl_;
  s.accept();
  std::jthread network([&s] { s.ioc.run(); });
  s.loop();
  s.stopping = true;
  net::post(s.ioc, [&s] {
    beast::error_code ignored;
    s.acceptor.close(ignored);
    if (s.active) s.active->shutdown();
    else s.ioc.stop();
  });
  // Give the close handshake a moment, then tear down regardless.
  net::steady_timer guard(s.ioc, std::chrono::seconds(2));
  guard.async_wait([&s](beast::error_code) { s.ioc.stop(); });
  network.join();
}

void SessionServer::stop() { impl_->stopping = true; }

nlohmann::json SessionServer::report() const {
  std::lock_guard lock(impl_->report_mutex);
  return impl_->final_report;
}

}  // namespace levi::serve
