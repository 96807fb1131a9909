#pragma once

// WebSocket + HTTP front end for SessionEngine. One engine per connection;
// every read, tick and write of a session runs on that connection's strand.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/live/engine.hpp"
#include "prosody_rl/session_log.hpp"
#include "prosody_rl/tamer.hpp"

namespace prosody_rl::live {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct ServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::filesystem::path out_dir = "sessions";
  std::optional<GridMap> map;  // fixed map; otherwise one generated per session
  int map_rows = 10;
  int map_cols = 10;
  std::uint64_t seed = 0;
  EngineConfig engine;
  std::function<void(const SessionEngine&)> on_session_end;  // test hook
};

struct ServerState {
  std::atomic<std::size_t> active{0};
  std::atomic<std::uint64_t> next_id{0};
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, const ServerConfig& cfg, std::shared_ptr<ServerState> state, std::uint64_t index)
      : ws_(std::move(socket)),
        timer_(ws_.get_executor()),
        cfg_(cfg),
        state_(std::move(state)),
        engine_(make_engine(cfg, index)),
        clock_start_(std::chrono::steady_clock::now()) {
    ++state_->active;
  }
  ~WsSession() { --state_->active; }

  template <class Body, class Allocator>
  void run(http::request<Body, http::basic_fields<Allocator>> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(kMaxPcmFrameBytes + 1024);
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  static SessionEngine make_engine(const ServerConfig& cfg, std::uint64_t index) {
    EngineConfig ec = cfg.engine;
    ec.seed = cfg.seed + index;
    GridMap map = cfg.map ? *cfg.map : generate_map(cfg.map_rows, cfg.map_cols, cfg.seed + index);
    return SessionEngine("session-" + std::to_string(cfg.seed) + "-" + std::to_string(index), std::move(map), ec);
  }

  double now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start_).count();
  }

  void on_accept(beast::error_code ec) {
    if (ec) return;
    read();
  }

  void read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      close_session("disconnected");
      return;
    }
    Messages out;
    const auto data = buffer_.cdata();
    const auto* bytes = static_cast<const std::uint8_t*>(data.data());
    if (ws_.got_binary()) {
      out = engine_.handle_binary({bytes, data.size()});
    } else {
      const std::string text(reinterpret_cast<const char*>(bytes), data.size());
      const auto msg = nlohmann::json::parse(text, nullptr, false);
      out = msg.is_discarded() ? Messages{error_message("BAD_MESSAGE", "invalid JSON")} : engine_.handle(msg, now());
    }
    buffer_.consume(buffer_.size());
    send(out);
    after_event();
    if (!closing_) read();
  }

  void after_event() {
    if (engine_.accepts_ticks() && !ticking_) {
      ticking_ = true;
      tick_origin_ = std::chrono::steady_clock::now();
      ticks_scheduled_ = 0;
      schedule_tick();
    }
    if (engine_.finished()) close_session("done");
  }

  void schedule_tick() {
    ++ticks_scheduled_;
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(engine_.config().tick_seconds));
    timer_.expires_at(tick_origin_ + period * ticks_scheduled_);
    timer_.async_wait(beast::bind_front_handler(&WsSession::on_tick, shared_from_this()));
  }

  void on_tick(beast::error_code ec) {
    if (ec || closing_) return;
    send(engine_.tick(now()));
    if (engine_.finished()) {
      close_session("done");
      return;
    }
    schedule_tick();
  }

  void send(const Messages& msgs) {
    for (const auto& m : msgs) queue_.push_back(m.dump());
    if (!writing_) write_next();
  }

  void write_next() {
    if (queue_.empty()) {
      writing_ = false;
      if (closing_ && !closed_) {
        closed_ = true;
        ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->queue_.pop_front();
      if (ec) {
        self->queue_.clear();
        self->writing_ = false;
        return;
      }
      self->write_next();
    });
  }

  void close_session(const std::string& reason) {
    if (closing_) return;
    closing_ = true;
    timer_.cancel();
    persist(reason);
    if (!writing_ && reason != "disconnected") write_next();
  }

  void persist(const std::string& reason) {
    if (engine_.tick_index() == 0 && engine_.phase() != Phase::Done) return;
    auto log = engine_.final_log();
    if (log.footer && log.footer->outcome == "incomplete") log.footer->outcome = reason;
    std::error_code fs_ec;
    std::filesystem::create_directories(cfg_.out_dir, fs_ec);
    std::ofstream(cfg_.out_dir / (engine_.id() + ".jsonl")) << session::session_to_string(log);
    std::ofstream(cfg_.out_dir / (engine_.id() + ".hmodel.json")) << tamer::to_json(engine_.model()).dump(2) << '\n';
    if (cfg_.on_session_end) cfg_.on_session_end(engine_);
  }

  websocket::stream<beast::tcp_stream> ws_;
  asio::steady_timer timer_;
  beast::flat_buffer buffer_;
  const ServerConfig& cfg_;
  std::shared_ptr<ServerState> state_;
  SessionEngine engine_;
  std::chrono::steady_clock::time_point clock_start_;
  std::chrono::steady_clock::time_point tick_origin_;
  long ticks_scheduled_ = 0;
  std::deque<std::string> queue_;
  bool writing_ = false;
  bool ticking_ = false;
  bool closing_ = false;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, const ServerConfig& cfg, std::shared_ptr<ServerState> state)
      : stream_(std::move(socket)), cfg_(cfg), state_(std::move(state)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      const auto index = state_->next_id++;
      std::make_shared<WsSession>(stream_.release_socket(), cfg_, state_, index)->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    res->set(http::field::server, "prosody-rl");
    res->set(http::field::content_type, "application/json");
    if (req_.method() == http::verb::get && req_.target() == "/health") {
      res->result(http::status::ok);
      res->body() = nlohmann::json{{"status", "ok"}, {"sessions", state_->active.load()}}.dump();
    } else {
      res->result(http::status::not_found);
      res->body() = nlohmann::json{{"error", "not found"}}.dump();
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  const ServerConfig& cfg_;
  std::shared_ptr<ServerState> state_;
};

class Server {
 public:
  Server(asio::io_context& ioc, ServerConfig cfg)
      : ioc_(ioc), cfg_(std::move(cfg)), acceptor_(ioc), state_(std::make_shared<ServerState>()) {
    const tcp::endpoint ep(asio::ip::make_address(cfg_.address), cfg_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen(asio::socket_base::max_listen_connections);
  }

  void start() { accept(); }
  void stop() {
    beast::error_code ec;
    acceptor_.close(ec);
  }
  [[nodiscard]] unsigned short port() const { return acceptor_.local_endpoint().port(); }
  [[nodiscard]] std::size_t active_sessions() const { return state_->active.load(); }

 private:
  void accept() {
    acceptor_.async_accept(asio::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), cfg_, state_)->run();
      accept();
    });
  }

  asio::io_context& ioc_;
  ServerConfig cfg_;
  tcp::acceptor acceptor_;
  std::shared_ptr<ServerState> state_;
};

}  // namespace prosody_rl::live
