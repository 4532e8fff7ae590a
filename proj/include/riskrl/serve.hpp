#pragma once

// HTTP control + WebSocket frame streaming over Boost.Beast, one thread per connection.
//
//   POST /sessions                         create (body: SessionRequest)
//   GET  /sessions, /sessions/{id}         descriptors
//   POST /sessions/{id}/beta               {"beta": x}
//   POST /sessions/{id}/pause|resume|reset
//   DELETE /sessions/{id}
//   GET  /checkpoints
//   GET  /sessions/{id}/stream[?from=t]    WebSocket upgrade, one JSON frame per message

#include <sys/socket.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <list>

#include "riskrl/session.hpp"

namespace riskrl {

namespace serve_detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct Target {
  std::vector<std::string> segments;
  std::map<std::string, std::string> query;
};

inline Target parse_target(std::string_view t) {
  Target out;
  const auto q = t.find('?');
  std::string_view path = t.substr(0, q);
  if (q != std::string_view::npos) {
    std::string_view rest = t.substr(q + 1);
    while (!rest.empty()) {
      const auto amp = rest.find('&');
      std::string_view kv = rest.substr(0, amp);
      const auto eq = kv.find('=');
      out.query[std::string(kv.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(kv.substr(eq + 1));
      if (amp == std::string_view::npos) break;
      rest = rest.substr(amp + 1);
    }
  }
  while (!path.empty()) {
    if (path.front() == '/') {
      path.remove_prefix(1);
      continue;
    }
    const auto slash = path.find('/');
    out.segments.emplace_back(path.substr(0, slash));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash);
  }
  return out;
}

struct Reply {
  http::status status = http::status::ok;
  json body;
};

}  // namespace serve_detail

class Server {
 public:
  explicit Server(SessionManager& sessions) : sessions_(sessions) {}
  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts accepting; port 0 picks a free port. Returns the bound port.
  unsigned short start(const std::string& host, unsigned short port) {
    using namespace serve_detail;
    acceptor_ = std::make_unique<tcp::acceptor>(ioc_);
    const tcp::endpoint ep(net::ip::make_address(host), port);
    acceptor_->open(ep.protocol());
    acceptor_->set_option(net::socket_base::reuse_address(true));
    acceptor_->bind(ep);
    acceptor_->listen();
    port_ = acceptor_->local_endpoint().port();
    accept_thread_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  unsigned short port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (acceptor_) ::shutdown(acceptor_->native_handle(), SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    sessions_.close_all();
    std::list<Connection> conns;
    {
      std::lock_guard lock(m_);
      for (auto& c : conns_) ::shutdown(c.fd, SHUT_RDWR);
      conns.swap(conns_);
    }
    for (auto& c : conns)
      if (c.thread.joinable()) c.thread.join();
    boost::system::error_code ec;
    if (acceptor_) acceptor_->close(ec);
  }

  /// Routes one control request; exposed for tests that bypass the socket layer.
  serve_detail::Reply handle(const std::string& method, const std::string& target, const std::string& body) {
    using namespace serve_detail;
    try {
      return route(method, parse_target(target), body);
    } catch (const NotFound& e) {
      return {http::status::not_found, {{"error", e.what()}}};
    } catch (const ConfigError& e) {
      return {http::status::bad_request, {{"error", e.what()}}};
    } catch (const json::exception& e) {
      return {http::status::bad_request, {{"error", std::string("malformed JSON: ") + e.what()}}};
    } catch (const std::exception& e) {
      return {http::status::internal_server_error, {{"error", e.what()}}};
    }
  }

 private:
  struct Connection {
    int fd = -1;
    std::shared_ptr<std::atomic<bool>> done;
    std::thread thread;
  };

  serve_detail::Reply route(const std::string& method, const serve_detail::Target& t, const std::string& body) {
    using serve_detail::http::status;
    const auto& s = t.segments;
    auto need = [&](const char* m) {
      if (method != m) throw MethodNotAllowed{};
    };
    try {
      if (s.size() == 1 && s[0] == "checkpoints") {
        need("GET");
        return {status::ok, sessions_.store().list()};
      }
      if (!s.empty() && s[0] == "sessions") {
        if (s.size() == 1) {
          if (method == "GET") return {status::ok, sessions_.list()};
          need("POST");
          return {status::created, sessions_.create(session_request_from_json(json::parse(body)))};
        }
        auto session = sessions_.get(s[1]);
        if (s.size() == 2) {
          if (method == "DELETE") {
            sessions_.remove(s[1]);
            return {status::ok, {{"id", s[1]}, {"deleted", true}}};
          }
          need("GET");
          return {status::ok, session->descriptor()};
        }
        if (s.size() == 3) {
          need("POST");
          const std::string& op = s[2];
          if (op == "beta") {
            const json j = json::parse(body);
            ObjectReader r(j, "request");
            const double beta = r.require<double>("beta");
            r.finish();
            session->set_beta(beta);
            return {status::ok, {{"id", s[1]}, {"beta", beta}, {"applies", "next_step"}}};
          }
          if (op == "pause") session->pause();
          else if (op == "resume") session->resume();
          else if (op == "reset") session->reset();
          else throw NotFound("unknown operation '" + op + "'");
          return {status::ok, {{"id", s[1]}, {"queued", op}}};
        }
      }
    } catch (const MethodNotAllowed&) {
      return {status::method_not_allowed, {{"error", "method " + method + " not allowed"}}};
    }
    throw NotFound("no route");
  }

  struct MethodNotAllowed {};

  void accept_loop() {
    using namespace serve_detail;
    while (!stopping_) {
      tcp::socket sock(ioc_);
      boost::system::error_code ec;
      acceptor_->accept(sock, ec);
      if (ec) {
        if (stopping_) break;
        continue;
      }
      std::lock_guard lock(m_);
      reap();
      if (stopping_) break;
      auto done = std::make_shared<std::atomic<bool>>(false);
      const int fd = sock.native_handle();
      conns_.push_back({fd, done, std::thread([this, s = std::move(sock), done]() mutable {
                          serve_connection(std::move(s));
                          *done = true;
                        })});
    }
  }

  // Caller holds m_.
  void reap() {
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (*it->done) {
        it->thread.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void serve_connection(serve_detail::tcp::socket sock) {
    using namespace serve_detail;
    beast::flat_buffer buf;
    boost::system::error_code ec;
    for (;;) {
      http::request<http::string_body> req;
      http::read(sock, buf, req, ec);
      if (ec) break;
      if (websocket::is_upgrade(req)) {
        stream(std::move(sock), std::move(req));
        return;
      }
      const std::string method(req.method_string());
      const Reply r = handle(method, std::string(req.target()), req.body());
      http::response<http::string_body> res{r.status, req.version()};
      res.set(http::field::content_type, "application/json");
      res.set(http::field::access_control_allow_origin, "*");
      res.keep_alive(req.keep_alive());
      res.body() = r.body.dump();
      res.prepare_payload();
      http::write(sock, res, ec);
      if (ec || !res.keep_alive()) break;
    }
    sock.shutdown(tcp::socket::shutdown_send, ec);
  }

  void stream(serve_detail::tcp::socket sock, serve_detail::http::request<serve_detail::http::string_body> req) {
    using namespace serve_detail;
    boost::system::error_code ec;
    const Target t = parse_target(std::string_view(req.target().data(), req.target().size()));
    std::shared_ptr<Session> session;
    std::optional<int> from;
    try {
      if (t.segments.size() != 3 || t.segments[0] != "sessions" || t.segments[2] != "stream")
        throw NotFound("no stream route");
      session = sessions_.get(t.segments[1]);
      if (auto it = t.query.find("from"); it != t.query.end()) from = std::stoi(it->second);
    } catch (const std::exception& e) {
      http::response<http::string_body> res{http::status::not_found, req.version()};
      res.set(http::field::content_type, "application/json");
      res.body() = json{{"error", e.what()}}.dump();
      res.prepare_payload();
      http::write(sock, res, ec);
      return;
    }
    websocket::stream<tcp::socket> ws(std::move(sock));
    ws.accept(req, ec);
    if (ec) return;
    ws.text(true);
    auto queue = session->subscribe(from);
    session.reset();
    while (!stopping_) {
      auto frame = queue->pop(std::chrono::milliseconds(100));
      if (!frame) {
        if (queue->closed()) break;
        continue;
      }
      ws.write(net::buffer(*frame), ec);
      if (ec) return;
    }
    ws.close(websocket::close_code::going_away, ec);
  }

  SessionManager& sessions_;
  serve_detail::net::io_context ioc_;
  std::unique_ptr<serve_detail::tcp::acceptor> acceptor_;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};
  unsigned short port_ = 0;
  std::mutex m_;
  std::list<Connection> conns_;
};

}  // namespace riskrl
