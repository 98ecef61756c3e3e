#pragma once

// HTTP binding for ControlService.
//   POST /v1/rpc                              one ControlMessage per request
//   GET  /v1/sessions/{id}/events?from_seq=N  server-sent events, replay then live tail
//   GET  /v1/sessions/{id}/events/poll        long-poll JSON variant (from_seq, timeout_ms)
//   GET  /v1/health

#include <atomic>
#include <chrono>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "haptstart/error.hpp"
#include "haptstart/service.hpp"

namespace haptstart {

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8787;

  static BindAddress parse(const std::string& text) {
    BindAddress b;
    const auto colon = text.rfind(':');
    try {
      if (colon == std::string::npos) {
        b.port = std::stoi(text);
      } else {
        if (colon > 0) b.host = text.substr(0, colon);
        b.port = std::stoi(text.substr(colon + 1));
      }
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidConfig, "bad bind address '" + text + "'");
    }
    if (b.port < 0 || b.port > 65535) throw Error(ErrorKind::InvalidConfig, "bad port in '" + text + "'");
    return b;
  }

  std::string to_string() const { return host + ":" + std::to_string(port); }
};

inline std::string sse_frame(const ServiceEvent& ev, const std::string& session_id) {
  return "id: " + std::to_string(ev.seq) + "\nevent: " + std::string(to_string(ev.kind)) + "\ndata: " +
         ev.to_json(session_id).dump() + "\n\n";
}

class HttpControlServer {
 public:
  explicit HttpControlServer(ControlService& service) : service_(service) {
    // httplib's default adds SO_REUSEPORT, which lets a second server share a live port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  /// Binds without serving. Throws IoFailure when the address is taken.
  int bind(const BindAddress& addr) {
    int port = addr.port;
    if (port == 0) {
      port = server_.bind_to_any_port(addr.host);
    } else if (!server_.bind_to_port(addr.host, port)) {
      port = -1;
    }
    if (port < 0) throw Error(ErrorKind::IoFailure, "cannot bind " + addr.to_string() + " (address in use?)");
    bound_ = {addr.host, port};
    return port;
  }

  /// Blocks until stop().
  void serve() { server_.listen_after_bind(); }

  void stop() {
    stopping_ = true;
    server_.stop();
  }

  bool running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  const BindAddress& bound() const { return bound_; }

 private:
  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"ok", true}, {"protocol", kProtocolVersion}}.dump(), "application/json");
    });

    server_.Post("/v1/rpc", [this](const httplib::Request& req, httplib::Response& res) {
      json reply;
      try {
        reply = service_.handle(json::parse(req.body));
      } catch (const json::parse_error& e) {
        reply = json{{"v", kProtocolVersion}, {"id", nullptr}, {"ok", false},
                     {"error", {{"kind", to_string(ErrorKind::BadRequest)}, {"message", e.what()}}}};
      }
      res.set_content(reply.dump(), "application/json");
    });

    server_.Get(R"(/v1/sessions/([^/]+)/events/poll)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      try {
        const auto from = query_u64(req, "from_seq", 0);
        const auto timeout = std::chrono::milliseconds(query_u64(req, "timeout_ms", 0));
        json events = json::array();
        const auto got = timeout.count() > 0 ? service_.wait_events(id, from, timeout) : service_.events_since(id, from);
        for (const auto& ev : got) events.push_back(ev.to_json(id));
        res.set_content(json{{"events", events}, {"closed", service_.is_closed(id)}}.dump(), "application/json");
      } catch (const Error& e) {
        error_reply(res, e);
      }
    });

    server_.Get(R"(/v1/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::uint64_t from = 0;
      try {
        from = query_u64(req, "from_seq", 0);
        if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
        (void)service_.events_since(id, from);
      } catch (const Error& e) {
        error_reply(res, e);
        return;
      }
      auto next = std::make_shared<std::uint64_t>(from);
      res.set_chunked_content_provider("text/event-stream", [this, id, next](std::size_t, httplib::DataSink& sink) {
        if (stopping_) return false;
        const auto events = service_.wait_events(id, *next, std::chrono::milliseconds(500));
        for (const auto& ev : events) {
          const auto frame = sse_frame(ev, id);
          if (!sink.write(frame.data(), frame.size())) return false;
          *next = ev.seq + 1;
        }
        if (events.empty()) {
          if (service_.is_closed(id)) {
            sink.done();
            return true;
          }
          static const std::string keepalive = ": keepalive\n\n";
          if (!sink.write(keepalive.data(), keepalive.size())) return false;
        }
        return true;
      });
    });
  }

  static std::uint64_t query_u64(const httplib::Request& req, const char* key, std::uint64_t fallback) {
    if (!req.has_param(key)) return fallback;
    try {
      return std::stoull(req.get_param_value(key));
    } catch (const std::exception&) {
      throw Error(ErrorKind::BadRequest, std::string("bad query parameter ") + key);
    }
  }

  static void error_reply(httplib::Response& res, const Error& e) {
    res.status = e.kind() == ErrorKind::UnknownSession ? 404 : 400;
    res.set_content(json{{"ok", false}, {"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump(),
                    "application/json");
  }

  ControlService& service_;
  httplib::Server server_;
  BindAddress bound_;
  std::atomic<bool> stopping_{false};
};

}  // namespace haptstart
