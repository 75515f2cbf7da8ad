// Copyright 2026 The progrun Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <boost/asio/dispatch.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "progrun/module.hpp"
#include "progrun/scheduler.hpp"
#include "progrun/vis/heatmap.hpp"

namespace progrun {

namespace beast = boost::beast;
namespace http = boost::beast::http;
namespace websocket = boost::beast::websocket;
namespace net = boost::asio;
using tcp = boost::asio::ip::tcp;

using HttpRequest = http::request<http::string_body>;
using HttpResponse = http::response<http::string_body>;

// Port from PROGRUN_PORT, else `fallback`.
inline unsigned short default_port(unsigned short fallback = 8080) {
  const char* env = std::getenv("PROGRUN_PORT");
  if (!env || !*env) return fallback;
  unsigned v = 0;
  auto r = std::from_chars(env, env + std::char_traits<char>::length(env), v);
  if (r.ec != std::errc() || *r.ptr != '\0' || v > 65535) return fallback;
  return static_cast<unsigned short>(v);
}

// HTTP control API plus a /ws push channel of {module_id, run_number}
// events. Reads take the module lock briefly; writes go through the
// scheduler context. Events are limited to 10 per second per module; the
// newest suppressed event is sent when the window reopens.
class Server {
 public:
  static constexpr std::chrono::milliseconds kEventInterval{100};
  static constexpr std::size_t kDefaultPageSize = 1000;
  static constexpr std::size_t kMaxPageSize = 100000;

  explicit Server(Scheduler& s, unsigned short port = 0, std::string address = "127.0.0.1")
      : sched_(s), address_(std::move(address)), requested_port_(port) {}

  ~Server() { stop(); }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start(int threads = 2) {
    if (acceptor_) return;
    ioc_.restart();
    tcp::endpoint ep(net::ip::make_address(address_), requested_port_);
    acceptor_ = std::make_unique<tcp::acceptor>(net::make_strand(ioc_));
    acceptor_->open(ep.protocol());
    acceptor_->set_option(net::socket_base::reuse_address(true));
    acceptor_->bind(ep);
    acceptor_->listen(net::socket_base::max_listen_connections);
    port_ = acceptor_->local_endpoint().port();
    listener_ = sched_.add_listener([this](const std::string& id, RunNumber r) { on_activation(id, r); });
    work_.emplace(net::make_work_guard(ioc_));
    do_accept();
    for (int i = 0; i < threads; ++i) threads_.emplace_back([this] { ioc_.run(); });
  }

  void stop() {
    if (!acceptor_) return;
    sched_.remove_listener(listener_);
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_->close(ec);
    });
    {
      std::lock_guard lock(sessions_mutex_);
      for (auto& w : sessions_)
        if (auto s = w.lock()) s->close();
    }
    work_.reset();
    ioc_.stop();
    for (auto& t : threads_) t.join();
    threads_.clear();
    acceptor_.reset();
  }

  unsigned short port() const { return port_; }

  // Routes one request; usable without a socket.
  HttpResponse handle(const HttpRequest& req) {
    std::string target(req.target());
    std::string path = target.substr(0, target.find('?'));
    std::map<std::string, std::string> query = parse_query(target);
    std::vector<std::string> parts = split_path(path);
    try {
      if (req.method() == http::verb::get) {
        if (parts.size() == 1 && parts[0] == "modules") return json_response(req, http::status::ok, sched_.modules_json());
        if (parts.size() == 1 && parts[0] == "graph") return json_response(req, http::status::ok, sched_.graph_json());
        if (parts.size() == 1 && parts[0] == "scheduler") return json_response(req, http::status::ok, scheduler_json());
        if (parts.size() == 2 && parts[0] == "module") {
          auto m = sched_.find(parts[1]);
          if (!m) return error(req, http::status::not_found, "no module '" + parts[1] + "'");
          return json_response(req, http::status::ok, m->to_json(false));
        }
        if (parts.size() == 4 && parts[0] == "module" && parts[2] == "data") return data_slice(req, parts[1], parts[3], query);
        if (parts.size() == 2 && parts[0] == "heatmap") return heatmap_png(req, parts[1]);
      } else if (req.method() == http::verb::post) {
        if (parts.size() == 3 && parts[0] == "module" && parts[2] == "input") return post_input(req, parts[1]);
        if (parts.size() == 2 && parts[0] == "scheduler") return scheduler_command(req, parts[1]);
      } else {
        return error(req, http::status::method_not_allowed, "unsupported method");
      }
      return error(req, http::status::not_found, "no route for " + path);
    } catch (const std::exception& e) {
      return error(req, http::status::internal_server_error, e.what());
    }
  }

 private:
  class WsSession;

  class HttpSession : public std::enable_shared_from_this<HttpSession> {
   public:
    HttpSession(tcp::socket&& socket, Server& server) : stream_(std::move(socket)), server_(server) {}

    void run() {
      net::dispatch(stream_.get_executor(), [self = shared_from_this()] { self->read(); });
    }

   private:
    void read() {
      req_ = {};
      stream_.expires_after(std::chrono::seconds(30));
      http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->on_read(ec);
      });
    }

    void on_read(beast::error_code ec) {
      if (ec) {
        stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      if (websocket::is_upgrade(req_)) {
        if (split_path(std::string(req_.target()).substr(0, req_.target().find('?'))) == std::vector<std::string>{"ws"}) {
          stream_.expires_never();
          auto ws = std::make_shared<WsSession>(stream_.release_socket(), server_);
          server_.register_session(ws);
          ws->accept(std::move(req_));
          return;
        }
      }
      res_ = std::make_shared<HttpResponse>(server_.handle(req_));
      http::async_write(stream_, *res_, [self = shared_from_this()](beast::error_code ec2, std::size_t) {
        self->on_write(ec2);
      });
    }

    void on_write(beast::error_code ec) {
      if (ec) return;
      if (!res_->keep_alive()) {
        stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      res_.reset();
      read();
    }

    beast::tcp_stream stream_;
    beast::flat_buffer buffer_;
    HttpRequest req_;
    std::shared_ptr<HttpResponse> res_;
    Server& server_;
  };

  class WsSession : public std::enable_shared_from_this<WsSession> {
   public:
    WsSession(tcp::socket&& socket, Server& server) : ws_(std::move(socket)), server_(server) {}

    void accept(HttpRequest req) {
      req_ = std::move(req);
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept(req_, [self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->open_ = true;
        self->read();
        self->flush();
      });
    }

    void send(std::string msg) {
      net::post(ws_.get_executor(), [self = shared_from_this(), m = std::move(msg)]() mutable {
        self->queue_.push_back(std::move(m));
        if (self->open_ && !self->writing_) self->flush();
      });
    }

    void close() {
      net::post(ws_.get_executor(), [self = shared_from_this()] {
        if (!self->open_) return;
        self->open_ = false;
        beast::error_code ec;
        beast::get_lowest_layer(self->ws_).socket().close(ec);
      });
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->open_ = false;
          return;
        }
        self->buffer_.consume(self->buffer_.size());
        self->read();
      });
    }

    void flush() {
      if (!open_ || writing_ || queue_.empty()) return;
      writing_ = true;
      ws_.text(true);
      ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->writing_ = false;
        if (ec) {
          self->open_ = false;
          return;
        }
        self->queue_.pop_front();
        self->flush();
      });
    }

    websocket::stream<beast::tcp_stream> ws_;
    HttpRequest req_;
    beast::flat_buffer buffer_;
    std::deque<std::string> queue_;
    bool open_ = false;
    bool writing_ = false;
    Server& server_;
  };

  struct Throttle {
    std::chrono::steady_clock::time_point last_sent{};
    RunNumber last_run = 0;
    std::optional<RunNumber> pending;
    bool armed = false;
    std::shared_ptr<net::steady_timer> timer;
  };

  void do_accept() {
    acceptor_->async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == net::error::operation_aborted || !acceptor_->is_open()) return;
      } else {
        std::make_shared<HttpSession>(std::move(socket), *this)->run();
      }
      do_accept();
    });
  }

  void register_session(const std::shared_ptr<WsSession>& s) {
    std::lock_guard lock(sessions_mutex_);
    std::erase_if(sessions_, [](const auto& w) { return w.expired(); });
    sessions_.push_back(s);
  }

  void broadcast(const std::string& id, RunNumber r) {
    std::string msg = nlohmann::json{{"module_id", id}, {"run_number", r}}.dump();
    std::lock_guard lock(sessions_mutex_);
    for (auto& w : sessions_)
      if (auto s = w.lock()) s->send(msg);
  }

  // Called on the scheduler context after every activation. Only activations
  // that changed an output table count as publications.
  void on_activation(const std::string& id, RunNumber) {
    auto m = sched_.find(id);
    if (!m) return;
    RunNumber published = 0;
    for (const auto& out : m->outputs())
      if (out.name() != Module::kTraceSlot) published = std::max(published, out.data().last_run());
    std::lock_guard lock(throttle_mutex_);
    Throttle& t = throttles_[id];
    if (published <= t.last_run) return;
    t.last_run = published;
    auto now = std::chrono::steady_clock::now();
    if (!t.pending && now - t.last_sent >= kEventInterval) {
      t.last_sent = now;
      broadcast(id, published);
      return;
    }
    t.pending = published;
    if (t.armed) return;
    t.armed = true;
    if (!t.timer) t.timer = std::make_shared<net::steady_timer>(ioc_);
    t.timer->expires_at(t.last_sent + kEventInterval);
    t.timer->async_wait([this, id](beast::error_code ec) {
      if (ec) return;
      std::lock_guard lk(throttle_mutex_);
      Throttle& th = throttles_[id];
      th.armed = false;
      if (!th.pending) return;
      th.last_sent = std::chrono::steady_clock::now();
      broadcast(id, *th.pending);
      th.pending.reset();
    });
  }

  nlohmann::json scheduler_json() const {
    return {{"running", sched_.running()},
            {"paused", sched_.paused()},
            {"run_number", sched_.run_number()},
            {"interaction", sched_.is_interaction_mode()},
            {"modules", sched_.size()}};
  }

  HttpResponse data_slice(const HttpRequest& req, const std::string& id, const std::string& slot,
                          const std::map<std::string, std::string>& query) {
    auto m = sched_.find(id);
    if (!m) return error(req, http::status::not_found, "no module '" + id + "'");
    if (!m->has_output(slot)) return error(req, http::status::not_found, "module '" + id + "' has no output '" + slot + "'");
    std::size_t offset = 0, limit = kDefaultPageSize;
    if (!parse_size(query, "offset", offset) || !parse_size(query, "limit", limit))
      return error(req, http::status::bad_request, "offset and limit must be non-negative integers");
    limit = std::min(limit, kMaxPageSize);
    nlohmann::json j;
    {
      std::lock_guard lock(m->lock());
      j = m->output(slot).to_json(offset, limit);
    }
    j["module_id"] = id;
    j["slot"] = slot;
    return json_response(req, http::status::ok, j);
  }

  HttpResponse heatmap_png(const HttpRequest& req, const std::string& name) {
    if (name.size() < 5 || name.substr(name.size() - 4) != ".png")
      return error(req, http::status::not_found, "expected /heatmap/<id>.png");
    std::string id = name.substr(0, name.size() - 4);
    auto m = sched_.find(id);
    auto h = std::dynamic_pointer_cast<Heatmap>(m);
    if (!h) return error(req, http::status::not_found, "no heatmap '" + id + "'");
    auto f = h->frame();
    if (!f) return error(req, http::status::not_found, "heatmap '" + id + "' has no frame yet");
    std::vector<std::uint8_t> png = f->png();
    HttpResponse res{http::status::ok, req.version()};
    res.set(http::field::content_type, "image/png");
    res.set("X-Progrun-Stamp", std::to_string(f->stamp));
    res.keep_alive(req.keep_alive());
    res.body().assign(png.begin(), png.end());
    res.prepare_payload();
    return res;
  }

  HttpResponse post_input(const HttpRequest& req, const std::string& id) {
    auto m = sched_.find(id);
    if (!m) return error(req, http::status::not_found, "no module '" + id + "'");
    if (!m->is_input()) return error(req, http::status::bad_request, id + " is not an input module");
    nlohmann::json msg = nlohmann::json::parse(req.body(), nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) return error(req, http::status::bad_request, "body must be a JSON object");
    try {
      sched_.submit_input(id, msg);
    } catch (const InputError& e) {
      return error(req, http::status::bad_request, e.what());
    } catch (const TableError& e) {
      return error(req, http::status::bad_request, e.what());
    }
    return json_response(req, http::status::ok, {{"status", "ok"}, {"run_number", sched_.run_number()}});
  }

  HttpResponse scheduler_command(const HttpRequest& req, const std::string& cmd) {
    if (cmd == "start") sched_.start();
    else if (cmd == "stop") sched_.stop();
    else if (cmd == "pause") sched_.pause();
    else if (cmd == "resume") sched_.resume();
    else if (cmd == "step") {
      std::size_t ran = sched_.step_once();
      nlohmann::json j = scheduler_json();
      j["ran"] = ran;
      return json_response(req, http::status::ok, j);
    } else {
      return error(req, http::status::not_found, "unknown scheduler command '" + cmd + "'");
    }
    return json_response(req, http::status::ok, scheduler_json());
  }

  static HttpResponse json_response(const HttpRequest& req, http::status st, const nlohmann::json& j) {
    HttpResponse res{st, req.version()};
    res.set(http::field::content_type, "application/json");
    res.keep_alive(req.keep_alive());
    res.body() = j.dump();
    res.prepare_payload();
    return res;
  }

  static HttpResponse error(const HttpRequest& req, http::status st, const std::string& msg) {
    return json_response(req, st, {{"error", msg}});
  }

  static std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i < path.size()) {
      std::size_t j = path.find('/', i);
      if (j == std::string::npos) j = path.size();
      if (j > i) parts.push_back(path.substr(i, j - i));
      i = j + 1;
    }
    return parts;
  }

  static std::map<std::string, std::string> parse_query(const std::string& target) {
    std::map<std::string, std::string> out;
    auto q = target.find('?');
    if (q == std::string::npos) return out;
    std::string s = target.substr(q + 1);
    std::size_t i = 0;
    while (i <= s.size()) {
      std::size_t j = s.find('&', i);
      if (j == std::string::npos) j = s.size();
      std::string kv = s.substr(i, j - i);
      auto eq = kv.find('=');
      if (!kv.empty()) out[kv.substr(0, eq)] = eq == std::string::npos ? "" : kv.substr(eq + 1);
      i = j + 1;
    }
    return out;
  }

  static bool parse_size(const std::map<std::string, std::string>& q, const char* key, std::size_t& out) {
    auto it = q.find(key);
    if (it == q.end()) return true;
    const std::string& v = it->second;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    return r.ec == std::errc() && r.ptr == v.data() + v.size();
  }

  Scheduler& sched_;
  std::string address_;
  unsigned short requested_port_;
  unsigned short port_ = 0;
  net::io_context ioc_;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> work_;
  std::unique_ptr<tcp::acceptor> acceptor_;
  std::vector<std::thread> threads_;
  int listener_ = 0;
  std::mutex sessions_mutex_;
  std::vector<std::weak_ptr<WsSession>> sessions_;
  std::mutex throttle_mutex_;
  std::map<std::string, Throttle> throttles_;
};

}  // namespace progrun
