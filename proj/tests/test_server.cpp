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

#include <catch_amalgamated.hpp>

#include <boost/asio/connect.hpp>
#include <boost/beast/websocket.hpp>

#include <sys/socket.h>

#include <chrono>
#include <condition_variable>
#include <random>
#include <sstream>
#include <thread>

#include "progrun/pipeline.hpp"
#include "progrun/query/variable.hpp"
#include "progrun/server/server.hpp"
#include "support.hpp"

using namespace progrun;
using nlohmann::json;
using progrun::testing::TempDir;

namespace {

std::string trips(std::size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lon(-74.2, -73.1), lat(40.5, 41.0);
  std::ostringstream o;
  o << "pickup_longitude,pickup_latitude\n";
  for (std::size_t i = 0; i < n; ++i) o << lon(rng) << ',' << lat(rng) << '\n';
  return o.str();
}

HttpRequest request(http::verb verb, const std::string& target, const std::string& body = "") {
  HttpRequest req{verb, target, 11};
  req.set(http::field::host, "localhost");
  if (!body.empty()) {
    req.set(http::field::content_type, "application/json");
    req.body() = body;
  }
  req.prepare_payload();
  return req;
}

struct Fixture {
  TempDir dir;
  Scheduler s;
  HeatmapPipeline p;
  std::shared_ptr<Variable> var;
  Server server{s};

  Fixture() {
    p = build_heatmap_pipeline(s, dir.write("t.csv", trips(2000)), "pickup_longitude", "pickup_latitude", 32);
    var = std::make_shared<Variable>();
    s.add(var, "var");
  }

  HttpResponse get(const std::string& target) { return server.handle(request(http::verb::get, target)); }
  HttpResponse post(const std::string& target, const std::string& body) {
    return server.handle(request(http::verb::post, target, body));
  }
};

json body(const HttpResponse& r) { return json::parse(r.body()); }

// Blocking client for the real-socket tests.
HttpResponse fetch(unsigned short port, HttpRequest req) {
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  beast::tcp_stream stream(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  req.keep_alive(false);
  http::write(stream, req);
  beast::flat_buffer buf;
  HttpResponse res;
  http::read(stream, buf, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return res;
}

// Shuts the socket down if a test is still blocked on it after `limit`, so a
// missing event fails the read instead of hanging the suite.
class Watchdog {
 public:
  Watchdog(tcp::socket& sock, std::chrono::seconds limit) : fd_(sock.native_handle()) {
    thread_ = std::thread([this, limit] {
      std::unique_lock lock(m_);
      if (!cv_.wait_for(lock, limit, [this] { return done_; })) ::shutdown(fd_, SHUT_RDWR);
    });
  }
  ~Watchdog() {
    {
      std::lock_guard lock(m_);
      done_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

 private:
  int fd_;
  std::mutex m_;
  std::condition_variable cv_;
  bool done_ = false;
  std::thread thread_;
};

}  // namespace

TEST_CASE("read routes", "[server]") {
  Fixture f;
  f.s.run_until_quiescent();

  auto r = f.get("/modules");
  CHECK(r.result() == http::status::ok);
  CHECK(r[http::field::content_type] == "application/json");
  CHECK(body(r).size() == 6);

  json g = body(f.get("/graph"));
  CHECK(g["nodes"].size() == 6);
  CHECK(g["edges"].size() == 6);

  json m = body(f.get("/module/" + f.p.csv->id()));
  CHECK(m["id"] == f.p.csv->id());
  CHECK(m.contains("trace"));

  json sched = body(f.get("/scheduler"));
  CHECK(sched["modules"] == 6);
  CHECK(sched["running"] == false);
}

TEST_CASE("data slices page through a table", "[server]") {
  Fixture f;
  f.s.run_until_quiescent();
  json d = body(f.get("/module/" + f.p.csv->id() + "/data/df?offset=10&limit=5"));
  CHECK(d["offset"] == 10);
  CHECK(d["total"] == 2000);
  CHECK(d["row_ids"] == json::array({10, 11, 12, 13, 14}));
  CHECK(d["columns"]["pickup_longitude"].size() == 5);
  CHECK(d["slot"] == "df");
  json tail = body(f.get("/module/" + f.p.csv->id() + "/data/df?offset=1998"));
  CHECK(tail["row_ids"].size() == 2);
  CHECK(f.get("/module/" + f.p.csv->id() + "/data/df?limit=-1").result() == http::status::bad_request);
  CHECK(f.get("/module/" + f.p.csv->id() + "/data/nope").result() == http::status::not_found);
}

TEST_CASE("missing things are 404 and bad verbs 405", "[server]") {
  Fixture f;
  CHECK(f.get("/module/ghost").result() == http::status::not_found);
  CHECK(f.get("/nowhere").result() == http::status::not_found);
  CHECK(f.get("/heatmap/ghost.png").result() == http::status::not_found);
  CHECK(f.get("/heatmap/" + f.p.csv->id() + ".png").result() == http::status::not_found);
  CHECK(f.get("/heatmap/" + f.p.heatmap->id()).result() == http::status::not_found);
  CHECK(f.get("/heatmap/" + f.p.heatmap->id() + ".png").result() == http::status::not_found);  // no frame yet
  CHECK(f.server.handle(request(http::verb::delete_, "/modules")).result() == http::status::method_not_allowed);
  CHECK(body(f.get("/module/ghost"))["error"] == "no module 'ghost'");
}

TEST_CASE("heatmap frames are served as png", "[server]") {
  Fixture f;
  f.s.run_until_quiescent();
  auto r = f.get("/heatmap/" + f.p.heatmap->id() + ".png");
  REQUIRE(r.result() == http::status::ok);
  CHECK(r[http::field::content_type] == "image/png");
  CHECK(r.body().substr(1, 3) == "PNG");
  auto png = f.p.heatmap->frame()->png();
  CHECK(r.body() == std::string(png.begin(), png.end()));
  CHECK(r["X-Progrun-Stamp"] == std::to_string(f.p.heatmap->frame()->stamp));
}

TEST_CASE("input posts reach input modules only", "[server]") {
  Fixture f;
  f.s.run_until_quiescent();
  auto ok = f.post("/module/var/input", R"({"query": "-74.20 < pickup_longitude < -73.1"})");
  CHECK(ok.result() == http::status::ok);
  CHECK(body(ok)["status"] == "ok");
  CHECK(std::get<std::string>(*f.var->value("query")) == "-74.20 < pickup_longitude < -73.1");
  f.s.run_until_quiescent();
  CHECK(f.s.last_interaction().touched == std::vector<std::string>{"var"});

  CHECK(f.post("/module/var/input", "{not json").result() == http::status::bad_request);
  CHECK(f.post("/module/var/input", "[1, 2]").result() == http::status::bad_request);
  CHECK(f.post("/module/var/input", R"({"query": 3})").result() == http::status::bad_request);
  CHECK(f.post("/module/" + f.p.min->id() + "/input", "{}").result() == http::status::bad_request);
  CHECK(f.post("/module/ghost/input", "{}").result() == http::status::not_found);
}

TEST_CASE("scheduler commands", "[server]") {
  Fixture f;
  json step = body(f.post("/scheduler/step", ""));
  CHECK(step["ran"].get<std::size_t>() > 0);
  CHECK(f.post("/scheduler/warp", "").result() == http::status::not_found);
  CHECK(body(f.post("/scheduler/start", ""))["running"] == true);
  CHECK(body(f.post("/scheduler/pause", ""))["paused"] == true);
  CHECK(body(f.post("/scheduler/resume", ""))["paused"] == false);
  CHECK(body(f.post("/scheduler/stop", ""))["running"] == false);
}

TEST_CASE("the server answers over a real socket", "[server][net]") {
  Fixture f;
  f.server.start();
  REQUIRE(f.server.port() != 0);
  auto r = fetch(f.server.port(), request(http::verb::get, "/graph"));
  CHECK(r.result() == http::status::ok);
  CHECK(body(r)["nodes"].size() == 6);
  auto bad = fetch(f.server.port(), request(http::verb::post, "/module/var/input", "{oops"));
  CHECK(bad.result() == http::status::bad_request);
  f.server.stop();
}

TEST_CASE("publications are pushed over the websocket", "[server][net]") {
  Fixture f;
  f.server.start();
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  websocket::stream<tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(f.server.port())));
  ws.handshake("127.0.0.1", "/ws");
  Watchdog guard(ws.next_layer(), std::chrono::seconds(10));
  // the session registers before the handshake response goes out
  f.s.run_until_quiescent();

  std::map<std::string, RunNumber> latest;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  beast::get_lowest_layer(ws).non_blocking(false);
  while (!latest.count(f.p.heatmap->id()) && std::chrono::steady_clock::now() < deadline) {
    beast::flat_buffer buf;
    ws.read(buf);
    json ev = json::parse(beast::buffers_to_string(buf.data()));
    REQUIRE(ev.contains("module_id"));
    REQUIRE(ev.contains("run_number"));
    latest[ev["module_id"].get<std::string>()] = ev["run_number"].get<RunNumber>();
  }
  CHECK(latest.count(f.p.heatmap->id()) == 1);
  CHECK(latest.count(f.p.csv->id()) == 1);
  CHECK_FALSE(latest.count("var"));  // never published anything
  ws.close(websocket::close_code::normal);
  f.server.stop();
}

TEST_CASE("events are throttled per module but the last one arrives", "[server][net]") {
  Fixture f;
  f.server.start();
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  websocket::stream<tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(f.server.port())));
  ws.handshake("127.0.0.1", "/ws");
  Watchdog guard(ws.next_layer(), std::chrono::seconds(10));
  f.s.run_until_quiescent();

  // 50 quick edits to one variable within well under a second
  auto t0 = std::chrono::steady_clock::now();
  RunNumber last = 0;
  for (int i = 0; i < 50; ++i) {
    f.s.submit_input("var", {{"v", i}});
    f.s.run_until_quiescent();
    last = f.var->output("df").last_run();
  }
  double spent = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  int count = 0;
  RunNumber seen = 0;
  while (seen < last) {
    beast::flat_buffer buf;
    ws.read(buf);
    json ev = json::parse(beast::buffers_to_string(buf.data()));
    if (ev["module_id"] != "var") continue;
    ++count;
    CHECK(ev["run_number"].get<RunNumber>() > seen);
    seen = ev["run_number"].get<RunNumber>();
  }
  CHECK(seen == last);
  CHECK(count <= static_cast<int>(spent * 10) + 2);
  ws.close(websocket::close_code::normal);
  f.server.stop();
}

TEST_CASE("PROGRUN_PORT picks the default port", "[server]") {
  ::setenv("PROGRUN_PORT", "9123", 1);
  CHECK(default_port() == 9123);
  ::setenv("PROGRUN_PORT", "http", 1);
  CHECK(default_port(81) == 81);
  ::setenv("PROGRUN_PORT", "70000", 1);
  CHECK(default_port(82) == 82);
  ::unsetenv("PROGRUN_PORT");
  CHECK(default_port() == 8080);
}
