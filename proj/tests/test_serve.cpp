#include <gtest/gtest.h>

#include "riskrl/serve.hpp"

// after Eigen: resolv.h defines a _res macro
#include <httplib.h>

using namespace riskrl;

namespace {

// Untrained riskynav teacher; a zeroed output layer makes it stand still, and a
// frozen obstacle keeps the episode alive for the full horizon.
Checkpoint still_checkpoint(RiskMetric metric, int horizon = 400) {
  EnvConfig env = default_env_config(Task::riskynav);
  env.horizon = horizon;
  env.params["obstacle_step"] = 0.0;
  TrainerConfig cfg;
  cfg.num_envs = 2;
  cfg.steps = 4;
  TeacherTrainer t(cfg, env, metric);
  t.actor().trunk.layers.back().weight.setZero();
  t.actor().trunk.layers.back().bias.setZero();
  return make_teacher_checkpoint(t);
}

Checkpoint moving_checkpoint(RiskMetric metric) {
  EnvConfig env = default_env_config(Task::riskynav);
  TrainerConfig cfg;
  cfg.num_envs = 2;
  cfg.steps = 4;
  cfg.seed = 3;
  TeacherTrainer t(cfg, env, metric);
  return make_teacher_checkpoint(t);
}

CheckpointStore test_store() {
  CheckpointStore s;
  s.add("still", still_checkpoint(RiskMetric::wang));
  s.add("moving", moving_checkpoint(RiskMetric::wang));
  s.add("still_cvar", still_checkpoint(RiskMetric::cvar));
  return s;
}

const CheckpointStore& store() {
  static const CheckpointStore s = test_store();
  return s;
}

QuantileDistribution quantiles_of(const json& frame) {
  return QuantileDistribution(frame.at("quantiles").get<std::vector<double>>());
}

std::vector<json> drain(FrameQueue& q, std::chrono::milliseconds wait) {
  std::vector<json> out;
  while (auto f = q.pop(wait)) out.push_back(json::parse(*f));
  return out;
}

}  // namespace

TEST(SessionCore, InitialFrameAndStepping) {
  SessionCore s("a", store().get("moving"), store().get("moving"), 0.5, 11);
  EXPECT_EQ(s.frame().at("t"), 0);
  EXPECT_FALSE(s.frame().at("terminated").get<bool>());
  for (int i = 1; i <= 5 && !s.terminated(); ++i) {
    const json& f = s.step();
    EXPECT_EQ(f.at("t"), i);
    EXPECT_EQ(f.at("beta"), 0.5);
    EXPECT_EQ(f.at("action").size(), 2u);
    EXPECT_FALSE(f.at("reward_terms").empty());
  }
}

TEST(SessionCore, DistortedValuesRecomputeExactlyFromSerializedFrame) {
  SessionCore s("a", store().get("moving"), store().get("moving"), -0.3, 5);
  for (int i = 0; i < 5 && !s.terminated(); ++i) {
    const json f = json::parse(s.step().dump());
    const auto z = quantiles_of(f);
    EXPECT_EQ(f.at("distorted").at("current").get<double>(), distorted_value(z, {RiskMetric::wang, -0.3}));
    EXPECT_EQ(f.at("distorted").at("refs").at("0.0").get<double>(), dist_mean(z));
    EXPECT_EQ(f.at("distorted").at("refs").at("-1.0").get<double>(), distorted_value(z, {RiskMetric::wang, -1.0}));
    EXPECT_EQ(f.at("distorted").at("refs").at("1.0").get<double>(), distorted_value(z, {RiskMetric::wang, 1.0}));
    double mass = 0.0;
    for (double m : f.at("histogram").at("masses")) mass += m;
    EXPECT_NEAR(mass, 1.0, 1e-12);
  }
}

TEST(SessionCore, CvarReferenceSet) {
  SessionCore s("a", store().get("still_cvar"), store().get("still_cvar"), 0.2, 5);
  const auto& refs = s.frame().at("distorted").at("refs");
  EXPECT_EQ(refs.size(), 3u);
  EXPECT_TRUE(refs.contains("0.05") && refs.contains("0.5") && refs.contains("1.0"));
  EXPECT_EQ(refs.at("1.0").get<double>(), dist_mean(quantiles_of(s.frame())));
}

TEST(SessionCore, OutOfRangeBetaRejectedAndUnchanged) {
  EXPECT_THROW(SessionCore("a", store().get("still"), store().get("still"), 2.0, 1), ConfigError);
  EXPECT_THROW(SessionCore("a", store().get("still_cvar"), store().get("still_cvar"), 0.0, 1), ConfigError);
  SessionCore s("a", store().get("still"), store().get("still"), 0.25, 1);
  EXPECT_THROW(s.set_beta(1.5), ConfigError);
  EXPECT_THROW(s.set_beta(std::nan("")), ConfigError);
  EXPECT_EQ(s.beta(), 0.25);
  s.set_beta(0.25);
  EXPECT_EQ(s.beta(), 0.25);
}

TEST(SessionCore, SameSeedSameFramesOtherSeedDiffers) {
  SessionCore a("a", store().get("moving"), store().get("moving"), 0.0, 21);
  SessionCore b("b", store().get("moving"), store().get("moving"), 0.0, 21);
  SessionCore c("c", store().get("moving"), store().get("moving"), 0.0, 22);
  EXPECT_EQ(a.frame().at("geometry"), b.frame().at("geometry"));
  EXPECT_NE(a.frame().at("geometry"), c.frame().at("geometry"));
  for (int i = 0; i < 5 && !a.terminated(); ++i) EXPECT_EQ(a.step().dump(), b.step().dump());
}

TEST(SessionCore, TerminatedSessionReplaysTerminalFrame) {
  SessionCore s("a", store().get("moving"), store().get("moving"), 0.0, 2);
  int guard = 0;
  while (!s.terminated() && guard++ < 1000) s.step();
  ASSERT_TRUE(s.terminated());
  const std::string terminal = s.frame().dump();
  EXPECT_EQ(s.step().dump(), terminal);
  EXPECT_TRUE(s.frame().at("terminated").get<bool>());
  EXPECT_NE(s.frame().at("cause"), "none");
  s.reset();
  EXPECT_EQ(s.frame().at("t"), 0);
  EXPECT_EQ(s.frame().at("episode"), 1);
}

TEST(SessionCore, CriticTaskMismatchRejected) {
  CheckpointStore s;
  TrainerConfig cfg;
  cfg.num_envs = 2;
  cfg.steps = 4;
  TeacherTrainer t(cfg, default_env_config(Task::cliffslip), RiskMetric::wang);
  s.add("cliff", make_teacher_checkpoint(t));
  s.add("nav", still_checkpoint(RiskMetric::wang));
  EXPECT_THROW(SessionCore("a", s.get("nav"), s.get("cliff"), 0.0, 1), ConfigError);
  EXPECT_THROW(s.get("missing"), NotFound);
}

TEST(Session, PausedEmitsNothingAfterInitialFrame) {
  Session s(SessionCore("a", store().get("still"), store().get("still"), 0.0, 1), 100.0);
  auto q = s.subscribe();
  auto frames = drain(*q, std::chrono::milliseconds(200));
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].at("t"), 0);
  EXPECT_EQ(s.descriptor().at("state"), "paused");
}

TEST(Session, LastWriterWinsAndEmittedFramesUnaffected) {
  Session s(SessionCore("a", store().get("still"), store().get("still"), 0.0, 1), 50.0);
  auto q = s.subscribe();
  s.resume();
  std::vector<json> seen;
  while (seen.size() < 4) {
    auto f = q->pop(std::chrono::seconds(2));
    ASSERT_TRUE(f);
    seen.push_back(json::parse(*f));
  }
  s.set_beta(0.1);
  s.set_beta(-0.7);
  s.set_beta(0.9);
  EXPECT_THROW(s.set_beta(3.0), ConfigError);
  for (const auto& f : seen) EXPECT_EQ(f.at("beta"), 0.0);
  // At most one frame may already be in flight when the sets arrive.
  int switched_at = -1;
  for (int i = 0; i < 6; ++i) {
    auto f = q->pop(std::chrono::seconds(2));
    ASSERT_TRUE(f);
    const json j = json::parse(*f);
    seen.push_back(j);
    const double b = j.at("beta").get<double>();
    EXPECT_TRUE(b == 0.0 || b == 0.9) << b;
    if (b == 0.9 && switched_at < 0) switched_at = i;
    if (switched_at >= 0) {
      EXPECT_EQ(b, 0.9);
    }
  }
  EXPECT_GE(switched_at, 0);
  EXPECT_LE(switched_at, 1);
  for (std::size_t i = 1; i < seen.size(); ++i) EXPECT_EQ(seen[i].at("t").get<int>(), seen[i - 1].at("t").get<int>() + 1);
  s.stop();
}

TEST(Session, FrameRateWithinTwentyPercent) {
  const double hz = 50.0;
  Session s(SessionCore("a", store().get("still"), store().get("still"), 0.0, 1), hz);
  auto q = s.subscribe();
  ASSERT_TRUE(q->pop(std::chrono::seconds(1)));
  s.resume();
  ASSERT_TRUE(q->pop(std::chrono::seconds(1)));
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 100; ++i) ASSERT_TRUE(q->pop(std::chrono::seconds(2)));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = 100.0 / secs;
  EXPECT_GT(rate, 0.8 * hz);
  EXPECT_LT(rate, 1.2 * hz);
}

TEST(Session, ResetStartsPausedEpisodeAtZero) {
  Session s(SessionCore("a", store().get("still"), store().get("still"), 0.0, 1), 100.0);
  auto q = s.subscribe();
  q->pop(std::chrono::seconds(1));
  s.resume();
  for (int i = 0; i < 3; ++i) ASSERT_TRUE(q->pop(std::chrono::seconds(1)));
  s.reset();
  bool saw_zero = false;
  for (int i = 0; i < 5 && !saw_zero; ++i) {
    auto f = q->pop(std::chrono::seconds(1));
    ASSERT_TRUE(f);
    const json j = json::parse(*f);
    saw_zero = j.at("t") == 0 && j.at("episode") == 1;
  }
  EXPECT_TRUE(saw_zero);
  EXPECT_TRUE(drain(*q, std::chrono::milliseconds(150)).empty());
  EXPECT_EQ(s.descriptor().at("state"), "paused");
}

TEST(Session, SubscribeFromReplaysBufferedFrames) {
  Session s(SessionCore("a", store().get("still"), store().get("still"), 0.0, 1), 200.0);
  auto first = s.subscribe();
  s.resume();
  for (int i = 0; i < 11; ++i) ASSERT_TRUE(first->pop(std::chrono::seconds(1)));
  s.pause();
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  auto late = s.subscribe(5);
  auto f = late->pop(std::chrono::seconds(1));
  ASSERT_TRUE(f);
  EXPECT_EQ(json::parse(*f).at("t"), 5);
}

// ---------------------------------------------------------------------------
// Socket layer

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    manager_ = std::make_unique<SessionManager>(store(), 9);
    server_ = std::make_unique<Server>(*manager_);
    port_ = server_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    client_.reset();
    server_->stop();
  }

  json post(const std::string& path, const json& body, int expect) {
    auto r = client_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << r->body;
    return json::parse(r->body);
  }
  json get(const std::string& path, int expect = 200) {
    auto r = client_->Get(path);
    EXPECT_TRUE(r);
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << r->body;
    return json::parse(r->body);
  }

  std::unique_ptr<SessionManager> manager_;
  std::unique_ptr<Server> server_;
  std::unique_ptr<httplib::Client> client_;
  unsigned short port_ = 0;
};

TEST_F(ServerTest, CheckpointListing) {
  const json list = get("/checkpoints");
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[0].at("name"), "moving");
  EXPECT_EQ(list[0].at("metric"), "wang");
  EXPECT_EQ(list[0].at("beta_range"), json({-1.0, 1.0}));
}

TEST_F(ServerTest, CreateAndErrors) {
  const json d = post("/sessions", {{"checkpoint", "still"}, {"beta", -0.5}}, 201);
  EXPECT_EQ(d.at("id"), "s1");
  EXPECT_EQ(d.at("task"), "riskynav");
  EXPECT_EQ(d.at("metric"), "wang");
  EXPECT_EQ(d.at("beta"), -0.5);
  EXPECT_EQ(d.at("state"), "paused");
  EXPECT_EQ(d.at("t"), 0);

  const json d2 = post("/sessions", {{"checkpoint", "still"}}, 201);
  EXPECT_NE(d2.at("seed"), d.at("seed"));

  EXPECT_TRUE(post("/sessions", {{"checkpoint", "still"}, {"beta", 2.0}}, 400).contains("error"));
  EXPECT_TRUE(post("/sessions", {{"checkpoint", "nope"}}, 404).contains("error"));
  EXPECT_TRUE(post("/sessions", {{"checkpoint", "still"}, {"bogus", 1}}, 400).at("error").get<std::string>().find(
                  "request.bogus") != std::string::npos);
  auto bad = client_->Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  EXPECT_EQ(get("/sessions/s1").at("beta"), -0.5);
  get("/sessions/s99", 404);
  get("/nothing", 404);
}

TEST_F(ServerTest, BetaControl) {
  post("/sessions", {{"checkpoint", "still"}, {"beta", 0.0}}, 201);
  EXPECT_EQ(post("/sessions/s1/beta", {{"beta", 0.75}}, 200).at("beta"), 0.75);
  EXPECT_TRUE(post("/sessions/s1/beta", {{"beta", -4.0}}, 400).contains("error"));
  post("/sessions/s1/beta", json::object(), 400);
  post("/sessions/s9/beta", {{"beta", 0.1}}, 404);
  post("/sessions/s1/jump", json::object(), 404);
  // applied at the next boundary even while paused
  json d;
  for (int i = 0; i < 50; ++i) {
    d = get("/sessions/s1");
    if (d.at("beta") == 0.75) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  EXPECT_EQ(d.at("beta"), 0.75);
}

TEST_F(ServerTest, WebSocketStreamEchoesBetaInOrder) {
  namespace beast = boost::beast;
  namespace websocket = beast::websocket;
  namespace net = boost::asio;
  post("/sessions", {{"checkpoint", "still"}, {"beta", -1.0}, {"hz", 40.0}}, 201);

  net::io_context ioc;
  net::ip::tcp::resolver resolver(ioc);
  websocket::stream<net::ip::tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port_)));
  ws.handshake("127.0.0.1", "/sessions/s1/stream");

  auto read_frame = [&] {
    beast::flat_buffer buf;
    ws.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  };
  json f = read_frame();
  EXPECT_EQ(f.at("t"), 0);
  for (const char* key : {"t", "beta", "geometry", "quantiles", "histogram", "distorted", "reward_terms", "terminated",
                          "cause"})
    EXPECT_TRUE(f.contains(key)) << key;

  post("/sessions/s1/resume", json::object(), 200);
  int last_t = 0;
  for (int i = 0; i < 5; ++i) {
    f = read_frame();
    EXPECT_EQ(f.at("t").get<int>(), last_t + 1);
    last_t = f.at("t").get<int>();
    EXPECT_EQ(f.at("beta"), -1.0);
  }
  post("/sessions/s1/beta", {{"beta", 1.0}}, 200);
  int frames_until_echo = 0;
  for (; frames_until_echo < 10; ++frames_until_echo) {
    f = read_frame();
    EXPECT_EQ(f.at("t").get<int>(), last_t + 1);
    last_t = f.at("t").get<int>();
    EXPECT_EQ(f.at("distorted").at("refs").at("0.0").get<double>(), dist_mean(quantiles_of(f)));
    if (f.at("beta") == 1.0) break;
  }
  EXPECT_LE(frames_until_echo, 1);
  EXPECT_EQ(f.at("distorted").at("current").get<double>(), distorted_value(quantiles_of(f), {RiskMetric::wang, 1.0}));

  post("/sessions/s1/pause", json::object(), 200);
  beast::error_code ec;
  ws.next_layer().close(ec);
}

TEST_F(ServerTest, StreamForUnknownSessionRefused) {
  namespace websocket = boost::beast::websocket;
  namespace net = boost::asio;
  net::io_context ioc;
  net::ip::tcp::resolver resolver(ioc);
  websocket::stream<net::ip::tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port_)));
  boost::beast::error_code ec;
  ws.handshake("127.0.0.1", "/sessions/s42/stream", ec);
  EXPECT_TRUE(ec);
}

TEST(ServeRouting, TargetParsing) {
  const auto t = serve_detail::parse_target("/sessions/s3/stream?from=12&x=");
  ASSERT_EQ(t.segments.size(), 3u);
  EXPECT_EQ(t.segments[1], "s3");
  EXPECT_EQ(t.query.at("from"), "12");
  EXPECT_EQ(t.query.at("x"), "");
}
