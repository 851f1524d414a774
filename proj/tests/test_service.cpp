#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "timflow/dataset.hpp"
#include "timflow/error.hpp"
#include "timflow/heuristic.hpp"
#include "timflow/service.hpp"
#include "timflow/surrogate.hpp"

using namespace timflow;
using nlohmann::json;

namespace {

const char* kLine = R"({"points":[[2,3.5],[6,3.5]],"feeds":[1]})";

std::string request(const std::string& pattern, const std::string& extra = "") {
  return R"({"pattern":)" + pattern + R"(,"resolution":[8,8])" + extra + "}";
}

std::string code_of(const HttpResponse& r) { return json::parse(r.body)["error"]["code"]; }

SurrogateModel tiny_model(GridSpec res) {
  Hyperparams hp;
  hp.conv_layers = 2;
  hp.filters = 4;
  hp.kernel = 3;
  return SurrogateModel::initialized(hp, res, 2.0, 5);
}

std::string header(const HttpResponse& r, const std::string& name) {
  for (const auto& [k, v] : r.headers)
    if (k == name) return v;
  return "";
}

}  // namespace

TEST(Service, HealthReportsModelState) {
  const Service bare(std::nullopt, "9.9.9");
  EXPECT_EQ(bare.health().body, R"({"model_loaded":false,"status":"ok","version":"9.9.9"})");
  const Service loaded(tiny_model({8, 8}), "9.9.9");
  EXPECT_EQ(json::parse(loaded.health().body)["model_loaded"], true);
  EXPECT_EQ(Service().health().status, 200);
}

TEST(Service, DiscretizeGolden) {
  const HttpResponse r = Service().discretize(request(kLine));
  ASSERT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  EXPECT_EQ(j["resolution"], json::array({8, 8}));
  EXPECT_EQ(j["total_mass"], 4.0);
  EXPECT_EQ(j["dispensed"]["height"], 8);
  std::vector<double> expect(64, 0.0);
  for (int c = 2; c < 6; ++c) expect[3 * 8 + c] = 1.0;
  EXPECT_EQ(j["dispensed"]["amounts"].get<std::vector<double>>(), expect);
}

TEST(Service, CompressHeuristicMatchesLibrary) {
  const std::string pattern = R"({"points":[[2,4],[6,4]],"feeds":[3]})";
  const HttpResponse r = Service().compress(request(pattern, R"(,"gap":0.5,"schedule":"mult:0.9")"));
  ASSERT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  EXPECT_EQ(j["model"], "heuristic");
  EXPECT_EQ(j["gap"], 0.5);
  CompressionConfig c;
  c.termination_height = 0.5;
  c.schedule = Multiplicative{0.9};
  const TimGrid want = compress(discretize(parse_pattern(pattern), {8, 8}), c).compressed;
  const auto got = j["compressed"]["amounts"].get<std::vector<double>>();
  ASSERT_EQ(got.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(got[i], wire_round(want.amounts()[i]));
  EXPECT_EQ(j["void_count"], 0);
  EXPECT_EQ(j["off_grid_mass"], 0.0);
  EXPECT_GT(j["coverage_ratio"].get<double>(), 0.0);
  EXPECT_FALSE(header(r, "X-Compute-Ms").empty());
}

TEST(Service, CompressSurrogateMatchesPredictor) {
  const SurrogateModel model = tiny_model({8, 8});
  const Service s(model);
  const HttpResponse r = s.compress(request(kLine, R"(,"model":"surrogate","gap":1.5)"));
  ASSERT_EQ(r.status, 200) << r.body;
  const TimGrid want = predict_compressed(model, parse_pattern(kLine), 1.5);
  const auto got = json::parse(r.body)["compressed"]["amounts"].get<std::vector<double>>();
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(got[i], wire_round(want.amounts()[i]));
}

TEST(Service, RepeatsAreByteIdentical) {
  const Service s;
  const std::string body = request(kLine, R"(,"gap":0.25)");
  const HttpResponse a = s.compress(body);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s.compress(body).body, a.body);
}

TEST(Service, TimdNegotiation) {
  const HttpResponse r = Service().compress(request(kLine), true);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "application/x-timd");
  GridSpec spec;
  const auto records = parse_timd(r.body, &spec);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(spec, (GridSpec{8, 8}));
  EXPECT_EQ(records[0].pattern, parse_pattern(kLine));
  const HttpResponse d = Service().discretize(request(kLine), true);
  EXPECT_EQ(parse_timd(d.body)[0].dispensed, discretize(parse_pattern(kLine), {8, 8}));
}

TEST(Service, ErrorTaxonomy) {
  const Service s(std::nullopt, "1", ServiceLimits{64});
  const Service with_model(tiny_model({16, 16}));
  struct Case {
    HttpResponse response;
    int status;
    const char* code;
  };
  const Case cases[] = {
      {s.compress("{oops"), 400, "invalid_pattern"},
      {s.compress("[1,2]"), 400, "invalid_pattern"},
      {s.compress(R"({"resolution":[8,8]})"), 400, "invalid_pattern"},
      {s.compress(request(R"({"points":[[0,0]],"feeds":[]})")), 400, "invalid_pattern"},
      {s.compress(request(kLine, R"(,"colour":1)")), 400, "invalid_request"},
      {s.compress(request(kLine, R"(,"gap":0)")), 400, "invalid_request"},
      {s.compress(request(kLine, R"(,"model":"magic")")), 400, "invalid_request"},
      {s.compress(request(kLine, R"(,"schedule":"fast")")), 400, "invalid_request"},
      {s.compress(request(kLine, R"(,"model":"surrogate","boundary":"error")")), 400, "invalid_request"},
      {s.compress(R"({"pattern":{"points":[[2,3.5],[6,3.5]],"feeds":[1]},"resolution":[65,8]})"), 400,
       "resolution_limit"},
      {s.compress(request(R"({"points":[[2,3.5],[12,3.5]],"feeds":[1]})")), 400, "out_of_bounds"},
      {s.compress(request(R"({"points":[[3,3.5],[5,3.5]],"feeds":[40]})")), 409, "overflow"},
      {s.compress(request(kLine, R"(,"model":"surrogate")")), 503, "model_unavailable"},
      {with_model.compress(request(kLine, R"(,"model":"surrogate")")), 400, "shape_mismatch"},
      {s.discretize(request(R"({"points":[[2,3.5],[6,3.5]],"feeds":[-1]})")), 400, "invalid_pattern"},
  };
  for (const Case& c : cases) {
    EXPECT_EQ(c.response.status, c.status) << c.response.body;
    EXPECT_EQ(code_of(c.response), c.code) << c.response.body;
    EXPECT_FALSE(json::parse(c.response.body)["error"]["message"].get<std::string>().empty());
  }
  const Service starved(std::nullopt, "1", ServiceLimits{64, 1});
  const HttpResponse internal = starved.compress(request(R"({"points":[[3,3.5],[5,3.5]],"feeds":[6]})"));
  EXPECT_EQ(internal.status, 500);
  EXPECT_EQ(code_of(internal), "internal_error");
  EXPECT_EQ(error_response(500, "internal_error", "x").body, R"({"error":{"code":"internal_error","message":"x"}})");
}

TEST(Service, CropBoundaryReportsOffGridMass) {
  const HttpResponse r =
      Service().compress(request(R"({"points":[[3,3.5],[5,3.5]],"feeds":[40]})", R"(,"boundary":"crop:0")"));
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_GT(json::parse(r.body)["off_grid_mass"].get<double>(), 0.0);
}

TEST(Service, WireRounding) {
  EXPECT_EQ(wire_round(0.123456789), 0.123457);
  EXPECT_EQ(wire_round(0.0), 0.0);
  EXPECT_EQ(wire_round(1234567.0), 1234570.0);
}

class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    server = std::make_unique<HttpServer>(std::make_shared<Service>(std::nullopt, "t"));
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->listen(); });
    server->wait_until_ready();
  }
  void TearDown() override {
    server->stop();
    thread.join();
  }
  std::unique_ptr<HttpServer> server;
  int port = 0;
  std::thread thread;
};

TEST_F(HttpFixture, RoutesAndNotFound) {
  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/api/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->body, R"({"model_loaded":false,"status":"ok","version":"t"})");
  auto missing = cli.Get("/api/v2/nothing");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(code_of({404, missing->body}), "not_found");
  auto bad = cli.Post("/api/v1/compress", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto timd = cli.Post("/api/v1/discretize", httplib::Headers{{"Accept", "application/x-timd"}}, request(kLine),
                       "application/json");
  ASSERT_TRUE(timd);
  EXPECT_EQ(timd->get_header_value("Content-Type"), "application/x-timd");
  EXPECT_EQ(timd->body.substr(0, 4), "TIMD");
}

TEST_F(HttpFixture, ConcurrentIdenticalRequestsGetIdenticalBodies) {
  const std::string body = request(R"({"points":[[2,4],[6,4]],"feeds":[2.5]})");
  const std::string expected = Service(std::nullopt, "t").compress(body).body;
  std::vector<std::future<std::pair<int, std::string>>> results;
  for (int i = 0; i < 100; ++i) {
    results.push_back(std::async(std::launch::async, [&] {
      httplib::Client cli("127.0.0.1", port);
      auto r = cli.Post("/api/v1/compress", body, "application/json");
      return r ? std::make_pair(r->status, r->body) : std::make_pair(-1, std::string());
    }));
  }
  for (auto& f : results) {
    const auto [status, got] = f.get();
    EXPECT_EQ(status, 200);
    EXPECT_EQ(got, expected);
  }
  EXPECT_GE(server->requests_served(), 100u);
}
