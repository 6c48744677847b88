#include <doctest.h>

#include <chrono>
#include <httplib.h>
#include <json.hpp>
#include <thread>

#include "cloak/image_io.hpp"
#include "cloak/metrics.hpp"
#include "cloak/service.hpp"
#include "support/fixtures.hpp"
#include "support/stub_detector.hpp"

using namespace cloak;
using nlohmann::json;

namespace {

const Box kA{2, 2, 12, 12}, kB{18, 4, 28, 14};

struct Running {
  explicit Running(ServiceOptions options = {})
      : service(std::make_shared<testing::StubDetector>(std::vector<Box>{kA, kB}), options),
        port(service.start_background()),
        client("127.0.0.1", port) {
    client.set_read_timeout(30, 0);
  }
  ~Running() { service.stop(); }

  std::string upload(const Image& image) {
    const auto png = encode_png(image, BitDepth::k8);
    auto res = client.Post("/v1/sessions", std::string(png.begin(), png.end()), "image/png");
    REQUIRE(res);
    REQUIRE(res->status == 201);
    return json::parse(res->body)["session_id"];
  }

  std::string submit(const std::string& session, const json& body, int expect = 202) {
    auto res = client.Post("/v1/sessions/" + session + "/attacks", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE_MESSAGE(res->status == expect, res->body);
    return expect == 202 ? json::parse(res->body)["job_id"].get<std::string>() : res->body;
  }

  json wait(const std::string& job) {
    for (int i = 0; i < 600; ++i) {
      auto res = client.Get("/v1/jobs/" + job);
      REQUIRE(res);
      json j = json::parse(res->body);
      if (j["state"] == "done" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    FAIL("job did not finish");
    return {};
  }

  Service service;
  int port;
  httplib::Client client;
};

Image scene() { return testing::stub_scene({{kA, 0}, {kB, 1}}); }

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("session upload returns pre-detections") {
    Running s;
    const auto png = encode_png(scene(), BitDepth::k8);
    auto res = s.client.Post("/v1/sessions", std::string(png.begin(), png.end()), "image/png");
    REQUIRE(res);
    CHECK(res->status == 201);
    const json j = json::parse(res->body);
    CHECK(j["width"] == 32);
    REQUIRE(j["detections"].size() == 2);
    std::set<std::string> names;
    for (const auto& d : j["detections"]) names.insert(d["category_name"]);
    CHECK(names == std::set<std::string>{"red", "green"});

    auto again = s.client.Get("/v1/sessions/" + j["session_id"].get<std::string>());
    REQUIRE(again);
    CHECK(again->status == 200);
    CHECK(json::parse(again->body)["detections"] == j["detections"]);
  }

  TEST_CASE("multipart upload is accepted; garbage is 422") {
    Running s;
    const auto png = encode_png(scene(), BitDepth::k8);
    httplib::MultipartFormDataItems items{{"image", std::string(png.begin(), png.end()), "s.png", "image/png"}};
    auto res = s.client.Post("/v1/sessions", items);
    REQUIRE(res);
    CHECK(res->status == 201);
    auto bad = s.client.Post("/v1/sessions", "definitely not a png", "image/png");
    REQUIRE(bad);
    CHECK(bad->status == 422);
  }

  TEST_CASE("unknown ids are 404") {
    Running s;
    CHECK(s.client.Get("/v1/sessions/nope")->status == 404);
    CHECK(s.client.Get("/v1/jobs/nope")->status == 404);
    CHECK(s.client.Get("/v1/jobs/nope/result")->status == 404);
    CHECK(s.client.Post("/v1/sessions/nope/attacks", "{}", "application/json")->status == 404);
  }

  TEST_CASE("invalid attack parameters are 422 with field errors") {
    Running s;
    const auto session = s.upload(scene());
    const json body = json::parse(s.submit(session, {{"mode", "all"}, {"epsilon", 0}}, 422));
    REQUIRE(body["fields"].is_array());
    CHECK(body["fields"][0]["field"] == "epsilon");
    const json multi = json::parse(
        s.submit(session, {{"mode", "sensitive"}, {"sensitive", {"purple"}}, {"threshold", 2}}, 422));
    std::set<std::string> fields;
    for (const auto& f : multi["fields"]) fields.insert(f["field"]);
    CHECK(fields.contains("sensitive"));
    CHECK(fields.contains("threshold"));
    CHECK(fields.contains("target_class"));
    s.submit(session, {{"mode", "sideways"}}, 422);
    auto res = s.client.Post("/v1/sessions/" + session + "/attacks", "{oops", "application/json");
    CHECK(res->status == 422);
  }

  TEST_CASE("hide-all job: trace, result and stable image bytes") {
    Running s;
    const auto session = s.upload(scene());
    const auto job = s.submit(session, {{"mode", "all"}, {"epsilon", "4/255"}});
    const json state = s.wait(job);
    CHECK(state["state"] == "done");
    CHECK_FALSE(state["trace"].empty());

    auto res = s.client.Get("/v1/jobs/" + job + "/result");
    REQUIRE(res);
    CHECK(res->status == 200);
    const json result = json::parse(res->body);
    CHECK(result["succeeded"] == true);
    CHECK(result["final_detections"].empty());
    CHECK(result["psnr"].get<double>() > 10.0);

    auto img1 = s.client.Get("/v1/jobs/" + job + "/result/image");
    auto img2 = s.client.Get("/v1/jobs/" + job + "/result/image");
    REQUIRE(img1);
    CHECK(img1->status == 200);
    CHECK(img1->body == img2->body);
    const std::vector<unsigned char> bytes(img1->body.begin(), img1->body.end());
    const Image adv = decode_png(bytes);
    testing::StubDetector det({kA, kB});
    CHECK(det.detect(adv, 0.3).empty());
    CHECK(psnr(scene(), adv) == doctest::Approx(result["psnr"].get<double>()));
  }

  TEST_CASE("sensitive job by box index disguises only that box") {
    Running s;
    const auto session = s.upload(scene());
    const json session_info = json::parse(s.client.Get("/v1/sessions/" + session)->body);
    int red_index = -1;
    for (const auto& d : session_info["detections"]) {
      if (d["category_name"] == "red") red_index = d["index"];
    }
    REQUIRE(red_index >= 0);
    const auto job = s.submit(session, {{"mode", "sensitive"},
                                        {"sensitive_boxes", {red_index}},
                                        {"target_class", "blue"},
                                        {"epsilon", "4/255"}});
    CHECK(s.wait(job)["state"] == "done");
    const json result = json::parse(s.client.Get("/v1/jobs/" + job + "/result")->body);
    for (const auto& d : result["final_detections"]) CHECK(d["category_name"] != "red");
  }

  TEST_CASE("jobs on one session queue in FIFO order, or 409 without queueing") {
    {
      Running s;
      const auto session = s.upload(scene());
      const auto first = s.submit(session, {{"mode", "all"}, {"epsilon", "1/255"}});
      const auto second = s.submit(session, {{"mode", "all"}, {"epsilon", "2/255"}});
      CHECK(s.wait(second)["state"] == "done");
      CHECK(s.wait(first)["state"] == "done");
    }
    {
      ServiceOptions o;
      o.queueing = false;
      Running s(o);
      const auto session = s.upload(scene());
      // Slow job: tiny step and many iterations so the session stays busy.
      s.submit(session, {{"mode", "all"}, {"epsilon", 1e-4}, {"max_iters", 150}});
      auto res = s.client.Post("/v1/sessions/" + session + "/attacks", json{{"mode", "all"}}.dump(),
                               "application/json");
      REQUIRE(res);
      CHECK(res->status == 409);
    }
  }

  TEST_CASE("result before completion is 409") {
    ServiceOptions o;
    o.workers = 1;
    Running s(o);
    const auto a = s.upload(scene()), b = s.upload(scene());
    s.submit(a, {{"mode", "all"}, {"epsilon", 1e-4}, {"max_iters", 150}});
    const auto queued = s.submit(b, {{"mode", "all"}, {"epsilon", 1e-4}, {"max_iters", 150}});
    auto res = s.client.Get("/v1/jobs/" + queued + "/result");
    REQUIRE(res);
    CHECK(res->status == 409);
  }
}
