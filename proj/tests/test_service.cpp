#include <cstdlib>
#include <future>

#include "doctest.h"
#include "mailproto/checkpoint.hpp"
#include "mailproto/service.hpp"
#include "support.hpp"

// after Eigen: resolv.h defines _res
#include "httplib.h"

using namespace mailproto;

namespace {

std::string request_for(const PreparedEmail& e) {
  nlohmann::json j{{"id", e.email.id}, {"subject", e.email.subject}, {"body", e.email.body}};
  if (e.email.recipient_org) j["recipient_org"] = *e.email.recipient_org;
  if (e.email.interests) j["interests"] = *e.email.interests;
  std::string parse;
  for (std::size_t i = 0; i < e.sentences.size(); ++i)
    if (e.sentences[i].parsed) parse += format_conllu({e.email.id, static_cast<int>(i)}, e.sentences[i].graph);
  if (!parse.empty()) j["parse"] = parse;
  return j.dump();
}

const InferenceService& service() {
  static const InferenceService s = [] {
    const auto dir = testing::scratch_dir("service");
    save_checkpoint(*testing::trained_tiny().model, dir);
    return InferenceService(load_checkpoint(dir));
  }();
  return s;
}

std::vector<std::string> field_names(const Reply& r) {
  std::vector<std::string> out;
  for (const auto& d : r.body.at("diagnostics")) out.push_back(d.at("field"));
  return out;
}

}  // namespace

TEST_CASE("request validation") {
  CHECK_THROWS_AS(parse_request("{not json"), RequestError);
  try {
    parse_request(R"({"subject": 3, "interests": "x"})");
    FAIL("expected RequestError");
  } catch (const RequestError& e) {
    std::vector<std::string> fields;
    for (const auto& f : e.errors()) fields.push_back(f.field);
    CHECK(fields == std::vector<std::string>{"subject", "body", "interests"});
  }
  const PreparedEmail ok = parse_request(R"({"subject": "Hi", "body": "Buy now. Thanks.", "recipient_org": " ACME.com"})");
  CHECK(ok.email.recipient_org == "acme.com");
  CHECK(ok.sentences.size() == 2);
  CHECK(ok.structural_degraded);

  const Reply bad = service().predict(R"({"body": "x"})");
  CHECK(bad.status == 400);
  CHECK(field_names(bad) == std::vector<std::string>{"subject"});
  const Reply broken = service().predict(R"({"subject": "s", "body": "b", "parse": "1\tx\tX\t5\troot\n"})");
  CHECK(broken.status == 400);
  CHECK(field_names(broken).front() == "parse");
}

TEST_CASE("health and unprojected models") {
  const Reply h = service().health();
  CHECK(h.status == 200);
  CHECK(h.body["model_version"] == testing::trained_tiny().model->version());
  CHECK(h.body["projected"] == true);

  InferenceService fresh(std::make_unique<Model>(testing::tiny_config()));
  CHECK(fresh.health().status == 200);
  const std::string req = R"({"subject": "s", "body": "b."})";
  for (const Reply& r : {fresh.predict(req), fresh.explain(req), fresh.suggest(req, "main"), fresh.prototypes()}) {
    CHECK(r.status == 503);
    CHECK(r.body.contains("hint"));
  }
}

TEST_CASE("predict and explain agree with offline inference") {
  const auto& t = testing::trained_tiny();
  const auto& rec = t.model->bank(Granularity::document).projection.front();
  REQUIRE(rec);
  const PreparedEmail* source = nullptr;
  for (const auto& e : t.train)
    if (e.email.id == rec->source_id) source = &e;
  REQUIRE(source);

  const std::string req = request_for(*source);
  const Reply p = service().predict(req);
  REQUIRE(p.status == 200);
  const Prediction offline = t.model->predict(t.model->featurize(*source));
  CHECK(p.body["probability"].get<double>() == offline.probabilities[1]);
  CHECK(p.body["label"] == offline.label);
  CHECK(p.body["structural_view"] == (source->structural_degraded ? "degraded" : "ok"));

  const Reply x = service().explain(req);
  REQUIRE(x.status == 200);
  nlohmann::json expected = to_json(explain(*t.model, *source, 3));
  expected["structural_view"] = p.body["structural_view"];
  CHECK(x.body == expected);
  CHECK(x.body.dump() == service().explain(req).body.dump());

  const nlohmann::json& doc = x.body["prototypes"]["document"];
  REQUIRE(doc.size() == 3);
  CHECK(doc[0]["similarity"].get<double>() == doctest::Approx(std::log(1e4)).epsilon(1e-9));

  auto with_top = nlohmann::json::parse(req);
  with_top["topN"] = 2;
  CHECK(service().explain(with_top.dump()).body["prototypes"]["document"].size() == 2);
  CHECK(service().explain(with_top.dump(), "1").body["prototypes"]["document"].size() == 1);
  CHECK(service().explain(req, "zero").status == 400);
  with_top["topN"] = -1;
  CHECK(service().explain(with_top.dump()).status == 400);
}

TEST_CASE("suggest positions") {
  const auto& t = testing::trained_tiny();
  const std::string req = request_for(t.test.front());
  CHECK(service().suggest(req).status == 400);
  CHECK(service().suggest(req, "middle").status == 400);
  const Reply r = service().suggest(req, "main");
  REQUIRE(r.status == 200);
  CHECK(r.body["position"] == "main");
  CHECK(r.body["suggestions"].is_array());
  auto in_body = nlohmann::json::parse(req);
  in_body["position"] = "subject";
  CHECK(service().suggest(in_body.dump()).body["position"] == "subject");
  CHECK(service().prototypes().status == 200);
}

TEST_CASE("checkpoint path override") {
  unsetenv(kCheckpointEnv);
  CHECK(resolve_checkpoint_path("configured") == "configured");
  setenv(kCheckpointEnv, "", 1);
  CHECK(resolve_checkpoint_path("configured") == "configured");
  setenv(kCheckpointEnv, "/tmp/other", 1);
  CHECK(resolve_checkpoint_path("configured") == "/tmp/other");
  unsetenv(kCheckpointEnv);
}

TEST_CASE("concurrent http requests match sequential results") {
  const auto& t = testing::trained_tiny();
  HttpServer server(service());
  const int port = server.bind("127.0.0.1", 0);
  server.start();

  std::vector<std::string> requests;
  for (int i = 0; i < 50; ++i) requests.push_back(request_for(t.test[static_cast<std::size_t>(i) % t.test.size()]));
  std::vector<std::string> sequential;
  for (const auto& r : requests) sequential.push_back(service().predict(r).body.dump());

  std::vector<std::future<std::pair<int, std::string>>> futures;
  for (const auto& r : requests)
    futures.push_back(std::async(std::launch::async, [port, &r] {
      httplib::Client client("127.0.0.1", port);
      const auto res = client.Post("/predict", r, "application/json");
      return res ? std::make_pair(res->status, res->body) : std::make_pair(-1, std::string());
    }));
  for (std::size_t i = 0; i < futures.size(); ++i) {
    const auto [status, body] = futures[i].get();
    CHECK(status == 200);
    CHECK(body == sequential[i]);
  }

  httplib::Client client("127.0.0.1", port);
  const auto h = client.Get("/health");
  REQUIRE(h);
  CHECK(nlohmann::json::parse(h->body)["status"] == "ok");
  const auto e = client.Post("/explain?topN=2", requests[0], "application/json");
  REQUIRE(e);
  CHECK(nlohmann::json::parse(e->body) == service().explain(requests[0], "2").body);
  const auto s = client.Post("/suggest?position=middle", requests[0], "application/json");
  REQUIRE(s);
  CHECK(s->status == 400);
  server.stop();
}
