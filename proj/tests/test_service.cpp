#include <doctest.h>

#include <filesystem>
#include <thread>
#include <unistd.h>

#include "effectbench/error.hpp"
#include "effectbench/service.hpp"
#include "support.hpp"

#include <httplib.h>

using namespace effectbench;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

std::string binary_csv(int n, std::uint64_t seed) {
  const auto s = testsupport::simulate_confounded(n, seed, true, 1.0);
  return testsupport::numeric_csv({"Y", "A", "X1", "X2", "X3"}, {s.y, s.a, s.x.col(0), s.x.col(1), s.x.col(2)});
}

AnalysisRequest quick_request(int replicates = 100) {
  AnalysisRequest r;
  r.config.outcome_column = "Y";
  r.config.outcome_positive_level = 1.0;
  r.config.treatment_column = "A";
  r.options.bootstrap_replicates = replicates;
  r.options.learner_library = {learner_spec(LearnerKind::glm), learner_spec(LearnerKind::mean)};
  r.seed = 3;
  return r;
}

const char* kConfigBody =
    R"({"config":{"outcome_column":"Y","outcome_positive_level":1,"treatment_column":"A",)"
    R"("treatment_positive_level":1,"options":{"bootstrap_replicates":100,)"
    R"("learner_library":[{"kind":"glm"},{"kind":"mean"}]}},"seed":3})";

fs::path scratch_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("effectbench_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Json body_json(const httplib::Result& r) { return Json::parse(r->body); }

struct LiveServer {
  AnalysisService service;
  httplib::Server server;
  int port = 0;
  std::thread thread;

  explicit LiveServer(ServiceOptions opts = {}) : service(std::move(opts)) {
    register_routes(server, service);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(120, 0);
    return c;
  }
};

}  // namespace

TEST_CASE("upload assigns ids and parses the table") {
  AnalysisService svc;
  const auto a = svc.upload(binary_csv(50, 1));
  const auto b = svc.upload(binary_csv(50, 2));
  CHECK(a->dataset_id != b->dataset_id);
  CHECK(a->raw.n_rows == 50);
  CHECK(a->raw.column_names.size() == 5);
  CHECK_FALSE(a->created_at.empty());
  CHECK(svc.dataset(a->dataset_id)->raw.n_rows == 50);
  CHECK_THROWS_AS(svc.dataset("ds_missing"), Error);
  CHECK_THROWS_AS(svc.upload("a,b\n1,2,3\n"), Error);
}

TEST_CASE("job lifecycle in memory") {
  AnalysisService svc;
  const auto ds = svc.upload(binary_csv(300, 4));
  const auto id = svc.start(ds->dataset_id, quick_request());
  const auto snap = svc.wait(id, 120s);
  REQUIRE(snap.status == JobStatus::done);
  CHECK(snap.dataset_id == ds->dataset_id);
  CHECK_FALSE(snap.error_code.has_value());
  const auto doc = Json::parse(*svc.results(id));
  CHECK(doc.is_object());

  // Same request and seed reproduce the same document.
  const auto again = svc.start(ds->dataset_id, quick_request());
  REQUIRE(svc.wait(again, 120s).status == JobStatus::done);
  CHECK(*svc.results(again) == *svc.results(id));

  CHECK_THROWS_AS(svc.status("job_missing"), Error);
  CHECK_THROWS_AS(svc.results("job_missing"), Error);
}

TEST_CASE("invalid configs are rejected before queueing") {
  AnalysisService svc;
  const auto ds = svc.upload(binary_csv(100, 5));
  auto req = quick_request();
  req.config.outcome_column = "nope";
  try {
    svc.start(ds->dataset_id, req);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
  try {
    svc.start("ds_missing", quick_request());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::not_found);
  }
}

TEST_CASE("jobs that fail while running report an error code") {
  AnalysisService svc;
  const auto ds = svc.upload(binary_csv(100, 6));
  auto req = quick_request();
  req.options.clip_bound = 0.7;
  const auto id = svc.start(ds->dataset_id, req);
  const auto snap = svc.wait(id, 60s);
  REQUIRE(snap.status == JobStatus::failed);
  CHECK(snap.error_code == "config_error");
  CHECK(snap.error_detail.has_value());
  try {
    svc.results(id);
    FAIL("expected conflict");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::conflict);
  }
}

TEST_CASE("results conflict while a job is queued") {
  AnalysisService svc;
  const auto ds = svc.upload(binary_csv(2000, 7));
  auto slow = quick_request(2000);
  slow.options.learner_library = default_library();
  const auto first = svc.start(ds->dataset_id, slow);
  const auto second = svc.start(ds->dataset_id, quick_request());
  CHECK(svc.status(second).status == JobStatus::pending);
  CHECK_FALSE(svc.status(second).stage.has_value());
  try {
    svc.results(second);
    FAIL("expected conflict");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::conflict);
  }
  CHECK(svc.wait(second, 600s).status == JobStatus::done);
  CHECK(svc.status(first).status == JobStatus::done);
}

TEST_CASE("persisted datasets and finished jobs survive a restart") {
  const auto dir = scratch_dir("persist");
  ServiceOptions opts;
  opts.data_dir = dir;
  std::string ds_id, done_id, failed_id, doc;
  {
    AnalysisService svc(opts);
    ds_id = svc.upload(binary_csv(200, 8))->dataset_id;
    done_id = svc.start(ds_id, quick_request());
    REQUIRE(svc.wait(done_id, 120s).status == JobStatus::done);
    doc = *svc.results(done_id);
    auto bad = quick_request();
    bad.options.cv_folds = 1;
    failed_id = svc.start(ds_id, bad);
    REQUIRE(svc.wait(failed_id, 60s).status == JobStatus::failed);
  }
  CHECK(fs::exists(dir / "datasets" / (ds_id + ".csv")));
  CHECK(fs::exists(dir / "jobs" / (done_id + ".results.json")));

  AnalysisService reloaded(opts);
  CHECK(reloaded.dataset(ds_id)->raw.n_rows == 200);
  CHECK(reloaded.status(done_id).status == JobStatus::done);
  CHECK(*reloaded.results(done_id) == doc);
  const auto failed = reloaded.status(failed_id);
  CHECK(failed.status == JobStatus::failed);
  CHECK(failed.error_code == "config_error");
  fs::remove_all(dir);
}

TEST_CASE("http status mapping") {
  CHECK(http_status(ErrorKind::parse) == 422);
  CHECK(http_status(ErrorKind::config) == 422);
  CHECK(http_status(ErrorKind::numeric) == 422);
  CHECK(http_status(ErrorKind::not_found) == 404);
  CHECK(http_status(ErrorKind::conflict) == 409);
  CHECK(http_status(ErrorKind::io) == 500);
  const auto e = error_body("config", "bad", "x");
  CHECK(e["code"] == "config");
  CHECK(e["message"] == "bad");
  CHECK(e["detail"] == "x");
}

TEST_CASE("http dataset and analysis endpoints") {
  LiveServer live;
  auto cli = live.client();

  auto up = cli.Post("/datasets", binary_csv(300, 9), "text/csv");
  REQUIRE(up);
  CHECK(up->status == 201);
  const auto ds = body_json(up);
  const std::string ds_id = ds["dataset_id"];
  CHECK(ds["n_rows"] == 300);
  CHECK(ds["column_names"].size() == 5);
  CHECK(ds.contains("created_at"));

  SUBCASE("multipart upload") {
    httplib::MultipartFormDataItems items = {{"file", binary_csv(20, 1), "data.csv", "text/csv"}};
    auto r = cli.Post("/datasets", items);
    REQUIRE(r);
    CHECK(r->status == 201);
    CHECK(body_json(r)["n_rows"] == 20);
  }

  SUBCASE("empty and malformed uploads") {
    auto r = cli.Post("/datasets", "", "text/csv");
    REQUIRE(r);
    CHECK(r->status == 400);
    CHECK(body_json(r)["code"] == "bad_request");
    r = cli.Post("/datasets", "a,b\n1,2,3\n", "text/csv");
    REQUIRE(r);
    CHECK(r->status == 422);
    CHECK(body_json(r)["code"] == "parse_error");
  }

  SUBCASE("analysis round trip") {
    auto r = cli.Post("/datasets/" + ds_id + "/analyses", kConfigBody, "application/json");
    REQUIRE(r);
    CHECK(r->status == 202);
    const auto snap = body_json(r);
    const std::string job_id = snap["job_id"];
    CHECK(snap["dataset_id"] == ds_id);
    CHECK(snap.contains("status"));
    CHECK(snap.contains("stage"));

    REQUIRE(live.service.wait(job_id, 120s).status == JobStatus::done);
    auto st = cli.Get("/analyses/" + job_id + "/status");
    REQUIRE(st);
    CHECK(st->status == 200);
    CHECK(body_json(st)["status"] == "done");
    auto res = cli.Get("/analyses/" + job_id + "/results");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == *live.service.results(job_id));
  }

  SUBCASE("analysis errors") {
    auto r = cli.Post("/datasets/" + ds_id + "/analyses", "{not json", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    r = cli.Post("/datasets/" + ds_id + "/analyses", "", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    r = cli.Post("/datasets/" + ds_id + "/analyses", R"({"seed":1})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 422);
    r = cli.Post("/datasets/" + ds_id + "/analyses", R"({"config":{"outcome_column":"nope","treatment_column":"A"}})",
                 "application/json");
    REQUIRE(r);
    CHECK(r->status == 422);
    const auto err = body_json(r);
    CHECK(err["code"] == "config_error");
    CHECK(err.contains("message"));
    CHECK(err.contains("detail"));
    r = cli.Post("/datasets/ds_missing/analyses", kConfigBody, "application/json");
    REQUIRE(r);
    CHECK(r->status == 404);
    CHECK(body_json(r)["code"] == "not_found");
    auto g = cli.Get("/analyses/job_missing/status");
    REQUIRE(g);
    CHECK(g->status == 404);
    g = cli.Get("/analyses/job_missing/results");
    REQUIRE(g);
    CHECK(g->status == 404);
  }

  SUBCASE("results before completion is a conflict") {
    auto slow = quick_request(2000);
    slow.options.learner_library = default_library();
    const auto big = live.service.upload(binary_csv(2000, 10));
    const auto first = live.service.start(big->dataset_id, slow);
    auto r = cli.Post("/datasets/" + ds_id + "/analyses", kConfigBody, "application/json");
    REQUIRE(r);
    const std::string job_id = body_json(r)["job_id"];
    auto res = cli.Get("/analyses/" + job_id + "/results");
    REQUIRE(res);
    CHECK(res->status == 409);
    CHECK(body_json(res)["code"] == "conflict");
    CHECK(live.service.wait(job_id, 600s).status == JobStatus::done);
    CHECK(live.service.status(first).status == JobStatus::done);
  }
}

TEST_CASE("http descriptive endpoints") {
  LiveServer live;
  auto cli = live.client();
  const std::string ds_id = live.service.upload(binary_csv(200, 11))->dataset_id;
  const std::string base = "/datasets/" + ds_id;

  SUBCASE("overview") {
    auto r = cli.Get(base + "/overview");
    REQUIRE(r);
    CHECK(r->status == 200);
    const auto j = body_json(r);
    CHECK(j["n_subjects"] == 200);
    CHECK(j["columns"].size() == 5);
    const std::string cfg = R"({"outcome_column":"Y","outcome_positive_level":1,"treatment_column":"A"})";
    r = cli.Get(base + "/overview", httplib::Params{{"config", cfg}}, httplib::Headers{});
    REQUIRE(r);
    CHECK(r->status == 200);
    r = cli.Get("/datasets/ds_missing/overview");
    REQUIRE(r);
    CHECK(r->status == 404);
  }

  SUBCASE("eda") {
    auto r = cli.Get(base + "/eda", httplib::Params{{"variable", "X1"}, {"treatment", "A"}}, httplib::Headers{});
    REQUIRE(r);
    CHECK(r->status == 200);
    r = cli.Get(base + "/eda", httplib::Params{{"variable", "A"}, {"kind", "categorical"}}, httplib::Headers{});
    REQUIRE(r);
    CHECK(r->status == 200);
    r = cli.Get(base + "/eda", httplib::Params{{"variable", "nope"}}, httplib::Headers{});
    REQUIRE(r);
    CHECK(r->status == 422);
    r = cli.Get(base + "/eda", httplib::Params{{"variable", "X1"}, {"kind", "weird"}}, httplib::Headers{});
    REQUIRE(r);
    CHECK(r->status == 422);
    r = cli.Get(base + "/eda");
    REQUIRE(r);
    CHECK(r->status == 422);
  }

  SUBCASE("table1") {
    const std::string cfg = R"({"config":{"outcome_column":"Y","outcome_positive_level":1,"treatment_column":"A"}})";
    auto r = cli.Post(base + "/table1", cfg, "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    const auto j = body_json(r);
    CHECK(j.contains("tsv"));
    CHECK(j["tsv"].get<std::string>().find('\t') != std::string::npos);
    r = cli.Post(base + "/table1", "[1,", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    r = cli.Post(base + "/table1", R"({"outcome_column":"Y","treatment_column":"X1"})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 422);
  }

  SUBCASE("correlation") {
    auto r = cli.Post(base + "/correlation", R"({"variables":["X1","X2","X3"]})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    const auto j = body_json(r);
    REQUIRE(j["matrix"].size() == 3);
    CHECK(j["matrix"][0][0].get<double>() == doctest::Approx(1.0));
    CHECK(j["matrix"][0][1].get<double>() == doctest::Approx(j["matrix"][1][0].get<double>()));
    r = cli.Post(base + "/correlation", R"({"variables":["X1","nope"]})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 422);
    r = cli.Post(base + "/correlation", R"({"vars":[]})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 422);
  }
}
