// Eigen must precede httplib.h, which pulls in <resolv.h> and its _res macro.
#include "effectbench/diagnostics.hpp"
#include "effectbench/error.hpp"
#include "effectbench/service.hpp"

#include <httplib.h>

namespace effectbench {

namespace {

using httplib::Request;
using httplib::Response;

struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void send_json(Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(dump(body), "application/json");
}

void send_error(Response& res, int status, const std::string& code, const std::string& message,
                const std::string& detail) {
  send_json(res, status, error_body(code, message, detail));
}

template <typename Handler>
httplib::Server::Handler guarded(Handler h) {
  return [h](const Request& req, Response& res) {
    try {
      h(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.kind()), to_string(e.kind()), e.what(), e.detail());
    } catch (const BadRequest& e) {
      send_error(res, 400, "bad_request", e.what(), "");
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "bad_request", "malformed JSON body", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal_error", "unexpected failure", e.what());
    }
  };
}

Json parse_body(const Request& req) {
  if (req.body.empty()) throw BadRequest("empty body");
  return Json::parse(req.body);
}

// Variables named in a descriptive query are request content, so an
// unknown name is a 422 rather than a 404.
template <typename F>
auto as_content_error(F f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::not_found) throw Error(ErrorKind::config, e.what(), e.detail());
    throw;
  }
}

Json snapshot_json(const JobSnapshot& s) {
  Json j;
  j["job_id"] = s.job_id;
  j["dataset_id"] = s.dataset_id;
  j["status"] = std::string(to_string(s.status));
  j["stage"] = s.stage ? Json(std::string(to_string(*s.stage))) : Json(nullptr);
  if (s.error_code) j["error_code"] = *s.error_code;
  if (s.error_detail) j["error_detail"] = *s.error_detail;
  return j;
}

Json basic_overview(const RawTable& t) {
  const auto miss = missingness_report(t);
  Json cols = Json::array();
  for (std::size_t j = 0; j < t.n_cols(); ++j) {
    cols.push_back({{"name", t.column_names[j]}, {"numeric", t.is_numeric(j)}, {"pct_missing", number(miss.column_pct[j])}});
  }
  Json j;
  j["n_subjects"] = t.n_rows;
  j["n_columns"] = t.n_cols();
  j["pct_missing"] = number(miss.overall_pct);
  j["columns"] = cols;
  return j;
}

}  // namespace

int http_status(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parse:
    case ErrorKind::config:
    case ErrorKind::numeric: return 422;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::io: return 500;
  }
  return 500;
}

Json error_body(const std::string& code, const std::string& message, const std::string& detail) {
  Json j;
  j["code"] = code;
  j["message"] = message;
  j["detail"] = detail;
  return j;
}

void register_routes(httplib::Server& server, AnalysisService& service) {
  server.Post("/datasets", guarded([&](const Request& req, Response& res) {
    std::string bytes = req.body;
    if (req.is_multipart_form_data() && req.has_file("file")) bytes = req.get_file_value("file").content;
    if (bytes.empty()) throw BadRequest("empty body");
    const auto session = service.upload(std::move(bytes));
    Json j;
    j["dataset_id"] = session->dataset_id;
    j["column_names"] = session->raw.column_names;
    j["n_rows"] = session->raw.n_rows;
    j["created_at"] = session->created_at;
    send_json(res, 201, j);
  }));

  server.Post(R"(/datasets/([^/]+)/analyses)", guarded([&](const Request& req, Response& res) {
    const std::string id = req.matches[1];
    service.dataset(id);
    const auto body = parse_body(req);
    if (!body.is_object() || !body.contains("config")) {
      throw Error(ErrorKind::config, "invalid config", "request body needs a \"config\" object");
    }
    const std::uint64_t seed = body.value("seed", std::uint64_t{1});
    const auto job_id = service.start(id, request_from_json(body["config"], seed));
    send_json(res, 202, snapshot_json(service.status(job_id)));
  }));

  server.Get(R"(/analyses/([^/]+)/status)", guarded([&](const Request& req, Response& res) {
    send_json(res, 200, snapshot_json(service.status(req.matches[1])));
  }));

  server.Get(R"(/analyses/([^/]+)/results)", guarded([&](const Request& req, Response& res) {
    const auto doc = service.results(req.matches[1]);
    res.status = 200;
    res.set_content(*doc, "application/json");
  }));

  server.Get(R"(/datasets/([^/]+)/overview)", guarded([&](const Request& req, Response& res) {
    const auto session = service.dataset(req.matches[1]);
    if (!req.has_param("config")) {
      send_json(res, 200, basic_overview(session->raw));
      return;
    }
    const auto cfg = validate_config(session->raw, config_from_json(Json::parse(req.get_param_value("config"))));
    std::optional<SurvivalTimes> times;
    if (cfg.config.analysis_kind == AnalysisKind::survival) times = derive_survival(session->raw, cfg);
    send_json(res, 200, to_json(overview(session->raw, cfg, times ? &*times : nullptr)));
  }));

  server.Get(R"(/datasets/([^/]+)/eda)", guarded([&](const Request& req, Response& res) {
    const auto session = service.dataset(req.matches[1]);
    const auto& t = session->raw;
    if (!req.has_param("variable")) throw Error(ErrorKind::config, "missing query parameter", "variable");
    const auto variable = req.get_param_value("variable");
    const auto idx = t.find(variable);
    if (!idx) throw Error(ErrorKind::config, "unknown variable", variable);
    bool categorical = !t.is_numeric(*idx);
    if (req.has_param("kind")) {
      const auto kind = req.get_param_value("kind");
      if (kind == "categorical") {
        categorical = true;
      } else if (kind == "continuous") {
        categorical = false;
      } else {
        throw Error(ErrorKind::config, "kind must be categorical or continuous", kind);
      }
    }
    const auto treatment = req.has_param("treatment") ? req.get_param_value("treatment") : std::string();
    const auto report = as_content_error([&] { return eda_variable(t, variable, categorical, treatment); });
    send_json(res, 200, to_json(report));
  }));

  server.Post(R"(/datasets/([^/]+)/table1)", guarded([&](const Request& req, Response& res) {
    const auto session = service.dataset(req.matches[1]);
    const auto body = parse_body(req);
    const auto cfg_json = body.contains("config") ? body["config"] : body;
    const auto cfg = validate_config(session->raw, config_from_json(cfg_json));
    const auto t = table1(session->raw, cfg);
    Json j = to_json(t);
    j["tsv"] = table1_tsv(t);
    send_json(res, 200, j);
  }));

  server.Post(R"(/datasets/([^/]+)/correlation)", guarded([&](const Request& req, Response& res) {
    const auto session = service.dataset(req.matches[1]);
    const auto body = parse_body(req);
    if (!body.is_object() || !body.contains("variables") || !body["variables"].is_array()) {
      throw Error(ErrorKind::config, "request body needs a \"variables\" list");
    }
    const auto vars = body["variables"].get<std::vector<std::string>>();
    const auto r = as_content_error([&] { return correlation_matrix(session->raw, vars); });
    Json rows = Json::array();
    for (Eigen::Index a = 0; a < r.rows(); ++a) {
      Json row = Json::array();
      for (Eigen::Index b = 0; b < r.cols(); ++b) row.push_back(number(r(a, b)));
      rows.push_back(row);
    }
    send_json(res, 200, Json{{"variables", vars}, {"matrix", rows}});
  }));
}

}  // namespace effectbench
