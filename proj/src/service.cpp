#include "mailproto/service.hpp"

#include <cstdlib>
#include <sstream>

#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include "httplib.h"
#include "mailproto/checkpoint.hpp"

namespace mailproto {

std::string resolve_checkpoint_path(const std::string& configured) {
  if (const char* env = std::getenv(kCheckpointEnv); env && *env) return env;
  return configured;
}

namespace {

std::string join_messages(const std::vector<FieldError>& errors) {
  std::string s;
  for (const auto& e : errors) {
    if (!s.empty()) s += "; ";
    s += e.field + ": " + e.message;
  }
  return s;
}

// Adds "# email_id" to every block and "# sent_index" where missing.
std::string normalise_parse(std::string_view text, const std::string& id) {
  std::vector<std::vector<std::string>> blocks(1);
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      if (!blocks.back().empty()) blocks.emplace_back();
      continue;
    }
    blocks.back().push_back(line);
  }
  std::string out;
  int index = 0;
  for (const auto& b : blocks) {
    if (b.empty()) continue;
    bool has_index = false;
    for (const auto& l : b)
      if (l.starts_with("# sent_index")) has_index = true;
    out += "# email_id = " + id + "\n";
    if (!has_index) out += "# sent_index = " + std::to_string(index) + "\n";
    for (const auto& l : b)
      if (!l.starts_with("# email_id")) out += l + "\n";
    out += "\n";
    ++index;
  }
  return out;
}

Reply error_reply(int status, const std::string& error, const std::vector<FieldError>& fields = {},
                  const std::string& hint = {}) {
  nlohmann::json j{{"error", error}};
  if (!fields.empty()) {
    nlohmann::json d = nlohmann::json::array();
    for (const auto& f : fields) d.push_back({{"field", f.field}, {"message", f.message}});
    j["diagnostics"] = d;
  }
  if (!hint.empty()) j["hint"] = hint;
  return {status, j};
}

std::optional<int> parse_positive(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size() && v >= 1) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

const char* structural_flag(bool degraded) { return degraded ? "degraded" : "ok"; }

}  // namespace

RequestError::RequestError(std::vector<FieldError> errors)
    : std::runtime_error(join_messages(errors)), errors_(std::move(errors)) {}

PreparedEmail parse_request(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw RequestError(std::vector<FieldError>{{"(body)", std::string("malformed JSON: ") + e.what()}});
  }
  if (!j.is_object()) throw RequestError(std::vector<FieldError>{{"(body)", "expected a JSON object"}});

  std::vector<FieldError> errors;
  Email email;
  email.id = "request";
  if (j.contains("id")) {
    if (j["id"].is_string() && !j["id"].get<std::string>().empty())
      email.id = j["id"].get<std::string>();
    else
      errors.push_back({"id", "must be a non-empty string"});
  }
  for (const char* key : {"subject", "body"}) {
    if (!j.contains(key))
      errors.push_back({key, "required"});
    else if (!j[key].is_string())
      errors.push_back({key, "must be a string"});
  }
  if (j.contains("subject") && j["subject"].is_string()) email.subject = j["subject"].get<std::string>();
  if (j.contains("body") && j["body"].is_string()) email.body = j["body"].get<std::string>();
  if (j.contains("recipient_org") && !j["recipient_org"].is_null()) {
    if (j["recipient_org"].is_string())
      email.recipient_org = to_lower(trim(j["recipient_org"].get<std::string>()));
    else
      errors.push_back({"recipient_org", "must be a string"});
  }
  if (j.contains("interests") && !j["interests"].is_null()) {
    const auto& v = j["interests"];
    bool ok = v.is_array();
    if (ok)
      for (const auto& x : v) ok = ok && x.is_string();
    if (ok)
      email.interests = v.get<std::vector<std::string>>();
    else
      errors.push_back({"interests", "must be an array of strings"});
  }
  ParseIndex parses;
  if (j.contains("parse") && !j["parse"].is_null()) {
    if (!j["parse"].is_string()) {
      errors.push_back({"parse", "must be CoNLL-U text"});
    } else if (errors.empty()) {
      Diagnostics diag;
      parses = parse_conllu(normalise_parse(j["parse"].get<std::string>(), email.id), diag);
      for (const auto& m : diag.messages) errors.push_back({"parse", m});
    }
  }
  if (!errors.empty()) throw RequestError(std::move(errors));
  return prepare_email(email, parses.empty() ? nullptr : &parses);
}

// ---- service --------------------------------------------------------------------------

InferenceService::InferenceService(std::unique_ptr<Model> model, ServiceOptions options)
    : model_(std::move(model)), options_(std::move(options)) {
  if (!model_) throw std::invalid_argument("service needs a model");
  version_ = model_->version();
  prototypes_ = prototypes_to_json(*model_);
}

std::optional<Reply> InferenceService::require_projected() const {
  if (model_->projected()) return std::nullopt;
  return error_reply(503, "model prototypes are not projected", {},
                     "train with at least one epoch (projection runs at the end of training) and serve that "
                     "checkpoint");
}

Reply InferenceService::health() const {
  return {200, {{"status", "ok"}, {"model_version", version_}, {"projected", model_->projected()}}};
}

Reply InferenceService::predict(std::string_view body) const {
  if (auto r = require_projected()) return *r;
  try {
    const PreparedEmail email = parse_request(body);
    const Prediction p = model_->predict(model_->featurize(email));
    return {200,
            {{"id", email.email.id},
             {"probability", p.probabilities[1]},
             {"probabilities", p.probabilities},
             {"label", p.label},
             {"model_version", version_},
             {"structural_view", structural_flag(email.structural_degraded)}}};
  } catch (const RequestError& e) {
    return error_reply(400, "invalid request", e.errors());
  }
}

Reply InferenceService::explain(std::string_view body, std::optional<std::string> top_n) const {
  if (auto r = require_projected()) return *r;
  try {
    int n = options_.default_top_n;
    if (!top_n) {
      const auto j = nlohmann::json::parse(body, nullptr, false);
      if (j.is_object() && j.contains("topN")) {
        if (j["topN"].is_number_integer() && j["topN"].get<long>() >= 1)
          n = j["topN"].get<int>();
        else
          throw RequestError(std::vector<FieldError>{{"topN", "must be a positive integer"}});
      }
    } else if (auto v = parse_positive(*top_n)) {
      n = *v;
    } else {
      throw RequestError(std::vector<FieldError>{{"topN", "must be a positive integer"}});
    }
    const PreparedEmail email = parse_request(body);
    nlohmann::json j = to_json(mailproto::explain(*model_, email, n));
    j["structural_view"] = structural_flag(email.structural_degraded);
    return {200, j};
  } catch (const RequestError& e) {
    return error_reply(400, "invalid request", e.errors());
  } catch (const std::invalid_argument& e) {
    return error_reply(422, e.what());
  }
}

Reply InferenceService::suggest(std::string_view body, std::optional<std::string> position) const {
  if (auto r = require_projected()) return *r;
  try {
    std::optional<std::string> pos = position;
    if (!pos) {
      const auto j = nlohmann::json::parse(body, nullptr, false);
      if (j.is_object() && j.contains("position")) {
        if (!j["position"].is_string()) throw RequestError(std::vector<FieldError>{{"position", "must be a string"}});
        pos = j["position"].get<std::string>();
      }
    }
    if (!pos) throw RequestError(std::vector<FieldError>{{"position", "required (subject, opening, main or closing)"}});
    EditPosition p;
    try {
      p = parse_edit_position(*pos);
    } catch (const std::invalid_argument&) {
      throw RequestError(std::vector<FieldError>{{"position", "must be one of subject, opening, main, closing"}});
    }
    const PreparedEmail email = parse_request(body);
    const auto suggestions = suggest_edits(*model_, email, p, options_.edits);
    const Prediction before = model_->predict(model_->featurize(email));
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : suggestions) list.push_back(to_json(s));
    return {200,
            {{"id", email.email.id},
             {"position", to_string(p)},
             {"probability", before.probabilities[1]},
             {"suggestions", list},
             {"model_version", version_},
             {"structural_view", structural_flag(email.structural_degraded)}}};
  } catch (const RequestError& e) {
    return error_reply(400, "invalid request", e.errors());
  } catch (const NoPositivePrototypesError& e) {
    return error_reply(422, e.what());
  } catch (const std::invalid_argument& e) {
    return error_reply(422, e.what());
  }
}

Reply InferenceService::prototypes() const {
  if (auto r = require_projected()) return *r;
  nlohmann::json j = prototypes_;
  j["model_version"] = version_;
  return {200, j};
}

// ---- HTTP ---------------------------------------------------------------------------

struct HttpServer::Impl {
  const InferenceService& service;
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

}  // namespace

HttpServer::HttpServer(const InferenceService& service) : impl_(new Impl{service, {}}) {
  auto& s = impl_->server;
  const InferenceService& svc = service;
  s.Get("/health", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  s.Get("/prototypes", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.prototypes()); });
  s.Post("/predict", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.predict(req.body)); });
  s.Post("/explain", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.explain(req.body, param(req, "topN")));
  });
  s.Post("/suggest", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.suggest(req.body, param(req, "position")));
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, what));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  thread_ = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace mailproto
