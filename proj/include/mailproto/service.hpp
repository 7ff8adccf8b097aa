#pragma once

// HTTP inference service over a frozen checkpoint. Handlers are plain member functions
// returning status + JSON so they can be exercised without sockets.

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mailproto/edits.hpp"
#include "mailproto/explain.hpp"

namespace mailproto {

inline constexpr const char* kCheckpointEnv = "MAILPROTO_CHECKPOINT";

// The environment variable wins over the configured path when set and non-empty.
std::string resolve_checkpoint_path(const std::string& configured);

struct FieldError {
  std::string field;
  std::string message;
};

class RequestError : public std::runtime_error {
 public:
  explicit RequestError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

// Request body: subject, body (strings, required); recipient_org (string), interests
// (array of strings), id (string), parse (CoNLL-U text for the body sentences) optional.
// Parse blocks without "# sent_index" are numbered in order; email ids are replaced by the request id.
PreparedEmail parse_request(std::string_view body);

struct Reply {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  EditOptions edits;
  int default_top_n = 3;
};

class InferenceService {
 public:
  explicit InferenceService(std::unique_ptr<Model> model, ServiceOptions options = {});

  const Model& model() const { return *model_; }
  const std::string& version() const { return version_; }

  Reply health() const;
  Reply predict(std::string_view body) const;
  // A query parameter overrides the body's "topN" field.
  Reply explain(std::string_view body, std::optional<std::string> top_n = std::nullopt) const;
  Reply suggest(std::string_view body, std::optional<std::string> position = std::nullopt) const;
  Reply prototypes() const;

 private:
  std::optional<Reply> require_projected() const;

  std::unique_ptr<Model> model_;
  ServiceOptions options_;
  std::string version_;
  nlohmann::json prototypes_;
};

class HttpServer {
 public:
  explicit HttpServer(const InferenceService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void start();  // listen() on a background thread
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace mailproto
