#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "timflow/network.hpp"

namespace timflow {

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::vector<std::pair<std::string, std::string>> headers;
};

struct ServiceLimits {
  /// Largest accepted grid side; larger requests get "resolution_limit".
  std::size_t max_side = 1024;
  /// Sweep budget per artificial-height level for heuristic requests.
  /// Exhausting it answers 500 "internal_error".
  std::size_t max_sweeps = 1'000'000;
};

/// Request handlers. Pure functions of the request and the immutable model,
/// so one instance may serve any number of threads.
///
/// Error bodies are {"error": {"code", "message"}} with code one of
/// invalid_pattern, invalid_request, resolution_limit, out_of_bounds,
/// shape_mismatch (400), not_found (404), overflow (409),
/// internal_error (500), model_unavailable (503).
class Service {
 public:
  explicit Service(std::optional<SurrogateModel> model = std::nullopt, std::string version = TIMFLOW_VERSION,
                   ServiceLimits limits = {});

  bool model_loaded() const noexcept { return model_.has_value(); }
  const std::string& version() const noexcept { return version_; }

  /// POST /api/v1/discretize
  HttpResponse discretize(std::string_view body, bool want_timd = false) const;
  /// POST /api/v1/compress. Compute time goes in the X-Compute-Ms header so
  /// bodies stay byte-identical across repeats.
  HttpResponse compress(std::string_view body, bool want_timd = false) const;
  /// GET /api/v1/health
  HttpResponse health() const;

 private:
  std::optional<SurrogateModel> model_;
  std::string version_;
  ServiceLimits limits_;
};

HttpResponse error_response(int status, std::string_view code, std::string_view message);

/// Rounds to 6 significant digits, the grid wire precision.
double wire_round(double value);

/// HTTP/1.1 front end over a Service.
class HttpServer {
 public:
  explicit HttpServer(std::shared_ptr<const Service> service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port. Throws IoError.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void listen();
  void stop();
  /// Blocks until the server accepts connections.
  void wait_until_ready() const;
  std::uint64_t requests_served() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace timflow
