#include "timflow/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

// httplib defaults to a backlog of 5, which drops bursts of connections.
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#include "httplib.h"
#include "json.hpp"
#include "timflow/dataset.hpp"
#include "timflow/error.hpp"
#include "timflow/heuristic.hpp"
#include "timflow/metrics.hpp"
#include "timflow/pattern.hpp"
#include "timflow/surrogate.hpp"

namespace timflow {

using nlohmann::json;

namespace {

// Carries an HTTP status and wire code out of request validation.
struct RequestError {
  int status;
  std::string code;
  std::string message;
};

struct ParsedRequest {
  DispensePattern pattern;
  std::string model = "heuristic";
  double gap = 1.0;
  GridSpec resolution{50, 50};
  CompressionConfig heuristic;
};

const std::set<std::string> kRequestKeys = {"pattern", "model", "gap", "resolution", "schedule", "boundary"};

[[noreturn]] void reject(int status, std::string code, std::string message) {
  throw RequestError{status, std::move(code), std::move(message)};
}

std::size_t parse_side(const json& v, const ServiceLimits& limits) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) reject(400, "invalid_request", "resolution entries must be integers");
  const auto n = v.get<long long>();
  if (n < 1) reject(400, "invalid_request", "resolution entries must be positive");
  if (static_cast<unsigned long long>(n) > limits.max_side) {
    reject(400, "resolution_limit", "resolution side " + std::to_string(n) + " exceeds " + std::to_string(limits.max_side));
  }
  return static_cast<std::size_t>(n);
}

ParsedRequest parse_request(std::string_view body, const ServiceLimits& limits, bool needs_model) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) reject(400, "invalid_pattern", "request body is not valid JSON");
  if (!j.is_object()) reject(400, "invalid_pattern", "request body must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kRequestKeys.count(key)) reject(400, "invalid_request", "unknown field '" + key + "'");
  }

  ParsedRequest req{DispensePattern({{0, 0}, {0, 0}}, {0.0}), "heuristic", 1.0, {50, 50}, {}};
  if (j.contains("model")) {
    if (!j["model"].is_string()) reject(400, "invalid_request", "model must be a string");
    req.model = j["model"].get<std::string>();
    if (req.model != "heuristic" && req.model != "surrogate") {
      reject(400, "invalid_request", "model must be \"heuristic\" or \"surrogate\"");
    }
  } else if (needs_model) {
    req.model = "heuristic";
  }
  if (j.contains("gap")) {
    if (!j["gap"].is_number()) reject(400, "invalid_request", "gap must be a number");
    req.gap = j["gap"].get<double>();
    if (!std::isfinite(req.gap) || !(req.gap > 0.0)) reject(400, "invalid_request", "gap must be positive and finite");
  }
  if (j.contains("resolution")) {
    const json& r = j["resolution"];
    if (!r.is_array() || r.size() != 2) reject(400, "invalid_request", "resolution must be [height, width]");
    req.resolution = {parse_side(r[0], limits), parse_side(r[1], limits)};
  }
  const bool has_heuristic_opts = j.contains("schedule") || j.contains("boundary");
  if (has_heuristic_opts && req.model == "surrogate") {
    reject(400, "invalid_request", "schedule and boundary apply to the heuristic model only");
  }
  try {
    if (j.contains("schedule")) {
      if (!j["schedule"].is_string()) reject(400, "invalid_request", "schedule must be a string");
      req.heuristic.schedule = parse_schedule(j["schedule"].get<std::string>());
    }
    if (j.contains("boundary")) {
      if (!j["boundary"].is_string()) reject(400, "invalid_request", "boundary must be a string");
      req.heuristic.boundary = parse_boundary(j["boundary"].get<std::string>());
    }
  } catch (const Error& e) {
    reject(400, "invalid_request", e.what());
  }
  req.heuristic.termination_height = req.gap;
  req.heuristic.max_sweeps = limits.max_sweeps;

  if (!j.contains("pattern")) reject(400, "invalid_pattern", "missing field 'pattern'");
  try {
    req.pattern = pattern_from_json(j["pattern"]);
  } catch (const Error& e) {
    reject(400, "invalid_pattern", e.what());
  }
  return req;
}

json grid_json(const TimGrid& g) {
  json amounts = json::array();
  for (double v : g.amounts()) amounts.push_back(wire_round(v));
  return {{"height", g.height()}, {"width", g.width()}, {"amounts", std::move(amounts)}};
}

HttpResponse json_response(const json& body) {
  HttpResponse r;
  r.body = body.dump();
  return r;
}

HttpResponse timd_response(const DispensePattern& pattern, const TimGrid& dispensed, const TimGrid& compressed) {
  HttpResponse r;
  r.content_type = "application/x-timd";
  r.body = serialize_timd({Record{pattern, dispensed, compressed}}, dispensed.spec());
  return r;
}

// Runs a handler body, translating failures into the closed error taxonomy.
template <typename F>
HttpResponse guarded(F&& f) {
  try {
    return f();
  } catch (const RequestError& e) {
    return error_response(e.status, e.code, e.message);
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::InvalidPattern:
      case ErrorKind::NonFiniteInput:
        return error_response(400, "invalid_pattern", e.what());
      case ErrorKind::OutOfBounds:
        return error_response(400, "out_of_bounds", e.what());
      case ErrorKind::ShapeMismatch:
        return error_response(400, "shape_mismatch", e.what());
      case ErrorKind::MassOverflow:
        return error_response(409, "overflow", e.what());
      case ErrorKind::NonPositiveGap:
      case ErrorKind::InvalidArgument:
        return error_response(400, "invalid_request", e.what());
      default:
        return error_response(500, "internal_error", e.what());
    }
  } catch (const std::exception& e) {
    return error_response(500, "internal_error", e.what());
  }
}

}  // namespace

double wire_round(double value) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return std::strtod(buf, nullptr);
}

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
  HttpResponse r;
  r.status = status;
  r.body = json{{"error", {{"code", code}, {"message", message}}}}.dump();
  return r;
}

Service::Service(std::optional<SurrogateModel> model, std::string version, ServiceLimits limits)
    : model_(std::move(model)), version_(std::move(version)), limits_(limits) {}

HttpResponse Service::health() const {
  return json_response({{"status", "ok"}, {"model_loaded", model_loaded()}, {"version", version_}});
}

HttpResponse Service::discretize(std::string_view body, bool want_timd) const {
  return guarded([&] {
    const ParsedRequest req = parse_request(body, limits_, false);
    const TimGrid dispensed = timflow::discretize(req.pattern, req.resolution);
    if (want_timd) return timd_response(req.pattern, dispensed, dispensed);
    return json_response({{"resolution", {req.resolution.height, req.resolution.width}},
                          {"total_mass", req.pattern.total_mass()},
                          {"dispensed", grid_json(dispensed)}});
  });
}

HttpResponse Service::compress(std::string_view body, bool want_timd) const {
  return guarded([&] {
    const auto start = std::chrono::steady_clock::now();
    const ParsedRequest req = parse_request(body, limits_, true);
    if (req.model == "surrogate" && !model_) {
      reject(503, "model_unavailable", "no surrogate weights loaded");
    }
    if (req.model == "surrogate" && model_->resolution() != req.resolution) {
      reject(400, "shape_mismatch",
             "surrogate was trained at " + std::to_string(model_->resolution().height) + "x" +
                 std::to_string(model_->resolution().width));
    }
    const TimGrid dispensed = timflow::discretize(req.pattern, req.resolution);
    TimGrid compressed;
    double off_grid = 0.0;
    if (req.model == "heuristic") {
      CompressionResult result = timflow::compress(dispensed, req.heuristic);
      compressed = std::move(result.compressed);
      off_grid = result.off_grid_mass;
    } else {
      compressed = predict_compressed(*model_, req.pattern, req.gap);
    }
    const double elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    HttpResponse r;
    if (want_timd) {
      r = timd_response(req.pattern, dispensed, compressed);
    } else {
      const double threshold = kDefaultThresholdFraction * req.gap;
      r = json_response({{"model", req.model},
                         {"gap", req.gap},
                         {"resolution", {req.resolution.height, req.resolution.width}},
                         {"dispensed", grid_json(dispensed)},
                         {"compressed", grid_json(compressed)},
                         {"coverage_ratio", coverage_ratio(compressed, CellMask::full(compressed.spec()), threshold)},
                         {"void_count", detect_voids(compressed, threshold).size()},
                         {"off_grid_mass", off_grid}});
    }
    char ms[32];
    std::snprintf(ms, sizeof ms, "%.3f", elapsed_ms);
    r.headers.emplace_back("X-Compute-Ms", ms);
    return r;
  });
}

struct HttpServer::Impl {
  std::shared_ptr<const Service> service;
  httplib::Server server;
  std::atomic<std::uint64_t> requests{0};
};

namespace {

void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

bool wants_timd(const httplib::Request& req) {
  return req.get_header_value("Accept").find("application/x-timd") != std::string::npos;
}

}  // namespace

HttpServer::HttpServer(std::shared_ptr<const Service> service) : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  Impl* impl = impl_.get();
  auto& s = impl->server;
  s.set_payload_max_length(64u << 20);
  s.Post("/api/v1/discretize", [impl](const httplib::Request& req, httplib::Response& res) {
    ++impl->requests;
    send(res, impl->service->discretize(req.body, wants_timd(req)));
  });
  s.Post("/api/v1/compress", [impl](const httplib::Request& req, httplib::Response& res) {
    ++impl->requests;
    send(res, impl->service->compress(req.body, wants_timd(req)));
  });
  s.Get("/api/v1/health", [impl](const httplib::Request&, httplib::Response& res) {
    ++impl->requests;
    send(res, impl->service->health());
  });
  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) {
      send(res, error_response(404, "not_found", "no route for " + req.method + " " + req.path));
    } else if (res.status == 400 || res.status == 413 || res.status == 414) {
      send(res, error_response(400, "invalid_request", "malformed HTTP request"));
    } else {
      send(res, error_response(500, "internal_error", "status " + std::to_string(res.status)));
    }
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown exception";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_response(500, "internal_error", what));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::uint64_t HttpServer::requests_served() const noexcept { return impl_->requests.load(); }

}  // namespace timflow
