#include "server.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>

namespace sbc::service {

namespace {

void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  if (!r.location.empty()) {
    res.set_redirect(r.location, r.status);
  } else if (!r.content_type.empty()) {
    res.set_content(r.bytes, r.content_type);
  } else {
    res.set_content(r.body.dump(), "application/json");
  }
}

}  // namespace

std::shared_ptr<Api> make_api(const ServerConfig& config) {
  std::vector<std::shared_ptr<const Dataset>> datasets;
  for (const auto& d : config.datasets) {
    datasets.push_back(
        std::make_shared<const Dataset>(Dataset::load(d.name, d.catalog, d.index, d.head)));
  }
  EmbedText embed;
  if (config.sidecar_url) embed = sidecar_client(*config.sidecar_url);
  return std::make_shared<Api>(std::move(datasets), config.finetune, std::move(embed));
}

HttpServer::HttpServer(std::shared_ptr<Api> api, std::vector<std::string> cors_origins,
                       std::size_t threads)
    : api_(std::move(api)),
      cors_origins_(std::move(cors_origins)),
      server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  const std::size_t pool = std::max<std::size_t>(threads, 1);
  s.new_task_queue = [pool] { return new httplib::ThreadPool(pool); };

  s.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    const std::string origin = req.get_header_value("Origin");
    if (!origin.empty()) {
      const bool any = std::find(cors_origins_.begin(), cors_origins_.end(), "*") != cors_origins_.end();
      if (any || std::find(cors_origins_.begin(), cors_origins_.end(), origin) != cors_origins_.end()) {
        res.set_header("Access-Control-Allow-Origin", any ? "*" : origin);
        res.set_header("Vary", "Origin");
      }
    }
    if (req.method == "OPTIONS") {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Max-Age", "600");
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  s.Get("/datasets", [this](const httplib::Request&, httplib::Response& res) {
    send(res, api_->list_datasets());
  });
  s.Post("/search", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, api_->search(req.body));
  });
  s.Post("/finetune", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, api_->finetune(req.body));
  });
  s.Get(R"(/image/([^/]+)/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, api_->image(req.matches[1].str(), req.matches[2].str()));
  });

  s.set_exception_handler([](const httplib::Request& req, httplib::Response& res,
                             std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    std::fprintf(stderr, "sbc: %s %s failed: %s\n", req.method.c_str(), req.path.c_str(),
                 message.c_str());
    const nlohmann::json body = {{"api_version", kApiVersion},
                                 {"error", {{"code", "internal"}, {"message", message}}}};
    res.status = 500;
    res.set_content(body.dump(), "application/json");
  });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const nlohmann::json body = {
        {"api_version", kApiVersion},
        {"error", {{"code", res.status == 404 ? "not_found" : "http_error"},
                   {"message", "HTTP " + std::to_string(res.status)}}}};
    res.set_content(body.dump(), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host)
                              : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
  return bound;
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace sbc::service
