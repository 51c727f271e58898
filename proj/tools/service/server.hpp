#pragma once

#include <memory>
#include <string>
#include <vector>

#include "api.hpp"
#include "config.hpp"

namespace httplib {
class Server;
}

namespace sbc::service {

// Loads every configured dataset and connects the sidecar if one is set.
std::shared_ptr<Api> make_api(const ServerConfig& config);

// HTTP transport for Api:
//   GET  /datasets
//   POST /search
//   POST /finetune
//   GET  /image/{dataset}/{id}
// plus CORS preflight for the configured origins.
class HttpServer {
 public:
  HttpServer(std::shared_ptr<Api> api, std::vector<std::string> cors_origins,
             std::size_t threads = 8);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Returns the bound port (port 0 picks a free one). Throws IoError.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  std::shared_ptr<Api> api_;
  std::vector<std::string> cors_origins_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace sbc::service
