#pragma once

#include <functional>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "sbc/engine.hpp"
#include "sbc/error.hpp"

namespace sbc::service {

inline constexpr int kApiVersion = 1;

// The text-embedding sidecar could not be reached or answered badly.
class SidecarError : public Error {
 public:
  using Error::Error;
};

// Maps query text to a raw (pre-head) embedding. Throws SidecarError.
using EmbedText = std::function<std::vector<float>(const std::string& text)>;

// POSTs {"text": ...} to <base_url>/embed_text and reads {"embedding": [...]}.
EmbedText sidecar_client(const std::string& base_url);

struct ApiResponse {
  int status = 200;
  nlohmann::json body;       // JSON responses
  std::string content_type;  // raw responses (images)
  std::string bytes;
  std::string location;      // redirects
};

// Request handling independent of the HTTP transport. Every JSON body carries
// "api_version"; errors are {"error": {"code", "message"}}. Requests with
// unknown fields are rejected with 400.
class Api {
 public:
  Api(std::vector<std::shared_ptr<const Dataset>> datasets, FinetuneParams defaults,
      EmbedText embed_text = {});

  ApiResponse list_datasets() const;
  ApiResponse search(std::string_view body) const;
  ApiResponse finetune(std::string_view body);
  ApiResponse image(std::string_view dataset, std::string_view id) const;

  const Dataset* find_dataset(std::string_view name) const;
  const SessionStore& sessions() const { return sessions_; }

 private:
  std::map<std::string, std::shared_ptr<const Dataset>, std::less<>> datasets_;
  FinetuneParams defaults_;
  EmbedText embed_text_;
  SessionStore sessions_;
};

}  // namespace sbc::service
