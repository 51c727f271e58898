#include "api.hpp"

#include <httplib.h>

#include <cctype>
#include <charconv>
#include <fstream>
#include <initializer_list>
#include <mutex>
#include <sstream>

namespace sbc::service {

namespace {

using nlohmann::json;

// Thrown while decoding a request; becomes the error response.
struct RequestError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void reject(int status, std::string code, std::string message) {
  throw RequestError{status, std::move(code), std::move(message)};
}

ApiResponse ok(json body) {
  body["api_version"] = kApiVersion;
  return {200, std::move(body), {}, {}, {}};
}

ApiResponse error_response(const RequestError& e) {
  ApiResponse r;
  r.status = e.status;
  r.body = {{"api_version", kApiVersion}, {"error", {{"code", e.code}, {"message", e.message}}}};
  return r;
}

json parse_body(std::string_view body) {
  json doc = json::parse(body.begin(), body.end(), nullptr, false);
  if (doc.is_discarded()) reject(400, "invalid_json", "request body is not valid JSON");
  if (!doc.is_object()) reject(400, "invalid_json", "request body must be a JSON object");
  return doc;
}

void allow_only(const json& object, std::initializer_list<std::string_view> fields,
                std::string_view where) {
  for (const auto& item : object.items()) {
    bool known = false;
    for (auto f : fields) known = known || item.key() == f;
    if (!known) {
      reject(400, "unknown_field",
             "unknown field '" + item.key() + "' in " + std::string(where));
    }
  }
}

const json* field(const json& object, const char* name) {
  auto it = object.find(name);
  return it == object.end() || it->is_null() ? nullptr : &*it;
}

std::string require_string(const json& object, const char* name) {
  const json* v = field(object, name);
  if (v == nullptr) reject(400, "missing_field", std::string("missing field '") + name + "'");
  if (!v->is_string()) reject(400, "bad_request", std::string("'") + name + "' must be a string");
  return v->get<std::string>();
}

std::optional<std::uint64_t> optional_count(const json& object, const char* name) {
  const json* v = field(object, name);
  if (v == nullptr) return std::nullopt;
  if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
    reject(400, "bad_request", std::string("'") + name + "' must be a non-negative integer");
  }
  return v->get<std::uint64_t>();
}

json search_stats_json(const InitialSearchResult& r, std::size_t k) {
  return {{"query_ms", r.query_ms},
          {"k", k},
          {"n_results", r.hits.size()},
          {"nodes_visited", r.stats.nodes_visited},
          {"leaves_visited", r.stats.leaves_visited},
          {"rows_scanned", r.stats.rows_scanned}};
}

json finetune_stats_json(const SearchStats& s, std::size_t catalog_size) {
  return {{"train_ms", s.train_ms},
          {"query_ms", s.query_ms},
          {"n_candidates", s.n_candidates},
          {"n_positives", s.n_positives},
          {"n_results", s.n_results},
          {"model", std::string(to_string(s.model))},
          {"iteration", s.iteration},
          {"labeled_positives", s.labeled_positives},
          {"labeled_negatives", s.labeled_negatives},
          {"sampled_negatives", s.sampled_negatives},
          {"negatives_clamped", s.negatives_clamped},
          {"catalog_size", catalog_size}};
}

std::string content_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".webp") return "image/webp";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "application/octet-stream";
}

bool is_remote(std::string_view uri) {
  return uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0;
}

}  // namespace

EmbedText sidecar_client(const std::string& base_url) {
  return [base_url](const std::string& text) {
    httplib::Client client(base_url);
    client.set_connection_timeout(2);
    client.set_read_timeout(30);
    const std::string body = json{{"text", text}}.dump();
    auto res = client.Post("/embed_text", body, "application/json");
    if (!res) {
      throw SidecarError("embedding sidecar at " + base_url +
                         " is unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw SidecarError("embedding sidecar answered HTTP " + std::to_string(res->status));
    }
    json doc = json::parse(res->body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("embedding") || !doc["embedding"].is_array()) {
      throw SidecarError("embedding sidecar response lacks an 'embedding' array");
    }
    std::vector<float> v;
    v.reserve(doc["embedding"].size());
    for (const auto& x : doc["embedding"]) {
      if (!x.is_number()) throw SidecarError("embedding sidecar returned a non-numeric value");
      v.push_back(x.get<float>());
    }
    return v;
  };
}

Api::Api(std::vector<std::shared_ptr<const Dataset>> datasets, FinetuneParams defaults,
         EmbedText embed_text)
    : defaults_(std::move(defaults)), embed_text_(std::move(embed_text)) {
  defaults_.validate();
  for (auto& d : datasets) {
    const std::string name = d->name();
    if (!datasets_.emplace(name, std::move(d)).second) {
      throw InvalidArgument("dataset '" + name + "' configured twice");
    }
  }
}

const Dataset* Api::find_dataset(std::string_view name) const {
  auto it = datasets_.find(name);
  return it == datasets_.end() ? nullptr : it->second.get();
}

ApiResponse Api::list_datasets() const {
  json list = json::array();
  for (const auto& [name, d] : datasets_) {
    list.push_back({{"name", name}, {"n", d->catalog().size()}, {"dim", d->catalog().dim()},
                    {"input_dim", d->head().input_dim()}});
  }
  return ok({{"datasets", std::move(list)}});
}

ApiResponse Api::search(std::string_view body) const {
  try {
    const json req = parse_body(body);
    allow_only(req, {"dataset", "query", "k", "max_leaves"}, "search request");
    const std::string name = require_string(req, "dataset");
    const Dataset* dataset = find_dataset(name);
    if (dataset == nullptr) reject(404, "unknown_dataset", "no dataset named '" + name + "'");

    const json* query = field(req, "query");
    if (query == nullptr || !query->is_object()) {
      reject(400, "missing_field", "'query' must be an object with 'embedding' or 'text'");
    }
    allow_only(*query, {"embedding", "text"}, "query");
    const json* embedding = field(*query, "embedding");
    const json* text = field(*query, "text");
    if ((embedding == nullptr) == (text == nullptr)) {
      reject(400, "bad_request", "'query' needs exactly one of 'embedding' or 'text'");
    }

    const std::size_t expected = dataset->head().input_dim();
    std::vector<float> vector;
    if (embedding != nullptr) {
      if (!embedding->is_array()) reject(400, "bad_request", "'embedding' must be an array");
      vector.reserve(embedding->size());
      for (const auto& x : *embedding) {
        if (!x.is_number()) reject(400, "bad_request", "'embedding' must hold numbers only");
        vector.push_back(x.get<float>());
      }
      if (vector.size() != expected) {
        reject(400, "bad_dimensions", "embedding has " + std::to_string(vector.size()) +
                                          " values, dataset '" + name + "' expects " +
                                          std::to_string(expected));
      }
    } else {
      if (!text->is_string() || text->get<std::string>().empty()) {
        reject(400, "bad_request", "'text' must be a non-empty string");
      }
      if (!embed_text_) {
        reject(503, "sidecar_unavailable",
               "text queries need the embedding sidecar; set 'sidecar' in the server config "
               "or send query.embedding instead");
      }
      try {
        vector = embed_text_(text->get<std::string>());
      } catch (const SidecarError& e) {
        reject(503, "sidecar_unavailable", e.what());
      }
      if (vector.size() != expected) {
        reject(502, "sidecar_bad_response", "sidecar returned " + std::to_string(vector.size()) +
                                                " values, expected " + std::to_string(expected));
      }
    }

    const std::size_t k = optional_count(req, "k").value_or(kDefaultInitialResults);
    if (k == 0) reject(400, "bad_request", "'k' must be >= 1");
    const std::size_t leaves = optional_count(req, "max_leaves").value_or(kDefaultSearchLeaves);

    InitialSearchResult result;
    try {
      result = initial_search(*dataset, vector, k, leaves);
    } catch (const InvalidArgument& e) {
      reject(400, "bad_request", e.what());
    }
    json results = json::array();
    for (const auto& hit : result.hits) {
      const auto& record = dataset->catalog().record(hit.row);
      results.push_back({{"id", record.id},
                         {"uri", record.uri},
                         {"score", 1.0 / (1.0 + hit.distance)},
                         {"distance", hit.distance}});
    }
    return ok({{"dataset", name},
               {"results", std::move(results)},
               {"stats", search_stats_json(result, k)}});
  } catch (const RequestError& e) {
    return error_response(e);
  }
}

ApiResponse Api::finetune(std::string_view body) {
  try {
    const json req = parse_body(body);
    allow_only(req,
               {"dataset", "session_id", "labels", "model", "negative_samples", "negative_weight",
                "seed", "max_results"},
               "finetune request");
    const std::string name = require_string(req, "dataset");
    const Dataset* dataset = find_dataset(name);
    if (dataset == nullptr) reject(404, "unknown_dataset", "no dataset named '" + name + "'");

    FinetuneParams params = defaults_;
    if (const json* model = field(req, "model")) {
      if (!model->is_string()) reject(400, "bad_request", "'model' must be a string");
      const auto kind = parse_model_kind(model->get<std::string>());
      if (!kind) {
        reject(400, "unknown_model", "unknown model '" + model->get<std::string>() +
                                         "'; use dbranch, dbranch_ensemble, dtree or rforest");
      }
      params.model = *kind;
    }
    if (auto v = optional_count(req, "negative_samples")) params.negative_samples = *v;
    if (auto v = optional_count(req, "seed")) params.seed = *v;
    if (auto v = optional_count(req, "max_results")) params.max_results = *v;
    if (const json* w = field(req, "negative_weight")) {
      if (!w->is_number()) reject(400, "bad_request", "'negative_weight' must be a number");
      params.negative_weight = w->get<double>();
    }
    try {
      params.validate();
    } catch (const InvalidArgument& e) {
      reject(400, "bad_request", e.what());
    }

    std::vector<std::pair<std::uint64_t, Label>> labels;
    if (const json* list = field(req, "labels")) {
      if (!list->is_array()) reject(400, "bad_request", "'labels' must be an array");
      for (const auto& item : *list) {
        if (!item.is_object()) reject(400, "bad_request", "each label must be an object");
        allow_only(item, {"id", "label"}, "label");
        const auto id = optional_count(item, "id");
        if (!id) reject(400, "missing_field", "each label needs an 'id'");
        const std::string value = require_string(item, "label");
        if (value != "pos" && value != "neg") {
          reject(400, "bad_request", "label must be \"pos\" or \"neg\", got \"" + value + "\"");
        }
        if (!dataset->catalog().find_row(*id)) {
          reject(400, "unknown_id",
                 "unknown record id " + std::to_string(*id) + " in dataset '" + name + "'");
        }
        labels.emplace_back(*id, value == "pos" ? Label::kPositive : Label::kNegative);
      }
    }

    std::shared_ptr<Session> session;
    const json* sid = field(req, "session_id");
    if (sid != nullptr) {
      if (!sid->is_string()) reject(400, "bad_request", "'session_id' must be a string");
      session = sessions_.find(sid->get<std::string>());
      if (!session) {
        reject(404, "unknown_session",
               "no session '" + sid->get<std::string>() + "'; omit session_id to start one");
      }
      if (session->dataset() != name) {
        reject(400, "bad_request", "session '" + session->id() + "' belongs to dataset '" +
                                       session->dataset() + "'");
      }
    }

    auto missing_class = [](const std::map<std::uint64_t, Label>& merged) {
      bool pos = false;
      bool neg = false;
      for (const auto& [id, label] : merged) (label == Label::kPositive ? pos : neg) = true;
      return !(pos && neg);
    };
    auto reject_missing = [](const std::map<std::uint64_t, Label>& merged) {
      std::size_t pos = 0;
      for (const auto& [id, label] : merged) pos += label == Label::kPositive;
      reject(422, "missing_labels",
             "label at least one positive and one negative result (have " + std::to_string(pos) +
                 " positive, " + std::to_string(merged.size() - pos) + " negative)");
    };

    if (!session) {
      std::map<std::uint64_t, Label> merged;
      for (const auto& [id, label] : labels) merged[id] = label;
      if (missing_class(merged)) reject_missing(merged);
      session = sessions_.create(name);
    }

    std::lock_guard lock(session->mutex());
    std::map<std::uint64_t, Label> merged = session->labels();
    for (const auto& [id, label] : labels) merged[id] = label;
    if (missing_class(merged)) reject_missing(merged);
    session->add_labels(*dataset, labels);

    FinetuneResult result = session->finetune(*dataset, params);
    json results = json::array();
    for (const auto& hit : result.results) {
      const auto& record = dataset->catalog().record(hit.row);
      results.push_back({{"id", record.id}, {"uri", record.uri}, {"score", hit.score}});
    }
    return ok({{"session_id", session->id()},
               {"dataset", name},
               {"results", std::move(results)},
               {"stats", finetune_stats_json(result.stats, dataset->catalog().size())}});
  } catch (const RequestError& e) {
    return error_response(e);
  } catch (const ValidationError& e) {
    return error_response({422, "missing_labels", e.what()});
  }
}

ApiResponse Api::image(std::string_view dataset_name, std::string_view id_text) const {
  try {
    const Dataset* dataset = find_dataset(dataset_name);
    if (dataset == nullptr) {
      reject(404, "unknown_dataset", "no dataset named '" + std::string(dataset_name) + "'");
    }
    std::uint64_t id = 0;
    const auto [end, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
    if (ec != std::errc() || end != id_text.data() + id_text.size()) {
      reject(404, "unknown_id", "'" + std::string(id_text) + "' is not a record id");
    }
    const auto row = dataset->catalog().find_row(id);
    if (!row) reject(404, "unknown_id", "no record " + std::string(id_text));

    const std::string& uri = dataset->catalog().record(*row).uri;
    ApiResponse r;
    if (is_remote(uri)) {
      r.status = 302;
      r.location = uri;
      return r;
    }
    std::filesystem::path path(uri.rfind("file://", 0) == 0 ? uri.substr(7) : uri);
    if (path.is_relative()) path = dataset->base_dir() / path;
    std::ifstream in(path, std::ios::binary);
    if (!in) reject(404, "missing_file", "image file for record " + std::string(id_text) + " is missing");
    std::ostringstream bytes;
    bytes << in.rdbuf();
    r.content_type = content_type_for(path);
    r.bytes = bytes.str();
    return r;
  } catch (const RequestError& e) {
    return error_response(e);
  }
}

}  // namespace sbc::service
