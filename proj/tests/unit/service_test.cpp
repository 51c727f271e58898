#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include "api.hpp"
#include "config.hpp"
#include "oracles.hpp"
#include "pipeline.hpp"
#include "sbc/error.hpp"
#include "sbc/synthetic.hpp"
#include "server.hpp"

// After Eigen: <resolv.h> defines a `res` macro.
#include <httplib.h>

namespace {

using namespace sbc;
using namespace sbc::service;
using nlohmann::json;

constexpr std::size_t kInput = 16;

// 200 rows in 4 classes, embedded by a random head. Rows 0 and 1 point at
// local files, row 2 at a web URL.
struct Fixture {
  oracle::TempDir dir{"service"};
  synthetic::PairedViews views;
  std::shared_ptr<const Dataset> dataset;

  Fixture() {
    views = synthetic::paired_views({4, 50, kInput, 0.05, 0.15, 1});
    auto head = init_head(2, kInput, 24, 8);
    const auto embedded = forward_batch(head, views.items);
    const auto q = Quantizer::fit(embedded);
    auto records = synthetic::numbered_records(embedded.rows(), views.labels);
    for (auto& r : records) r.id += 1000;
    records[0].uri = "img/a.bmp";
    records[1].uri = "file://img/missing.png";
    records[2].uri = "https://example.org/c.jpg";
    QuantizedCatalog catalog(q.params(), q.encode_matrix(embedded), std::move(records));
    auto index = KdTree::build(catalog, 8);
    std::filesystem::create_directories(dir / "img");
    std::ofstream(dir / "img/a.bmp", std::ios::binary) << "BMfake";
    dataset = std::make_shared<const Dataset>("demo", std::move(catalog), std::move(index),
                                              std::move(head), dir.path());
  }

  std::vector<float> item(std::size_t i) const {
    const auto row = views.items.row(i);
    return {row.begin(), row.end()};
  }
};

FinetuneParams small_defaults() {
  FinetuneParams p;
  p.negative_samples = 20;
  p.seed = 5;
  return p;
}

std::string code_of(const ApiResponse& r) { return r.body.at("error").at("code").get<std::string>(); }

TEST(Config, ParsesEveryKey) {
  const auto cfg = parse_config(R"(
# comment
listen = "0.0.0.0:9001"
sidecar = "http://127.0.0.1:8081"
cors = ["http://a", "http://b"]
threads = 3

[finetune]
model = "rforest"   # trailing comment
negative_samples = 250
negative_weight = 2.5
max_results = 40
seed = 9
max_depth = 6

[dataset.birds]
catalog = "birds/cat.cbrx"
index = "/abs/cat.cbkd"
head = "head.cbhd"
)",
                                "/base");
  EXPECT_EQ(cfg.host, "0.0.0.0");
  EXPECT_EQ(cfg.port, 9001);
  EXPECT_EQ(cfg.sidecar_url, "http://127.0.0.1:8081");
  EXPECT_EQ(cfg.cors_origins, (std::vector<std::string>{"http://a", "http://b"}));
  EXPECT_EQ(cfg.threads, 3u);
  EXPECT_EQ(cfg.finetune.model, ModelKind::kRandomForest);
  EXPECT_EQ(cfg.finetune.negative_samples, 250u);
  EXPECT_DOUBLE_EQ(cfg.finetune.negative_weight, 2.5);
  EXPECT_EQ(cfg.finetune.max_results, 40u);
  EXPECT_EQ(cfg.finetune.seed, 9u);
  EXPECT_EQ(cfg.finetune.tree.max_depth, 6u);
  ASSERT_EQ(cfg.datasets.size(), 1u);
  EXPECT_EQ(cfg.datasets[0].name, "birds");
  EXPECT_EQ(cfg.datasets[0].catalog, std::filesystem::path("/base/birds/cat.cbrx"));
  EXPECT_EQ(cfg.datasets[0].index, std::filesystem::path("/abs/cat.cbkd"));
}

TEST(Config, Defaults) {
  const auto cfg = parse_config("");
  EXPECT_EQ(cfg.host, "127.0.0.1");
  EXPECT_EQ(cfg.port, 8080);
  EXPECT_FALSE(cfg.sidecar_url);
  EXPECT_EQ(cfg.finetune.negative_samples, 1000u);
  EXPECT_DOUBLE_EQ(cfg.finetune.negative_weight, 10.0);
  EXPECT_EQ(cfg.finetune.max_results, 500u);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](std::string_view text) {
    try {
      parse_config(text);
    } catch (const InvalidArgument& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("listen = \"a:1\"\nbogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("[weird]\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("[finetune]\nmodel = \"svm\"\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("threads = \"x\"\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("listen = \"nohost\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("[dataset.x]\ncatalog = \"a\"\n").find("dataset 'x'"), std::string::npos);
}

TEST(Config, ListenForms) {
  ServerConfig cfg;
  apply_listen(cfg, "example:81");
  EXPECT_EQ(cfg.host, "example");
  EXPECT_EQ(cfg.port, 81);
  apply_listen(cfg, ":82");
  EXPECT_EQ(cfg.port, 82);
  apply_listen(cfg, "83");
  EXPECT_EQ(cfg.port, 83);
  EXPECT_THROW(apply_listen(cfg, "host:99999"), InvalidArgument);
  EXPECT_THROW(apply_listen(cfg, "host:abc"), InvalidArgument);
}

TEST(Config, EnvironmentOverridesListen) {
  oracle::TempDir dir("config");
  std::ofstream(dir / "c.toml") << "listen = \"127.0.0.1:1000\"\n";
  ::setenv("SBC_LISTEN", "127.0.0.1:2000", 1);
  const auto cfg = load_config(dir / "c.toml");
  ::unsetenv("SBC_LISTEN");
  EXPECT_EQ(cfg.port, 2000);
  EXPECT_EQ(load_config(dir / "c.toml").port, 1000);
  EXPECT_THROW(load_config(dir / "none.toml"), IoError);
}

TEST(Api, ListsDatasets) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const auto r = api.list_datasets();
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["api_version"], kApiVersion);
  ASSERT_EQ(r.body["datasets"].size(), 1u);
  EXPECT_EQ(r.body["datasets"][0], (json{{"name", "demo"}, {"n", 200}, {"dim", 8}, {"input_dim", kInput}}));
}

TEST(Api, SearchByEmbedding) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const auto r = api.search(json{{"dataset", "demo"}, {"query", {{"embedding", f.item(7)}}}, {"k", 5}}.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const auto& results = r.body["results"];
  ASSERT_EQ(results.size(), 5u);
  EXPECT_EQ(r.body["stats"]["n_results"], 5);
  EXPECT_EQ(r.body["stats"]["k"], 5);
  const auto direct = initial_search(*f.dataset, f.item(7), 5);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(results[i]["id"], f.dataset->catalog().record(direct.hits[i].row).id);
    EXPECT_DOUBLE_EQ(results[i]["distance"].get<double>(), direct.hits[i].distance);
    EXPECT_DOUBLE_EQ(results[i]["score"].get<double>(), 1.0 / (1.0 + direct.hits[i].distance));
  }
  EXPECT_EQ(results[0]["distance"], 0.0);
}

TEST(Api, SearchErrors) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const json good_query = {{"embedding", f.item(0)}};
  EXPECT_EQ(code_of(api.search("{not json")), "invalid_json");
  EXPECT_EQ(api.search("[1]").status, 400);
  EXPECT_EQ(code_of(api.search(json{{"dataset", "demo"}, {"query", good_query}, {"extra", 1}}.dump())),
            "unknown_field");
  EXPECT_EQ(code_of(api.search(json{{"query", good_query}}.dump())), "missing_field");
  const auto missing = api.search(json{{"dataset", "nope"}, {"query", good_query}}.dump());
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(code_of(missing), "unknown_dataset");
  const auto dims = api.search(json{{"dataset", "demo"}, {"query", {{"embedding", {1.0, 2.0}}}}}.dump());
  EXPECT_EQ(dims.status, 400);
  EXPECT_EQ(code_of(dims), "bad_dimensions");
  EXPECT_EQ(code_of(api.search(json{{"dataset", "demo"}, {"query", {{"embedding", f.item(0)}, {"text", "x"}}}}.dump())),
            "bad_request");
  EXPECT_EQ(code_of(api.search(json{{"dataset", "demo"}, {"query", good_query}, {"k", 0}}.dump())), "bad_request");
  EXPECT_EQ(code_of(api.search(json{{"dataset", "demo"}, {"query", good_query}, {"k", -3}}.dump())), "bad_request");
}

TEST(Api, SearchByTextUsesTheSidecar) {
  Fixture f;
  const auto text_vector = f.item(11);
  Api api({f.dataset}, small_defaults(), [&](const std::string& text) {
    if (text == "down") throw SidecarError("connection refused");
    if (text == "short") return std::vector<float>(3, 0.5f);
    return text_vector;
  });
  const auto ok = api.search(json{{"dataset", "demo"}, {"query", {{"text", "a bird"}}}, {"k", 1}}.dump());
  ASSERT_EQ(ok.status, 200);
  EXPECT_EQ(ok.body["results"][0]["distance"], 0.0);
  const auto down = api.search(json{{"dataset", "demo"}, {"query", {{"text", "down"}}}}.dump());
  EXPECT_EQ(down.status, 503);
  EXPECT_EQ(code_of(down), "sidecar_unavailable");
  const auto bad = api.search(json{{"dataset", "demo"}, {"query", {{"text", "short"}}}}.dump());
  EXPECT_EQ(bad.status, 502);
  EXPECT_EQ(code_of(bad), "sidecar_bad_response");

  Api no_sidecar({f.dataset}, small_defaults());
  EXPECT_EQ(no_sidecar.search(json{{"dataset", "demo"}, {"query", {{"text", "x"}}}}.dump()).status, 503);
}

TEST(Api, SidecarClientReportsUnreachableHost) {
  const auto embed = sidecar_client("http://127.0.0.1:1");
  EXPECT_THROW(embed("hello"), SidecarError);
}

TEST(Api, FinetuneMatchesTheEngine) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const json labels = json::array({{{"id", 1003}, {"label", "pos"}},
                                   {{"id", 1004}, {"label", "pos"}},
                                   {{"id", 1060}, {"label", "neg"}}});
  const auto r = api.finetune(json{{"dataset", "demo"}, {"labels", labels}}.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_FALSE(r.body["session_id"].get<std::string>().empty());
  EXPECT_EQ(r.body["stats"]["iteration"], 1);
  EXPECT_EQ(r.body["stats"]["catalog_size"], 200);
  EXPECT_EQ(r.body["stats"]["sampled_negatives"], 20);

  Session oracle_session("o", "demo");
  const std::vector<std::pair<std::uint64_t, Label>> same{
      {1003, Label::kPositive}, {1004, Label::kPositive}, {1060, Label::kNegative}};
  oracle_session.add_labels(*f.dataset, same);
  const auto want = oracle_session.finetune(*f.dataset, small_defaults());
  ASSERT_EQ(r.body["results"].size(), want.results.size());
  for (std::size_t i = 0; i < want.results.size(); ++i) {
    EXPECT_EQ(r.body["results"][i]["id"], f.dataset->catalog().record(want.results[i].row).id);
    EXPECT_DOUBLE_EQ(r.body["results"][i]["score"].get<double>(), want.results[i].score);
  }
  EXPECT_EQ(r.body["stats"]["n_positives"], want.stats.n_positives);

  const std::string sid = r.body["session_id"];
  const auto again = api.finetune(
      json{{"dataset", "demo"}, {"session_id", sid}, {"labels", json::array({{{"id", 1100}, {"label", "neg"}}})}}.dump());
  ASSERT_EQ(again.status, 200);
  EXPECT_EQ(again.body["stats"]["iteration"], 2);
  EXPECT_EQ(again.body["stats"]["labeled_negatives"], 2);
  EXPECT_EQ(again.body["session_id"], sid);
}

TEST(Api, FinetuneOverridesAndModels) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const json labels = json::array({{{"id", 1003}, {"label", "pos"}}, {{"id", 1060}, {"label", "neg"}}});
  for (const char* model : {"dbranch", "dbranch_ensemble", "dtree", "rforest"}) {
    const auto r = api.finetune(json{{"dataset", "demo"},
                                     {"labels", labels},
                                     {"model", model},
                                     {"negative_samples", 300},
                                     {"max_results", 3}}
                                    .dump());
    ASSERT_EQ(r.status, 200) << model << r.body.dump();
    EXPECT_EQ(r.body["stats"]["model"], model);
    EXPECT_LE(r.body["results"].size(), 3u);
    EXPECT_EQ(r.body["stats"]["negatives_clamped"], true);
    EXPECT_EQ(r.body["stats"]["sampled_negatives"], 198);
  }
}

TEST(Api, FinetuneErrors) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const json one_pos = json::array({{{"id", 1003}, {"label", "pos"}}});
  const json both = json::array({{{"id", 1003}, {"label", "pos"}}, {{"id", 1060}, {"label", "neg"}}});

  const auto missing = api.finetune(json{{"dataset", "demo"}, {"labels", one_pos}}.dump());
  EXPECT_EQ(missing.status, 422);
  EXPECT_EQ(code_of(missing), "missing_labels");
  EXPECT_NE(missing.body["error"]["message"].get<std::string>().find("negative"), std::string::npos);

  const auto session = api.finetune(json{{"dataset", "demo"}, {"session_id", "zzz"}, {"labels", both}}.dump());
  EXPECT_EQ(session.status, 404);
  EXPECT_EQ(code_of(session), "unknown_session");

  EXPECT_EQ(code_of(api.finetune(json{{"dataset", "demo"}, {"labels", both}, {"model", "svm"}}.dump())),
            "unknown_model");
  const auto unknown_id = api.finetune(
      json{{"dataset", "demo"}, {"labels", json::array({{{"id", 5}, {"label", "pos"}}})}}.dump());
  EXPECT_EQ(unknown_id.status, 400);
  EXPECT_EQ(code_of(unknown_id), "unknown_id");
  EXPECT_EQ(code_of(api.finetune(
                json{{"dataset", "demo"}, {"labels", json::array({{{"id", 1003}, {"label", "maybe"}}})}}.dump())),
            "bad_request");
  EXPECT_EQ(code_of(api.finetune(json{{"dataset", "demo"}, {"labels", both}, {"colour", 1}}.dump())),
            "unknown_field");
  EXPECT_EQ(api.finetune(json{{"dataset", "x"}, {"labels", both}}.dump()).status, 404);
  EXPECT_EQ(code_of(api.finetune(json{{"dataset", "demo"}, {"labels", both}, {"negative_weight", -1}}.dump())),
            "bad_request");
  // Failed requests never create sessions.
  EXPECT_EQ(api.sessions().size(), 0u);
}

TEST(Api, Images) {
  Fixture f;
  Api api({f.dataset}, small_defaults());
  const auto local = api.image("demo", "1000");
  EXPECT_EQ(local.status, 200);
  EXPECT_EQ(local.content_type, "image/bmp");
  EXPECT_EQ(local.bytes, "BMfake");

  const auto gone = api.image("demo", "1001");
  EXPECT_EQ(gone.status, 404);
  EXPECT_EQ(code_of(gone), "missing_file");

  const auto web = api.image("demo", "1002");
  EXPECT_EQ(web.status, 302);
  EXPECT_EQ(web.location, "https://example.org/c.jpg");

  EXPECT_EQ(code_of(api.image("demo", "12")), "unknown_id");
  EXPECT_EQ(code_of(api.image("demo", "abc")), "unknown_id");
  EXPECT_EQ(code_of(api.image("other", "1000")), "unknown_dataset");
}

TEST(Http, EndToEndOverLoopback) {
  Fixture f;
  auto api = std::make_shared<Api>(std::vector<std::shared_ptr<const Dataset>>{f.dataset}, small_defaults());
  HttpServer server(api, {"http://ui.example"}, 2);
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread thread([&] { server.run(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto list = client.Get("/datasets");
  ASSERT_TRUE(list);
  EXPECT_EQ(list->status, 200);
  EXPECT_EQ(json::parse(list->body)["datasets"][0]["name"], "demo");

  const auto search = client.Post("/search", json{{"dataset", "demo"}, {"query", {{"embedding", f.item(3)}}}}.dump(),
                                  "application/json");
  ASSERT_TRUE(search);
  EXPECT_EQ(search->status, 200);
  EXPECT_EQ(json::parse(search->body)["results"].size(), 60u);

  const auto bad = client.Post("/search", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["error"]["code"], "invalid_json");

  const json labels = json::array({{{"id", 1003}, {"label", "pos"}}, {{"id", 1060}, {"label", "neg"}}});
  const auto tune = client.Post("/finetune", json{{"dataset", "demo"}, {"labels", labels}}.dump(), "application/json");
  ASSERT_TRUE(tune);
  EXPECT_EQ(tune->status, 200);
  EXPECT_EQ(json::parse(tune->body)["stats"]["iteration"], 1);

  const auto image = client.Get("/image/demo/1000");
  ASSERT_TRUE(image);
  EXPECT_EQ(image->status, 200);
  EXPECT_EQ(image->get_header_value("Content-Type"), "image/bmp");
  const auto redirect = client.Get("/image/demo/1002");
  ASSERT_TRUE(redirect);
  EXPECT_EQ(redirect->status, 302);
  EXPECT_EQ(redirect->get_header_value("Location"), "https://example.org/c.jpg");

  const auto nowhere = client.Get("/nowhere");
  ASSERT_TRUE(nowhere);
  EXPECT_EQ(nowhere->status, 404);
  EXPECT_TRUE(json::parse(nowhere->body).contains("error"));

  const auto preflight = client.Options("/search", {{"Origin", "http://ui.example"},
                                                    {"Access-Control-Request-Method", "POST"}});
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);
  EXPECT_EQ(preflight->get_header_value("Access-Control-Allow-Origin"), "http://ui.example");
  const auto foreign = client.Get("/datasets", {{"Origin", "http://evil.example"}});
  ASSERT_TRUE(foreign);
  EXPECT_FALSE(foreign->has_header("Access-Control-Allow-Origin"));

  server.stop();
  thread.join();
}

TEST(Pipeline, ToyIngestAndIndex) {
  oracle::TempDir dir("pipeline");
  make_toy({dir.path(), 3, 10, 4});
  for (const char* name : {"embeddings.f32", "views_a.f32", "views_b.f32", "meta.jsonl", "sbc.toml", "images/0.bmp"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  EXPECT_EQ(std::filesystem::file_size(dir / "embeddings.f32"), 30u * kHeadInputDim * 4);
  write_head(init_head(1), dir / "head.cbhd");
  const auto report = ingest({dir / "embeddings.f32", dir / "meta.jsonl", dir / "head.cbhd", dir / "toy.cbrx"});
  EXPECT_EQ(report.rows, 30u);
  EXPECT_EQ(report.dim, kHeadOutputDim);
  EXPECT_EQ(report.code_bytes, 30u * kHeadOutputDim);
  const auto index = build_index(dir / "toy.cbrx", dir / "toy.cbkd", 4);
  EXPECT_EQ(index.rows, 30u);
  const auto cfg = load_config(dir / "sbc.toml");
  ASSERT_EQ(cfg.datasets.size(), 1u);
  const auto api = make_api(cfg);
  EXPECT_NE(api->find_dataset("toy"), nullptr);
}

}  // namespace
