// sbc: operator CLI for the retrieval engine.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "api.hpp"
#include "config.hpp"
#include "pipeline.hpp"
#include "sbc/catalog.hpp"
#include "sbc/error.hpp"
#include "sbc/eval.hpp"
#include "sbc/head.hpp"
#include "sbc/quantizer.hpp"
#include "sbc/synthetic.hpp"
#include "server.hpp"

namespace fs = std::filesystem;
using namespace sbc;

namespace {

service::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

// CSV goes to --csv when given, otherwise stdout; the summary goes to stderr.
class CsvSink {
 public:
  explicit CsvSink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw IoError("cannot write " + path);
    }
  }
  std::ostream& out() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<std::size_t> sample_queries(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(count, n));
  return rows;
}

struct TrainHeadArgs {
  std::string view_a, view_b, out, log;
  bool synthetic = false;
  std::size_t classes = 10, per_class = 200;
  std::uint64_t data_seed = 0;
  TrainConfig cfg;
};

int run_train_head(const TrainHeadArgs& a) {
  EmbeddingMatrix view_a;
  EmbeddingMatrix view_b;
  if (a.synthetic) {
    synthetic::PairedViewConfig data;
    data.classes = a.classes;
    data.items_per_class = a.per_class;
    data.seed = a.data_seed;
    auto views = synthetic::paired_views(data);
    view_a = std::move(views.view_a);
    view_b = std::move(views.view_b);
  } else {
    if (a.view_a.empty() || a.view_b.empty()) {
      throw InvalidArgument("train-head needs --view-a and --view-b, or --synthetic");
    }
    view_a = read_f32_matrix(a.view_a, kHeadInputDim);
    view_b = read_f32_matrix(a.view_b, kHeadInputDim);
  }
  const TrainResult result = train_head(view_a, view_b, a.cfg);
  write_head(result.params, a.out);

  if (!a.log.empty()) {
    std::ofstream log(a.log);
    log << "epoch,loss,align,koleo\n";
    for (std::size_t e = 0; e < result.history.size(); ++e) {
      const auto& h = result.history[e];
      log << e + 1 << ',' << h.loss << ',' << h.align << ',' << h.koleo << '\n';
    }
  }
  const auto& last = result.history.back();
  std::fprintf(stderr, "trained head on %zu pairs, %zu epochs: loss %.4f (align %.4f, koleo %.4f)\n",
               view_a.rows(), result.history.size(), last.loss, last.align, last.koleo);
  std::fprintf(stderr, "wrote %s\n", a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string suite, csv;
  std::size_t seeds = 5;
  // recall / zeroshot
  std::size_t epochs = 15, classes = 10, per_class = 200, queries = 200;
  double lambda = 0.1;
  std::string embeddings, head, catalog, class_embeddings;
  // crossover
  std::vector<std::string> models = {"dbranch", "dbranch_ensemble"};
  std::size_t rows = 10000, clusters = 10, modes = 4, max_positives = 30, negatives = 200;
  double spread = 12.0;
  std::uint64_t data_seed = 7;
};

int eval_recall_external(const EvalArgs& a, std::ostream& csv) {
  const HeadParams head = read_head(a.head);
  const EmbeddingMatrix raw = read_f32_matrix(a.embeddings, head.input_dim());
  const EmbeddingMatrix embedded = forward_batch(head, raw);
  const Quantizer q = Quantizer::fit(embedded);
  QuantizedCatalog catalog(q.params(), q.encode_matrix(embedded),
                           synthetic::numbered_records(embedded.rows()));
  const auto queries = sample_queries(embedded.rows(), a.queries, 0);
  csv << "pipeline,recall_at_1,recall_at_10,recall_at_100\n";
  csv << "head";
  std::fprintf(stderr, "Recall@k post-quantization (%zu rows, %zu queries):", embedded.rows(),
               queries.size());
  for (std::size_t k : {1, 10, 100}) {
    if (k >= embedded.rows()) {
      csv << ",";
      continue;
    }
    const double r = eval::recall_at_k(embedded, catalog, queries, k);
    csv << ',' << r;
    std::fprintf(stderr, "  @%zu %.3f", k, r);
  }
  csv << '\n';
  std::fprintf(stderr, "\n");
  return 0;
}

int eval_zeroshot_external(const EvalArgs& a, std::ostream& csv) {
  const QuantizedCatalog catalog = read_catalog(a.catalog);
  if (!catalog.has_labels()) throw InvalidArgument(a.catalog + " has no labels");
  const HeadParams head = read_head(a.head);
  const EmbeddingMatrix classes = read_f32_matrix(a.class_embeddings, head.input_dim());
  const Quantizer q(catalog.params());
  std::map<std::int64_t, eval::Code> codes;
  const EmbeddingMatrix embedded = forward_batch(head, classes);
  for (std::size_t c = 0; c < embedded.rows(); ++c) {
    codes[static_cast<std::int64_t>(c)] = q.encode(embedded.row(c));
  }
  const double acc = eval::zero_shot_accuracy(catalog, codes);
  csv << "pipeline,zero_shot_accuracy\nhead," << acc << '\n';
  std::fprintf(stderr, "zero-shot accuracy %.4f over %zu rows, %zu classes\n", acc, catalog.size(),
               codes.size());
  return 0;
}

int eval_head_suite(const EvalArgs& a, std::ostream& csv) {
  const bool recall = a.suite == "recall";
  csv << (recall ? "seed,pipeline,recall_at_1,recall_at_10,recall_at_100,mean_nn_distance\n"
                 : "seed,pipeline,zero_shot_accuracy\n");
  std::map<std::string, std::vector<double>> totals;
  std::vector<std::string> order;
  for (std::size_t s = 0; s < a.seeds; ++s) {
    eval::HeadBenchmarkConfig cfg;
    cfg.data.classes = a.classes;
    cfg.data.items_per_class = a.per_class;
    cfg.data.seed = s;
    cfg.train.seed = s;
    cfg.train.epochs = a.epochs;
    cfg.train.koleo_weight = a.lambda;
    cfg.queries = std::min(a.queries, a.classes * a.per_class);
    for (const auto& p : eval::head_benchmark(cfg)) {
      auto& t = totals[p.name];
      if (t.empty()) {
        order.push_back(p.name);
        t.assign(4, 0.0);
      }
      csv << s << ',' << p.name;
      if (recall) {
        for (std::size_t i = 0; i < 3; ++i) {
          csv << ',' << p.recall[i];
          t[i] += p.recall[i];
        }
        csv << ',' << p.mean_nn_distance << '\n';
      } else {
        csv << ',' << p.zero_shot << '\n';
        t[3] += p.zero_shot;
      }
    }
  }
  const double n = static_cast<double>(a.seeds);
  std::fprintf(stderr, "mean over %zu seeds:\n", a.seeds);
  for (const auto& name : order) {
    const auto& t = totals[name];
    if (recall) {
      std::fprintf(stderr, "  %-12s Recall@1 %.3f  Recall@10 %.3f  Recall@100 %.3f\n",
                   name.c_str(), t[0] / n, t[1] / n, t[2] / n);
    } else {
      std::fprintf(stderr, "  %-12s zero-shot accuracy %.3f\n", name.c_str(), t[3] / n);
    }
  }
  return 0;
}

int eval_crossover(const EvalArgs& a, std::ostream& csv) {
  QuantizedCatalog data;
  if (!a.catalog.empty()) {
    data = read_catalog(a.catalog);
  } else {
    synthetic::ClusterConfig cc;
    cc.rows = a.rows;
    cc.clusters = a.clusters;
    cc.modes_per_cluster = a.modes;
    cc.spread = a.spread;
    cc.seed = a.data_seed;
    data = synthetic::clustered_catalog(cc);
  }
  csv << "model,positives,model_f1,nn_f1\n";
  for (const auto& name : a.models) {
    const auto kind = parse_model_kind(name);
    if (!kind) throw InvalidArgument("unknown model '" + name + "'");
    eval::CrossoverConfig cfg;
    cfg.model = *kind;
    cfg.seeds.resize(a.seeds);
    std::iota(cfg.seeds.begin(), cfg.seeds.end(), std::uint64_t{0});
    cfg.max_positives = a.max_positives;
    cfg.negatives = a.negatives;
    const auto table = eval::crossover_experiment(data, cfg);
    for (const auto& row : table.rows) {
      csv << to_string(*kind) << ',' << row.positives << ',' << row.model_f1 << ','
          << row.nn_f1 << '\n';
    }
    if (table.crossover) {
      std::fprintf(stderr, "%-17s crossover at %zu positives\n", name.c_str(), *table.crossover);
    } else {
      std::fprintf(stderr, "%-17s no crossover up to %zu positives\n", name.c_str(),
                   a.max_positives);
    }
  }
  return 0;
}

int run_eval(const EvalArgs& a) {
  CsvSink sink(a.csv);
  auto& csv = sink.out();
  if (a.suite == "crossover") return eval_crossover(a, csv);
  if (a.suite == "recall" && !a.embeddings.empty()) {
    if (a.head.empty()) throw InvalidArgument("--embeddings needs --head");
    return eval_recall_external(a, csv);
  }
  if (a.suite == "zeroshot" && !a.class_embeddings.empty()) {
    if (a.head.empty() || a.catalog.empty()) {
      throw InvalidArgument("--class-embeddings needs --catalog and --head");
    }
    return eval_zeroshot_external(a, csv);
  }
  return eval_head_suite(a, csv);
}

int run_serve(const std::string& config_path, const std::string& listen) {
  service::ServerConfig config = service::load_config(config_path);
  if (!listen.empty()) service::apply_listen(config, listen);
  auto api = service::make_api(config);
  service::HttpServer server(api, config.cors_origins, config.threads);
  const int port = server.bind(config.host, config.port);
  for (const auto& d : config.datasets) {
    const auto* ds = api->find_dataset(d.name);
    std::fprintf(stderr, "dataset %s: %zu rows, d'=%zu\n", d.name.c_str(), ds->catalog().size(),
                 ds->catalog().dim());
  }
  std::fprintf(stderr, "listening on http://%s:%d\n", config.host.c_str(), port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Search-by-classification retrieval engine"};
  app.require_subcommand(1);

  service::ToyOptions toy;
  auto* toy_cmd = app.add_subcommand("toy", "Write a small synthetic dataset with images");
  toy_cmd->add_option("--out", toy.out, "Output directory")->required();
  toy_cmd->add_option("--classes", toy.classes, "Number of classes")->capture_default_str();
  toy_cmd->add_option("--per-class", toy.per_class, "Items per class")->capture_default_str();
  toy_cmd->add_option("--seed", toy.seed, "Generator seed")->capture_default_str();

  TrainHeadArgs th;
  auto* th_cmd = app.add_subcommand("train-head", "Train the projection head on paired views");
  th_cmd->add_option("--view-a", th.view_a, "First views, f32 rows of 512");
  th_cmd->add_option("--view-b", th.view_b, "Second views, row-aligned with --view-a");
  th_cmd->add_flag("--synthetic", th.synthetic, "Train on generated paired views instead");
  th_cmd->add_option("--classes", th.classes, "Synthetic classes")->capture_default_str();
  th_cmd->add_option("--per-class", th.per_class, "Synthetic items per class")->capture_default_str();
  th_cmd->add_option("--data-seed", th.data_seed, "Synthetic data seed")->capture_default_str();
  th_cmd->add_option("--out", th.out, "Output head file")->required();
  th_cmd->add_option("--lambda", th.cfg.koleo_weight, "KoLeo weight")->capture_default_str();
  th_cmd->add_option("--tau", th.cfg.temperature, "InfoNCE temperature")->capture_default_str();
  th_cmd->add_option("--lr", th.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  th_cmd->add_option("--epochs", th.cfg.epochs, "Epochs")->capture_default_str();
  th_cmd->add_option("--batch", th.cfg.batch_size, "Batch size")->capture_default_str();
  th_cmd->add_option("--seed", th.cfg.seed, "Init and shuffle seed")->capture_default_str();
  th_cmd->add_option("--log", th.log, "Write per-epoch losses as CSV");

  service::IngestOptions ingest;
  auto* in_cmd = app.add_subcommand("ingest", "Embed, quantize and store a catalog");
  in_cmd->add_option("--embeddings", ingest.embeddings, "Raw f32 embeddings")->required();
  in_cmd->add_option("--meta", ingest.meta, "Metadata JSON lines")->required();
  in_cmd->add_option("--head", ingest.head, "Head parameters")->required();
  in_cmd->add_option("--out", ingest.out, "Output catalog")->required();

  std::string index_catalog, index_out;
  std::size_t leaf_size = KdTree::kDefaultLeafSize;
  auto* bi_cmd = app.add_subcommand("build-index", "Build the k-d tree for a catalog");
  bi_cmd->add_option("--catalog", index_catalog, "Catalog file")->required();
  bi_cmd->add_option("--out", index_out, "Index file (default: catalog with .cbkd)");
  bi_cmd->add_option("--leaf-size", leaf_size, "Maximum rows per leaf")->capture_default_str();

  std::string config_path, listen;
  auto* sv_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  sv_cmd->add_option("--config", config_path, "Server config file")->required();
  sv_cmd->add_option("--listen", listen, "host:port, overrides config and SBC_LISTEN");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Run an evaluation suite; CSV to stdout or --csv");
  ev_cmd->add_option("--suite", ev.suite, "recall | crossover | zeroshot")
      ->required()
      ->check(CLI::IsMember({"recall", "crossover", "zeroshot"}));
  ev_cmd->add_option("--csv", ev.csv, "Write CSV here instead of stdout");
  ev_cmd->add_option("--seeds", ev.seeds, "Number of seeds (0..n-1)")->capture_default_str();
  ev_cmd->add_option("--epochs", ev.epochs, "Head training epochs")->capture_default_str();
  ev_cmd->add_option("--lambda", ev.lambda, "KoLeo weight")->capture_default_str();
  ev_cmd->add_option("--classes", ev.classes, "Synthetic classes")->capture_default_str();
  ev_cmd->add_option("--per-class", ev.per_class, "Synthetic items per class")->capture_default_str();
  ev_cmd->add_option("--queries", ev.queries, "Recall query rows")->capture_default_str();
  ev_cmd->add_option("--embeddings", ev.embeddings, "Recall on these raw embeddings");
  ev_cmd->add_option("--head", ev.head, "Head for --embeddings / --class-embeddings");
  ev_cmd->add_option("--catalog", ev.catalog, "Labeled catalog (crossover, zeroshot)");
  ev_cmd->add_option("--class-embeddings", ev.class_embeddings, "Raw f32 row per class id");
  ev_cmd->add_option("--models", ev.models, "Crossover models")->capture_default_str();
  ev_cmd->add_option("--rows", ev.rows, "Synthetic crossover rows")->capture_default_str();
  ev_cmd->add_option("--clusters", ev.clusters, "Synthetic classes")->capture_default_str();
  ev_cmd->add_option("--modes", ev.modes, "Gaussian modes per class")->capture_default_str();
  ev_cmd->add_option("--spread", ev.spread, "Mode standard deviation in code units")
      ->capture_default_str();
  ev_cmd->add_option("--data-seed", ev.data_seed, "Synthetic data seed")->capture_default_str();
  ev_cmd->add_option("--max-positives", ev.max_positives, "Largest positive count")
      ->capture_default_str();
  ev_cmd->add_option("--negatives", ev.negatives, "Labeled negatives per run")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy_cmd) {
      service::make_toy(toy);
      std::fprintf(stderr, "wrote %zu items to %s\n", toy.classes * toy.per_class,
                   toy.out.string().c_str());
      return 0;
    }
    if (*th_cmd) return run_train_head(th);
    if (*in_cmd) {
      const auto r = service::ingest(ingest);
      std::fprintf(stderr, "ingested %zu rows: %zu -> %zu dims, %ju code bytes, wrote %s\n",
                   r.rows, r.input_dim, r.dim, r.code_bytes, ingest.out.string().c_str());
      return 0;
    }
    if (*bi_cmd) {
      if (index_out.empty()) index_out = fs::path(index_catalog).replace_extension(".cbkd").string();
      const auto r = service::build_index(index_catalog, index_out, leaf_size);
      std::fprintf(stderr, "indexed %zu rows: %zu nodes, %zu leaves in %.1f ms, wrote %s\n",
                   r.rows, r.nodes, r.leaves, r.build_ms, index_out.c_str());
      return 0;
    }
    if (*sv_cmd) return run_serve(config_path, listen);
    if (*ev_cmd) return run_eval(ev);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sbc: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
