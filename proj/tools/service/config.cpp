#include "config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>

#include "sbc/error.hpp"

namespace sbc::service {

namespace {

using Value = std::variant<std::string, double, bool, std::vector<std::string>>;

struct Parser {
  std::string_view text;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw InvalidArgument("config line " + std::to_string(line) + ": " + what);
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
      s.remove_suffix(1);
    }
    return s;
  }

  // Parses a quoted string starting at s[0] == '"'; advances s past it.
  std::string quoted(std::string_view& s) const {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size() && s[i] != '"'; ++i) {
      if (s[i] == '\\' && i + 1 < s.size()) {
        const char c = s[++i];
        out.push_back(c == 'n' ? '\n' : c == 't' ? '\t' : c);
      } else {
        out.push_back(s[i]);
      }
    }
    if (i >= s.size()) fail("unterminated string");
    s.remove_prefix(i + 1);
    return out;
  }

  void expect_end(std::string_view rest) const {
    rest = trim(rest);
    if (!rest.empty() && rest.front() != '#') fail("unexpected text after value");
  }

  Value value(std::string_view s) const {
    s = trim(s);
    if (s.empty()) fail("missing value");
    if (s.front() == '"') {
      std::string v = quoted(s);
      expect_end(s);
      return v;
    }
    if (s.front() == '[') {
      std::vector<std::string> items;
      s.remove_prefix(1);
      for (;;) {
        s = trim(s);
        if (s.empty()) fail("unterminated array");
        if (s.front() == ']') {
          s.remove_prefix(1);
          break;
        }
        if (s.front() != '"') fail("arrays hold quoted strings only");
        items.push_back(quoted(s));
        s = trim(s);
        if (!s.empty() && s.front() == ',') s.remove_prefix(1);
      }
      expect_end(s);
      return items;
    }
    const auto hash = s.find('#');
    std::string_view word = trim(s.substr(0, hash));
    if (word == "true") return true;
    if (word == "false") return false;
    double number = 0.0;
    const auto [end, ec] = std::from_chars(word.data(), word.data() + word.size(), number);
    if (ec != std::errc() || end != word.data() + word.size()) {
      fail("cannot parse value '" + std::string(word) + "' (strings need quotes)");
    }
    return number;
  }
};

std::string as_string(const Parser& p, const Value& v, std::string_view key) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  p.fail(std::string(key) + " must be a string");
}

double as_number(const Parser& p, const Value& v, std::string_view key) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  p.fail(std::string(key) + " must be a number");
}

std::size_t as_count(const Parser& p, const Value& v, std::string_view key) {
  const double d = as_number(p, v, key);
  if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
    p.fail(std::string(key) + " must be a non-negative integer");
  }
  return static_cast<std::size_t>(d);
}

}  // namespace

void apply_listen(ServerConfig& config, std::string_view listen) {
  const auto colon = listen.rfind(':');
  std::string_view port = listen;
  if (colon != std::string_view::npos) {
    if (colon > 0) config.host = std::string(listen.substr(0, colon));
    port = listen.substr(colon + 1);
  }
  int value = -1;
  const auto [end, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || end != port.data() + port.size() || value < 0 || value > 65535) {
    throw InvalidArgument("bad listen address '" + std::string(listen) + "', expected host:port");
  }
  config.port = value;
}

ServerConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  ServerConfig config;
  Parser p{text};
  std::string section;
  DatasetConfig* dataset = nullptr;

  auto resolve = [&](const std::string& s) {
    std::filesystem::path path(s);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++p.line;

    const std::string_view line = Parser::trim(raw);
    if (line.empty() || line.front() == '#') continue;

    if (line.front() == '[') {
      const auto close = line.find(']');
      if (close == std::string_view::npos) p.fail("unterminated section header");
      p.expect_end(line.substr(close + 1));
      section = std::string(Parser::trim(line.substr(1, close - 1)));
      dataset = nullptr;
      if (section.rfind("dataset.", 0) == 0) {
        const std::string name = section.substr(8);
        if (name.empty()) p.fail("dataset section needs a name");
        for (const auto& d : config.datasets) {
          if (d.name == name) p.fail("dataset '" + name + "' defined twice");
        }
        config.datasets.push_back({name, {}, {}, {}});
        dataset = &config.datasets.back();
      } else if (section != "finetune") {
        p.fail("unknown section [" + section + "]");
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) p.fail("expected key = value");
    const std::string key(Parser::trim(line.substr(0, eq)));
    const Value v = p.value(line.substr(eq + 1));

    if (section.empty()) {
      if (key == "listen") {
        apply_listen(config, as_string(p, v, key));
      } else if (key == "sidecar") {
        const std::string url = as_string(p, v, key);
        if (!url.empty()) config.sidecar_url = url;
      } else if (key == "cors") {
        if (const auto* list = std::get_if<std::vector<std::string>>(&v)) {
          config.cors_origins = *list;
        } else {
          config.cors_origins = {as_string(p, v, key)};
        }
      } else if (key == "threads") {
        config.threads = as_count(p, v, key);
        if (config.threads == 0) p.fail("threads must be >= 1");
      } else {
        p.fail("unknown key '" + key + "'");
      }
    } else if (section == "finetune") {
      auto& f = config.finetune;
      if (key == "model") {
        const std::string name = as_string(p, v, key);
        const auto kind = parse_model_kind(name);
        if (!kind) p.fail("unknown model '" + name + "'");
        f.model = *kind;
      } else if (key == "negative_samples") {
        f.negative_samples = as_count(p, v, key);
      } else if (key == "negative_weight") {
        f.negative_weight = as_number(p, v, key);
      } else if (key == "max_results") {
        f.max_results = as_count(p, v, key);
      } else if (key == "seed") {
        f.seed = as_count(p, v, key);
      } else if (key == "max_depth") {
        f.tree.max_depth = as_count(p, v, key);
      } else {
        p.fail("unknown key '" + key + "' in [finetune]");
      }
    } else {
      if (key == "catalog") {
        dataset->catalog = resolve(as_string(p, v, key));
      } else if (key == "index") {
        dataset->index = resolve(as_string(p, v, key));
      } else if (key == "head") {
        dataset->head = resolve(as_string(p, v, key));
      } else {
        p.fail("unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  config.finetune.validate();
  for (const auto& d : config.datasets) {
    if (d.catalog.empty() || d.index.empty() || d.head.empty()) {
      throw InvalidArgument("dataset '" + d.name + "' needs catalog, index and head paths");
    }
  }
  return config;
}

ServerConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ServerConfig config = parse_config(text.str(), path.parent_path());
  if (const char* listen = std::getenv("SBC_LISTEN"); listen != nullptr && *listen != '\0') {
    apply_listen(config, listen);
  }
  return config;
}

}  // namespace sbc::service
