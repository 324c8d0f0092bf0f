#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "salamnet/error.hpp"
#include "salamnet/models.hpp"
#include "salamnet/preprocess.hpp"
#include "salamnet/random.hpp"

namespace salamnet {

/// Experiment settings keyed `section.key`. Files use `[section]` headers
/// and `key = value` lines; `#` starts a comment line. Every key must be
/// one of the known ones below.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& [k, v] : known()) values_[k] = v;
  }

  /// Known keys and their defaults. An empty default means unset.
  static const std::map<std::string, std::string>& known() {
    static const std::map<std::string, std::string> keys{
        {"paths.data", ""},
        {"paths.lexicons", ""},
        {"paths.embeddings", ""},
        {"paths.output", "runs"},
        {"paths.model", ""},
        {"model.arch", "bigru"},
        {"model.features", "tfidf"},
        {"model.epochs", "50"},
        {"model.dropout", "0.5"},
        {"model.hidden", ""},  // per-architecture default when unset
        {"model.layers", ""},
        {"model.lr", ""},
        {"model.batch", "32"},
        {"model.max_len", "50"},
        {"model.buckets", "256"},
        {"model.tfidf_mode", "hashed"},
        {"model.inter_layer_dropout", "false"},
        {"model.l2", "1e-4"},
        {"model.lr_max_epochs", "500"},
        {"model.lr_patience", "20"},
        {"run.seed", "42"},
        {"run.jobs", "1"},
        {"run.steps", "emoji,letters,dialect,hypernym,hashtag,clean"},
        {"run.upsample", "false"},
        {"split.train", ""},
        {"split.dev", ""},
        {"split.test", ""},
        {"cv.k", "10"},
        {"cv.dev_fraction", "0.1"},
        {"grid.dropout", "0.25,0.5,0.75,0.99"},
        {"grid.layers", "1,2"},
        {"grid.hidden", "50,100,200,300"},
        {"synth.n", "2000"},
        {"synth.ratio", "0.19"},
        {"synth.embedding_dim", "0"},
        {"analysis.threshold", "0.5"},
    };
    return keys;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known().contains(key)) throw ConfigError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  /// Parses `key=value` (as given on the command line).
  void set_assignment(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void read(std::istream& in, const std::string& source) {
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(source + ":" + std::to_string(line_no) + ": bad section header");
        section = trim(std::string_view(t).substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(std::string_view(t).substr(0, eq));
      const std::string full = section.empty() ? key : section + "." + key;
      try {
        set(full, trim(std::string_view(t).substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    read(in, path);
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
  }
  bool is_set(const std::string& key) const { return !get(key).empty(); }

  long long get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t used = 0;
      const long long r = std::stoll(v, &used);
      if (used == v.size()) return r;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + " must be an integer (got '" + v + "')");
  }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t used = 0;
      const double r = std::stod(v, &used);
      if (used == v.size()) return r;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + " must be a number (got '" + v + "')");
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + " must be true or false (got '" + v + "')");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  /// Canonical text form: every key in sorted order, sections as prefixes.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }

  const std::map<std::string, std::string>& values() const { return values_; }

  // -------------------------------------------------------------------------
  // Typed views
  // -------------------------------------------------------------------------

  std::uint64_t seed() const {
    const long long s = get_int("run.seed");
    if (s < 0) throw ConfigError("run.seed must be non-negative");
    return static_cast<std::uint64_t>(s);
  }

  int jobs() const {
    const long long j = get_int("run.jobs");
    if (j < 1) throw ConfigError("run.jobs must be at least 1");
    return static_cast<int>(j);
  }

  Arch arch() const { return arch_named(get("model.arch")); }

  static Arch arch_named(const std::string& name) {
    const auto a = parse_arch(name);
    if (!a) throw ConfigError("unknown architecture '" + name + "' (lr, rnn, gru, bigru, lstm, bilstm)");
    return *a;
  }

  FeatureKind feature() const {
    const auto f = parse_feature(get("model.features"));
    if (!f) throw ConfigError("unknown feature kind '" + get("model.features") + "' (tfidf, aravec)");
    return *f;
  }

  /// The architecture's defaults with any explicitly configured values applied.
  ModelSpec model_spec(Arch arch) const {
    ModelSpec s = ModelSpec::defaults(arch, feature());
    auto& h = s.hyper;
    h.epochs = static_cast<int>(get_int("model.epochs"));
    h.dropout = get_double("model.dropout");
    if (is_set("model.hidden")) h.hidden = static_cast<int>(get_int("model.hidden"));
    if (is_set("model.layers")) h.layers = static_cast<int>(get_int("model.layers"));
    if (is_set("model.lr")) h.lr = get_double("model.lr");
    h.batch = static_cast<int>(get_int("model.batch"));
    h.max_len = static_cast<int>(get_int("model.max_len"));
    h.buckets = static_cast<std::size_t>(get_int("model.buckets"));
    const std::string& mode = get("model.tfidf_mode");
    if (mode == "hashed") {
      h.tfidf_mode = TfidfSequenceMode::HASHED;
    } else if (mode == "document") {
      h.tfidf_mode = TfidfSequenceMode::DOCUMENT;
    } else {
      throw ConfigError("model.tfidf_mode must be hashed or document");
    }
    h.inter_layer_dropout = get_bool("model.inter_layer_dropout");
    h.l2 = get_double("model.l2");
    h.lr_max_epochs = static_cast<int>(get_int("model.lr_max_epochs"));
    h.lr_patience = static_cast<int>(get_int("model.lr_patience"));
    h.seed = seed();
    validate_hyper(h);
    return s;
  }

  static void validate_hyper(const Hyper& h) {
    if (h.epochs < 0) throw ConfigError("model.epochs must be >= 0");
    if (!(h.dropout >= 0.0 && h.dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
    if (h.hidden < 1) throw ConfigError("model.hidden must be >= 1");
    if (h.layers < 1) throw ConfigError("model.layers must be >= 1");
    if (!(h.lr > 0.0)) throw ConfigError("model.lr must be positive");
    if (h.batch < 1) throw ConfigError("model.batch must be >= 1");
    if (h.max_len < 1) throw ConfigError("model.max_len must be >= 1");
    if (h.buckets < 16) throw ConfigError("model.buckets must be >= 16");
    if (h.l2 < 0.0) throw ConfigError("model.l2 must be >= 0");
    if (h.lr_max_epochs < 1 || h.lr_patience < 1) throw ConfigError("LR epoch limits must be >= 1");
  }

  PipelineConfig pipeline() const {
    const std::string dir = is_set("paths.lexicons") ? get("paths.lexicons") : default_data_dir() + "/lexicons";
    PipelineConfig pc;
    pc.steps.clear();
    for (const auto& name : get_list("run.steps")) {
      const auto st = parse_step(name);
      if (!st) throw ConfigError("unknown preprocessing step '" + name + "'");
      pc.steps.push_back(*st);
    }
    pc.emoji_path = dir + "/emoji.tsv";
    pc.dialect_path = dir + "/dialect.tsv";
    pc.hypernym_path = dir + "/hypernyms.tsv";
    pc.stopwords_path = dir + "/stopwords.txt";
    pc.validate();
    return pc;
  }

  GridSpec grid() const {
    GridSpec g;
    g.dropouts.clear();
    g.layers.clear();
    g.hiddens.clear();
    for (const auto& v : get_list("grid.dropout")) g.dropouts.push_back(parse_number<double>("grid.dropout", v));
    for (const auto& v : get_list("grid.layers")) g.layers.push_back(parse_number<int>("grid.layers", v));
    for (const auto& v : get_list("grid.hidden")) g.hiddens.push_back(parse_number<int>("grid.hidden", v));
    if (g.size() == 0) throw ConfigError("grid has no points");
    return g;
  }

  /// Throws ConfigError naming the first listed key whose path is unset or missing.
  void require_paths(const std::vector<std::string>& keys) const {
    for (const auto& k : keys) {
      if (!is_set(k)) throw ConfigError(k + " is required for this command");
      if (!std::filesystem::exists(get(k))) throw ConfigError(k + ": no such file or directory: " + get(k));
    }
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

  template <typename T>
  static T parse_number(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      T r{};
      if constexpr (std::is_same_v<T, int>) {
        r = std::stoi(v, &used);
      } else {
        r = std::stod(v, &used);
      }
      if (used == v.size()) return r;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": bad list entry '" + v + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace salamnet
