// Command-line front end: preprocessing, training, evaluation, CV, grid
// search, prediction, error analysis and synthetic data generation.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "salamnet/analysis.hpp"
#include "salamnet/config.hpp"
#include "salamnet/corpus.hpp"
#include "salamnet/error.hpp"
#include "salamnet/eval.hpp"
#include "salamnet/features.hpp"
#include "salamnet/models.hpp"
#include "salamnet/preprocess.hpp"
#include "salamnet/synthetic.hpp"

namespace fs = std::filesystem;
using namespace salamnet;
using json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Everything one invocation needs: the merged config, the run directory
/// and the bookkeeping for the manifest.
struct Run {
  std::string command;
  RunConfig cfg;
  fs::path dir;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, hash
  std::vector<std::string> outputs;                          // relative to dir

  void input(const fs::path& p) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) inputs.emplace_back(f.string(), file_hash(f));
    } else {
      inputs.emplace_back(p.string(), file_hash(p));
    }
  }

  fs::path output(const std::string& rel) {
    outputs.push_back(rel);
    const fs::path p = dir / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  void write_manifest() const {
    json cfg_json = json::object();
    for (const auto& [k, v] : cfg.values()) cfg_json[k] = v;
    json in = json::array();
    for (const auto& [p, h] : inputs) in.push_back({{"path", p}, {"fnv1a64", h}});
    json out = json::array();
    for (const auto& rel : outputs) {
      const fs::path p = dir / rel;
      if (fs::is_regular_file(p)) out.push_back({{"path", rel}, {"fnv1a64", file_hash(p)}});
    }
    write_json(dir / "manifest.json", {{"command", command},
                                       {"seed", cfg.seed()},
                                       {"config_hash", hex64(cfg.hash())},
                                       {"config", cfg_json},
                                       {"inputs", in},
                                       {"outputs", out}});
  }
};

fs::path make_run_dir(const RunConfig& cfg, const std::string& command, const std::string& override_dir) {
  fs::path dir;
  if (!override_dir.empty()) {
    dir = override_dir;
  } else {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    dir = fs::path(cfg.get("paths.output")) / (std::string(stamp) + "-" + command + "-" + hex64(cfg.hash()).substr(0, 8));
  }
  fs::create_directories(dir);
  return dir;
}

Pipeline make_pipeline(Run& run) {
  const PipelineConfig pc = run.cfg.pipeline();
  for (const auto* p : {&pc.emoji_path, &pc.dialect_path, &pc.hypernym_path, &pc.stopwords_path}) {
    if (fs::exists(*p)) run.input(*p);
  }
  return Pipeline(pc);
}

std::shared_ptr<const EmbeddingTable> maybe_embeddings(Run& run, bool needed) {
  if (!needed) return nullptr;
  run.cfg.require_paths({"paths.embeddings"});
  run.input(run.cfg.get("paths.embeddings"));
  return std::make_shared<const EmbeddingTable>(load_embeddings(run.cfg.get("paths.embeddings")));
}

Corpus load_data(Run& run) {
  run.cfg.require_paths({"paths.data"});
  run.input(run.cfg.get("paths.data"));
  return load_tsv(run.cfg.get("paths.data"));
}

SplitSizes split_sizes(const RunConfig& cfg, std::size_t n) {
  if (cfg.is_set("split.train") || cfg.is_set("split.dev") || cfg.is_set("split.test")) {
    SplitSizes s;
    s.train = static_cast<std::size_t>(cfg.get_int("split.train"));
    s.dev = static_cast<std::size_t>(cfg.get_int("split.dev"));
    s.test = static_cast<std::size_t>(cfg.get_int("split.test"));
    return s;
  }
  return n == 10000 ? SplitSizes{} : proportional_split(n);
}

std::vector<Arch> arch_list(const RunConfig& cfg) {
  if (cfg.get("model.arch") == "all") return {std::begin(kDeepArchs), std::end(kDeepArchs)};
  return {cfg.arch()};
}

void write_history(const fs::path& p, const std::vector<EpochRecord>& history) {
  std::ofstream out(p, std::ios::binary);
  out << "epoch\ttrain_loss\tdev_macro_f1\tdev_accuracy\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d\t%.10g\t%.6f\t%.6f\n", r.epoch, r.train_loss, r.dev_macro_f1, r.dev_accuracy);
    out << buf;
  }
}

void print_metrics(const std::string& label, const Metrics& m) {
  std::printf("%-18s P=%.4f R=%.4f macro-F1=%.4f weighted-F1=%.4f acc=%.4f\n", label.c_str(), m.precision, m.recall,
              m.macro_f1, m.weighted_f1, m.accuracy);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(Run& run, const std::string& out_file) {
  const auto& cfg = run.cfg;
  const long long n = cfg.get_int("synth.n");
  if (n < 0) throw ConfigError("synth.n must be positive");
  const Corpus c = generate_synthetic(static_cast<std::size_t>(n), cfg.seed(), cfg.get_double("synth.ratio"));
  const fs::path tsv = out_file.empty() ? run.output("synthetic.tsv") : fs::path(out_file);
  save_tsv(tsv.string(), c);
  const long long dim = cfg.get_int("synth.embedding_dim");
  if (dim > 0) {
    const fs::path vec = out_file.empty() ? run.output("synthetic_vectors.txt") : fs::path(out_file + ".vectors.txt");
    std::ofstream out(vec, std::ios::binary);
    write_embeddings(out, synthetic_embeddings(static_cast<std::size_t>(dim), cfg.seed()));
  }
  const auto counts = c.counts();
  std::printf("wrote %zu tweets (%zu OFF, %zu NOT) to %s\n", c.size(), counts.off, counts.not_off, tsv.c_str());
  return 0;
}

int cmd_preprocess(Run& run) {
  const Pipeline pipe = make_pipeline(run);
  const Corpus raw = load_data(run);
  save_tsv(run.output("preprocessed.tsv").string(), preprocess_corpus(raw, pipe));
  std::printf("preprocessed %zu tweets into %s\n", raw.size(), (run.dir / "preprocessed.tsv").c_str());
  return 0;
}

struct Splits {
  Corpus train, dev, test;
};

Splits prepared_splits(Run& run, const Pipeline& pipe) {
  const Corpus raw = load_data(run);
  auto [train, dev, test] = official_split(raw, split_sizes(run.cfg, raw.size()));
  if (run.cfg.get_bool("run.upsample")) train = upsample_minority(train, run.cfg.seed());
  return {preprocess_corpus(train, pipe), preprocess_corpus(dev, pipe), test};
}

TrainedModel train_and_save(Run& run, const Splits& s, Arch arch, const std::string& sub) {
  const ModelSpec spec = run.cfg.model_spec(arch);
  const auto emb = maybe_embeddings(run, spec.feature == FeatureKind::ARAVEC);
  TrainedModel m = fit_model(spec, s.train, s.dev.empty() ? nullptr : &s.dev, emb);
  const std::string prefix = sub.empty() ? "" : sub + "/";
  run.output(prefix + "model/model.ckpt");
  if (m.features.tfidf()) run.output(prefix + "model/tfidf.tsv");
  save_model(run.dir / (prefix + "model"), m);
  write_history(run.output(prefix + "history.tsv"), m.history);
  return m;
}

int cmd_train(Run& run) {
  const Pipeline pipe = make_pipeline(run);
  const Splits s = prepared_splits(run, pipe);
  for (Arch arch : arch_list(run.cfg)) {
    const ModelSpec spec = run.cfg.model_spec(arch);
    const std::string sub = arch_list(run.cfg).size() > 1 ? spec.name() : "";
    const TrainedModel m = train_and_save(run, s, arch, sub);
    if (!s.dev.empty()) {
      print_metrics(spec.name() + " dev", evaluate_split(m, s.dev).metrics);
    }
    std::printf("%s: best epoch %d, model in %s\n", spec.name().c_str(), m.best_epoch,
                (run.dir / sub / "model").c_str());
  }
  return 0;
}

int cmd_evaluate(Run& run, const std::string& portion) {
  const Pipeline pipe = make_pipeline(run);
  const Corpus raw = load_data(run);
  auto [train, dev, test] = official_split(raw, split_sizes(run.cfg, raw.size()));
  const Corpus* target = &test;
  if (portion == "dev") {
    target = &dev;
  } else if (portion == "train") {
    target = &train;
  } else if (portion == "all") {
    target = &raw;
  } else if (portion != "test") {
    throw ConfigError("--portion must be train, dev, test or all");
  }

  std::vector<TrainedModel> models;
  if (run.cfg.is_set("paths.model")) {
    run.cfg.require_paths({"paths.model"});
    run.input(run.cfg.get("paths.model"));
    const fs::path mdir = run.cfg.get("paths.model");
    const Checkpoint ck = [&] {
      std::ifstream in(mdir / "model.ckpt", std::ios::binary);
      if (!in) throw ConfigError("cannot open " + (mdir / "model.ckpt").string());
      return read_checkpoint(in, (mdir / "model.ckpt").string());
    }();
    const auto emb = maybe_embeddings(run, ck.get("feature") == "aravec");
    models.push_back(load_model(mdir, emb));
  } else {
    Corpus tr = train;
    if (run.cfg.get_bool("run.upsample")) tr = upsample_minority(tr, run.cfg.seed());
    const Splits s{preprocess_corpus(tr, pipe), preprocess_corpus(dev, pipe), {}};
    for (Arch arch : arch_list(run.cfg)) {
      const std::string sub = arch_list(run.cfg).size() > 1 ? run.cfg.model_spec(arch).name() : "";
      models.push_back(train_and_save(run, s, arch, sub));
    }
  }
  for (const auto& m : models) {
    const EvalResult r = evaluate_split(m, *target, &pipe);
    const std::string name = m.spec.name();
    write_json(run.output("report_" + name + ".json"), evaluation_report(m.spec, r, name + "@" + portion));
    print_metrics(name + " " + portion, r.metrics);
  }
  return 0;
}

int cmd_cv(Run& run) {
  const Pipeline pipe = make_pipeline(run);
  Corpus corpus = preprocess_corpus(load_data(run), pipe);
  const auto archs = arch_list(run.cfg);
  CVOptions opt;
  opt.k = static_cast<int>(run.cfg.get_int("cv.k"));
  opt.seed = run.cfg.seed();
  opt.dev_fraction = run.cfg.get_double("cv.dev_fraction");
  const int jobs = run.cfg.jobs();
  // Parallelize across architectures when fanning out, across folds otherwise.
  opt.jobs = archs.size() > 1 ? 1 : jobs;
  const auto emb = maybe_embeddings(run, run.cfg.feature() == FeatureKind::ARAVEC);
  std::vector<ModelSpec> specs;
  for (Arch a : archs) specs.push_back(run.cfg.model_spec(a));
  const auto reports = parallel_map<CVReport>(specs.size(), archs.size() > 1 ? jobs : 1,
                                              [&](std::size_t i) { return cross_validate(specs[i], corpus, opt, emb); });
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string name = specs[i].name();
    write_json(run.output("cv_" + name + ".json"), cv_report(specs[i], reports[i], corpus, name + "@cv"));
    std::printf("%-14s k=%d macro-F1 %.4f +- %.4f  acc %.4f\n", name.c_str(), opt.k, reports[i].macro_f1.mean,
                reports[i].macro_f1.std, reports[i].accuracy.mean);
  }
  return 0;
}

int cmd_gridsearch(Run& run) {
  const Pipeline pipe = make_pipeline(run);
  const Splits s = prepared_splits(run, pipe);
  const GridSpec grid = run.cfg.grid();
  const auto emb = maybe_embeddings(run, run.cfg.feature() == FeatureKind::ARAVEC);
  for (Arch arch : arch_list(run.cfg)) {
    const ModelSpec base = run.cfg.model_spec(arch);
    const GridResult g = grid_search(base, grid, s.train, s.dev, emb, run.cfg.jobs());
    std::ofstream out(run.output("grid_" + base.name() + ".tsv"), std::ios::binary);
    write_grid_tsv(out, g.table);
    std::size_t failed = 0;
    for (const auto& p : g.table) failed += p.ok() ? 0 : 1;
    std::printf("%s: best dropout=%g layers=%d hidden=%d (%zu points, %zu failed)\n", base.name().c_str(),
                g.best.hyper.dropout, g.best.hyper.layers, g.best.hyper.hidden, g.table.size(), failed);
  }
  return 0;
}

/// Reads `id<TAB>text` lines with an optional label column and header.
std::vector<std::pair<std::string, std::string>> read_unlabeled(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    const auto f = detail::split_tabs(line);
    if (f.size() < 2) throw ParseError(path + ":" + std::to_string(line_no) + ": expected id<TAB>text");
    if (line_no == 1 && detail::ieq(f[0], "id") && detail::ieq(f[1], "text")) continue;
    rows.emplace_back(unescape_field(f[0]), unescape_field(f[1]));
  }
  return rows;
}

int cmd_predict(Run& run) {
  run.cfg.require_paths({"paths.model", "paths.data"});
  const Pipeline pipe = make_pipeline(run);
  run.input(run.cfg.get("paths.model"));
  run.input(run.cfg.get("paths.data"));
  const fs::path mdir = run.cfg.get("paths.model");
  std::ifstream ck_in(mdir / "model.ckpt", std::ios::binary);
  if (!ck_in) throw ConfigError("cannot open " + (mdir / "model.ckpt").string());
  const bool aravec = read_checkpoint(ck_in).get("feature") == "aravec";
  const TrainedModel m = load_model(mdir, maybe_embeddings(run, aravec));
  const auto rows = read_unlabeled(run.cfg.get("paths.data"));
  std::vector<std::string> texts;
  for (const auto& [id, text] : rows) texts.push_back(pipe(text));
  const auto preds = predict(m, texts);
  std::ofstream out(run.output("predictions.tsv"), std::ios::binary);
  out << "id\tlabel\tprobability\n";
  char buf[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", preds[i].probability);
    out << escape_field(rows[i].first) << '\t' << to_string(preds[i].label) << '\t' << buf << '\n';
  }
  std::printf("predicted %zu tweets into %s\n", rows.size(), (run.dir / "predictions.tsv").c_str());
  return 0;
}

int cmd_analyze(Run& run, const std::vector<std::string>& reports, const std::vector<std::string>& family_a,
                const std::vector<std::string>& family_b) {
  const auto load_all = [&](const std::vector<std::string>& paths) {
    std::vector<PredictionRun> runs;
    for (const auto& p : paths) {
      run.input(p);
      runs.push_back(load_prediction_run(p));
    }
    return runs;
  };
  if (reports.empty()) throw ConfigError("analyze needs at least one --reports file");
  const auto runs = load_all(reports);
  ErrorReport rep = misclassified_by_all(runs);
  std::optional<ErrorProfile> profile;
  if (run.cfg.is_set("paths.data")) {
    const Corpus corpus = load_data(run);
    attach_texts(rep, corpus);
    profile = length_and_repetition_profile(rep, corpus);
  }
  std::optional<ContrastSets> contrast;
  if (!family_a.empty() || !family_b.empty()) {
    contrast = feature_family_contrast(load_all(family_a), load_all(family_b), run.cfg.get_double("analysis.threshold"));
  }
  write_json(run.output("analysis.json"), analysis_report(rep, profile, contrast));
  std::ofstream out(run.output("errors.tsv"), std::ios::binary);
  write_error_tsv(out, rep);
  std::printf("misclassified by all %zu runs: %zu OFF->NOT, %zu NOT->OFF\n", runs.size(), rep.off_as_not.size(),
              rep.not_as_off.size());
  if (contrast) {
    std::printf("family contrast: %zu wrong in all A / right in most B, %zu the reverse\n",
                contrast->a_wrong_b_right.size(), contrast->b_wrong_a_right.size());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arabic offensive-language classification experiments"};
  app.require_subcommand(1);

  struct Common {
    std::string config_file;
    std::vector<std::string> assignments;
    std::string run_dir;
    std::map<std::string, std::string> shortcuts;
  };
  std::map<std::string, Common> common;
  std::string out_file, portion = "test";
  std::vector<std::string> reports, family_a, family_b;

  const auto add_common = [&](CLI::App* sub) {
    Common& c = common[sub->get_name()];
    sub->add_option("--config", c.config_file, "Config file with [section] key = value lines");
    sub->add_option("--set", c.assignments, "Override a config key, e.g. --set model.hidden=200");
    sub->add_option("--run-dir", c.run_dir, "Write outputs here instead of a new timestamped directory");
    const std::pair<const char*, const char*> flags[] = {
        {"--data", "paths.data"},       {"--lexicons", "paths.lexicons"}, {"--embeddings", "paths.embeddings"},
        {"--output", "paths.output"},   {"--model", "paths.model"},       {"--arch", "model.arch"},
        {"--features", "model.features"}, {"--epochs", "model.epochs"},   {"--hidden", "model.hidden"},
        {"--layers", "model.layers"},   {"--dropout", "model.dropout"},   {"--seed", "run.seed"},
        {"--jobs", "run.jobs"},         {"--k", "cv.k"},                  {"--n", "synth.n"},
        {"--ratio", "synth.ratio"},     {"--threshold", "analysis.threshold"},
    };
    for (const auto& [flag, key] : flags) {
      const std::string k = key;
      sub->add_option_function<std::string>(flag, [&c, k](const std::string& v) { c.shortcuts[k] = v; },
                                            "Sets " + k);
    }
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  synth->add_option("--out", out_file, "Write the TSV here instead of the run directory");
  auto* preprocess = app.add_subcommand("preprocess", "Normalize a corpus TSV");
  auto* train = app.add_subcommand("train", "Train a model on the train part of a corpus");
  auto* evaluate = app.add_subcommand("evaluate", "Score a model (trained now or loaded with --model)");
  evaluate->add_option("--portion", portion, "train, dev, test or all")->capture_default_str();
  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  auto* grid = app.add_subcommand("gridsearch", "Hyperparameter grid search on the dev part");
  auto* predict_cmd = app.add_subcommand("predict", "Label id<TAB>text lines with a trained model");
  auto* analyze = app.add_subcommand("analyze", "Cross-run error analysis over evaluation reports");
  analyze->add_option("--reports", reports, "Prediction reports (JSON) to intersect");
  analyze->add_option("--family-a", family_a, "Reports of the first feature family");
  analyze->add_option("--family-b", family_b, "Reports of the second feature family");
  for (auto* sub : {synth, preprocess, train, evaluate, cv, grid, predict_cmd, analyze}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::Config);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const Common& c = common[sub->get_name()];
    Run run;
    run.command = sub->get_name();
    if (!c.config_file.empty()) {
      run.cfg.load(c.config_file);
      run.inputs.emplace_back(c.config_file, file_hash(c.config_file));
    }
    for (const auto& a : c.assignments) run.cfg.set_assignment(a);
    for (const auto& [k, v] : c.shortcuts) run.cfg.set(k, v);
    // Validate settings up front so a bad value fails before any work.
    run.cfg.seed();
    run.cfg.jobs();
    if (run.cfg.get("model.arch") != "all") run.cfg.arch();
    run.cfg.feature();
    if (run.command != "synth" && run.command != "analyze") run.cfg.pipeline();
    run.dir = make_run_dir(run.cfg, run.command, c.run_dir);

    int rc = 0;
    if (run.command == "synth") rc = cmd_synth(run, out_file);
    else if (run.command == "preprocess") rc = cmd_preprocess(run);
    else if (run.command == "train") rc = cmd_train(run);
    else if (run.command == "evaluate") rc = cmd_evaluate(run, portion);
    else if (run.command == "cv") rc = cmd_cv(run);
    else if (run.command == "gridsearch") rc = cmd_gridsearch(run);
    else if (run.command == "predict") rc = cmd_predict(run);
    else if (run.command == "analyze") rc = cmd_analyze(run, reports, family_a, family_b);
    run.write_manifest();
    return rc;
  } catch (const Error& e) {
    std::fprintf(stderr, "salamnet: %s\n", e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "salamnet: %s\n", e.what());
    return static_cast<int>(ErrorKind::Config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "salamnet: %s\n", e.what());
    return static_cast<int>(ErrorKind::Data);
  }
}
