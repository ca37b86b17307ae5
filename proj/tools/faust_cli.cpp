// faust: dataset generation, source pretraining, source-free adaptation,
// evaluation and ablation sweeps.
//
// Errors go to stderr as one line: error: code=<kind> msg="<text>"
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "faust/adapt.hpp"
#include "faust/checkpoint.hpp"
#include "faust/experiments.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace faust;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string code, const std::string& msg, int exit_code)
      : std::runtime_error(msg), code(std::move(code)), exit_code(exit_code) {}
  std::string code;
  int exit_code;
};

int report_error(const std::string& code, const std::string& msg, int exit_code) {
  std::string clean;
  for (char c : msg) {
    if (c == '"' || c == '\\') clean += '\\';
    clean += (c == '\n' || c == '\r') ? ' ' : c;
  }
  std::cerr << "error: code=" << code << " msg=\"" << clean << "\"\n";
  return exit_code;
}

void require_file(const std::string& path, const std::string& role) {
  if (path.empty()) throw CliError("usage", role + " path is required", 2);
  if (!fs::is_regular_file(path)) throw CliError("missing_file", role + " file '" + path + "' does not exist", 2);
}

std::string file_digest(const std::string& path) { return sha256_hex(io::read_file(path)); }

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv) {
    j_["command"] = std::move(command);
    j_["argv"] = argv;
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
  }

  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void input(const std::string& role, const std::string& path) { j_["inputs"][role] = entry(path); }
  void output(const std::string& role, const std::string& path) { j_["outputs"][role] = entry(path); }

  void write(const std::string& path) const { io::write_file(path, j_.dump(2) + "\n"); }

 private:
  static json entry(const std::string& path) { return {{"path", path}, {"sha256", file_digest(path)}}; }
  json j_;
};

Model<double> load_model(const std::string& path) {
  require_file(path, "checkpoint");
  return instantiate<double>(read_checkpoint(path));
}

Dataset load_data(const std::string& path) {
  require_file(path, "data");
  return load_dataset(path);
}

void check_compatible(const Model<double>& m, const Dataset& d, const std::string& ckpt, const std::string& data) {
  if (d.sample_shape != m.input_shape()) {
    throw CliError("shape_mismatch",
                   "checkpoint '" + ckpt + "' expects samples of shape " + to_string(m.input_shape()) + " but '" +
                       data + "' holds samples of shape " + to_string(d.sample_shape),
                   1);
  }
  if (d.num_classes != m.num_classes()) {
    throw CliError("shape_mismatch",
                   "checkpoint '" + ckpt + "' has " + std::to_string(m.num_classes()) + " classes but '" + data +
                       "' has " + std::to_string(d.num_classes),
                   1);
  }
}

std::vector<std::size_t> parse_views(const std::string& s) {
  std::vector<std::size_t> out;
  auto number = [&](const std::string& t) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size() || t.empty() || v == 0) throw CliError("usage", "bad --views value '" + s + "'", 2);
    return static_cast<std::size_t>(v);
  };
  if (const auto dots = s.find(".."); dots != std::string::npos) {
    const auto lo = number(s.substr(0, dots)), hi = number(s.substr(dots + 2));
    if (lo > hi) throw CliError("usage", "bad --views range '" + s + "'", 2);
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(number(item));
  if (out.empty()) throw CliError("usage", "empty --views list", 2);
  return out;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct TaskOptions {
  std::string family = "two-moons";
  TaskSpec spec;

  void add(CLI::App* app) {
    app->add_option("--family", family, "two-moons | blobs | tiny-digits")->capture_default_str();
    app->add_option("--n", spec.n, "samples per domain")->capture_default_str();
    app->add_option("--rotation", spec.rotation_deg, "two-moons target rotation in degrees")->capture_default_str();
    app->add_option("--noise", spec.noise, "two-moons noise")->capture_default_str();
    app->add_option("--shift", spec.shift, "blobs mean shift in units of sigma")->capture_default_str();
    app->add_option("--classes", spec.classes, "blobs classes")->capture_default_str();
    app->add_option("--dim", spec.dim, "blobs dimension")->capture_default_str();
  }

  TaskSpec resolve() const {
    TaskSpec t = spec;
    try {
      t.family = family_from_string(family);
    } catch (const ValueError& e) {
      throw CliError("invalid_value", e.what(), 2);
    }
    return t;
  }
};

json task_json(const TaskSpec& t) {
  return {{"family", to_string(t.family)}, {"n", t.n},         {"rotation", t.rotation_deg}, {"noise", t.noise},
          {"shift", t.shift},              {"classes", t.classes}, {"dim", t.dim},              {"name", t.name()}};
}

/// Adaptation settings: built-in defaults, then the --config file, then flags.
struct AdaptOptions {
  std::string config;
  double alpha = 0, beta = 0, temperature = 0, lr = 0;
  int gamma = 0;
  std::size_t views = 0, epochs = 0, batch = 0, mc_samples = 0;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App* app, bool with_views = true) {
    opts["config"] = app->add_option("--config", config, "JSON config (or a run manifest) to start from");
    opts["alpha"] = app->add_option("--alpha", alpha, "weight of the feature consistency loss");
    opts["beta"] = app->add_option("--beta", beta, "weight of the entropy loss");
    opts["gamma"] = app->add_option("--gamma", gamma, "1 enables the epistemic loss, 0 disables it");
    if (with_views) opts["views"] = app->add_option("--views", views, "augmented views per sample");
    opts["temperature"] = app->add_option("--temperature", temperature, "pseudo-label temperature");
    opts["epochs"] = app->add_option("--epochs", epochs, "maximum adaptation epochs");
    opts["lr"] = app->add_option("--lr", lr, "learning rate");
    opts["batch"] = app->add_option("--batch", batch, "mini-batch size");
    opts["mc"] = app->add_option("--mc-samples", mc_samples, "MC dropout passes when gamma = 1");
  }

  bool given(const std::string& k) const {
    const auto it = opts.find(k);
    return it != opts.end() && it->second->count() > 0;
  }

  AdaptConfig resolve(std::optional<std::uint64_t> seed) const {
    AdaptConfig c;
    if (!config.empty()) {
      require_file(config, "config");
      json j;
      try {
        j = json::parse(io::read_file(config));
      } catch (const json::exception& e) {
        throw CliError("bad_config", "config '" + config + "' is not valid JSON: " + e.what(), 2);
      }
      if (j.contains("config")) j = j.at("config");
      try {
        merge_json(j, c);
      } catch (const json::exception& e) {
        throw CliError("bad_config", "config '" + config + "': " + e.what(), 2);
      }
    }
    if (given("alpha")) c.weights.alpha = alpha;
    if (given("beta")) c.weights.beta = beta;
    if (given("gamma")) c.weights.gamma = gamma;
    if (given("views")) c.views = views;
    if (given("temperature")) c.temperature = temperature;
    if (given("epochs")) c.max_epochs = epochs;
    if (given("lr")) c.optim.learning_rate = lr;
    if (given("batch")) c.batch_size = batch;
    if (given("mc")) c.mc_samples = mc_samples;
    if (seed) c.seed = *seed;
    try {
      c.validate();
    } catch (const ValueError& e) {
      throw CliError("invalid_value", e.what(), 2);
    }
    return c;
  }
};

std::string manifest_path(const std::string& explicit_path, const std::string& out) {
  return explicit_path.empty() ? out + ".manifest.json" : explicit_path;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenData {
  TaskOptions task;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_data(const GenData& o, const std::vector<std::string>& argv) {
  const auto t = o.task.resolve();
  TaskData data;
  try {
    data = prepare_task(t, o.seed);
  } catch (const ValueError& e) {
    throw CliError("invalid_value", e.what(), 2);
  }
  fs::create_directories(o.out);
  const auto path = [&](const char* name) { return (fs::path(o.out) / name).string(); };
  save_dataset(path("source.fdat"), data.source);
  save_dataset(path("target.fdat"), data.target);
  save_dataset(path("target_eval.fdat"), data.target_eval);

  Manifest m("gen-data", argv);
  m.set("seed", o.seed);
  m.set("config", task_json(t));
  m.output("source", path("source.fdat"));
  m.output("target", path("target.fdat"));
  m.output("target_eval", path("target_eval.fdat"));
  m.write(path("manifest.json"));
  std::cout << json{{"out", o.out}, {"task", t.name()}, {"n", data.source.size()}}.dump() << "\n";
  return 0;
}

struct Pretrain {
  std::string data, out, manifest;
  double label_smoothing = PretrainConfig{}.label_smoothing;
  std::size_t epochs = PretrainConfig{}.epochs;
  std::uint64_t seed = 0;
};

int run_pretrain(const Pretrain& o, const std::vector<std::string>& argv) {
  const auto d = load_data(o.data);
  PretrainConfig pc;
  pc.label_smoothing = o.label_smoothing;
  pc.epochs = o.epochs;
  pc.seed = o.seed;
  pc.dataset_id = fs::path(o.data).filename().string();
  if (!(pc.label_smoothing >= 0.0 && pc.label_smoothing < 1.0)) {
    throw CliError("invalid_value", "label smoothing must lie in [0, 1)", 2);
  }
  const auto r = pretrain_source<double>(d, pc);
  write_checkpoint(o.out, r.checkpoint);

  Manifest m("pretrain", argv);
  m.set("seed", o.seed);
  m.set("config", {{"label_smoothing", pc.label_smoothing},
                   {"epochs", pc.epochs},
                   {"batch_size", pc.batch_size},
                   {"val_fraction", pc.val_fraction},
                   {"optim", to_json(pc.optim)},
                   {"augment", to_json(pc.augment)}});
  m.input("data", o.data);
  m.output("checkpoint", o.out);
  m.set("result", {{"best_val_accuracy", r.best_val_accuracy}, {"best_epoch", r.best_epoch}});
  m.write(manifest_path(o.manifest, o.out));
  std::cout << json{{"out", o.out}, {"best_val_accuracy", r.best_val_accuracy}, {"best_epoch", r.best_epoch}}.dump()
            << "\n";
  return 0;
}

struct Adapt {
  AdaptOptions cfg;
  std::string source_ckpt, target_data, eval_data, out, log, manifest;
  std::uint64_t seed = 0;
  bool grid = false;
  bool select_with_labels = false;
  CLI::Option* seed_opt = nullptr;
};

/// Mean unweighted L_i + L_f + L_e over the last epoch; lower is better.
double selection_loss(const RunLog& log) {
  if (log.steps.empty()) return 0.0;
  const auto last = log.steps.back().epoch;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : log.steps) {
    if (s.epoch != last) continue;
    sum += s.report.inter + s.report.intra + s.report.entropy;
    ++n;
  }
  return sum / static_cast<double>(n);
}

int run_adapt(const Adapt& o, const std::vector<std::string>& argv) {
  AdaptConfig cfg = o.cfg.resolve(o.seed_opt->count() ? std::optional(o.seed) : std::nullopt);
  if (o.select_with_labels && !o.grid) throw CliError("usage", "--select-with-target-labels requires --grid", 2);
  if (o.select_with_labels && o.eval_data.empty()) {
    throw CliError("usage", "--select-with-target-labels needs a labeled split via --eval-data", 2);
  }
  const auto source = load_model(o.source_ckpt);
  const auto target = load_data(o.target_data);
  check_compatible(source, target, o.source_ckpt, o.target_data);
  std::optional<Dataset> eval;
  if (!o.eval_data.empty()) {
    eval = load_data(o.eval_data);
    check_compatible(source, *eval, o.source_ckpt, o.eval_data);
  }
  EpochProbe<double> probe;
  if (eval) probe = [&](const Model<double>& m) { return accuracy(m, *eval); };

  std::vector<std::pair<double, double>> candidates{{cfg.weights.alpha, cfg.weights.beta}};
  if (o.grid) candidates.assign(kAlphaBetaGrid.begin(), kAlphaBetaGrid.end());
  std::optional<AdaptResult<double>> best;
  AdaptConfig best_cfg = cfg;
  double best_score = 0.0;
  json grid = json::array();
  for (const auto& [a, b] : candidates) {
    AdaptConfig c = cfg;
    c.weights.alpha = a;
    c.weights.beta = b;
    auto r = adapt_run(source, target.unlabeled(), c, probe);
    const double score = o.select_with_labels ? -accuracy(r.model, *eval) : selection_loss(r.log);
    grid.push_back({{"alpha", a}, {"beta", b}, {"score", score}, {"epochs_run", r.epochs_run}});
    if (!best || score < best_score) {
      best_score = score;
      best_cfg = c;
      best = std::move(r);
    }
  }

  write_checkpoint(o.out, make_checkpoint(best->model, CheckpointMeta{best_cfg.seed, best->best_epoch,
                                                                      fs::path(o.target_data).filename().string(),
                                                                      false}));
  const std::string log_path = o.log.empty() ? o.out + ".runlog.jsonl" : o.log;
  io::write_file(log_path, best->log.to_jsonl());

  Manifest m("adapt", argv);
  m.set("seed", best_cfg.seed);
  m.set("config", to_json(best_cfg));
  m.input("source_checkpoint", o.source_ckpt);
  m.input("target_data", o.target_data);
  if (eval) m.input("eval_data", o.eval_data);
  m.output("checkpoint", o.out);
  m.output("runlog", log_path);
  if (o.grid) {
    m.set("grid", grid);
    m.set("selection", o.select_with_labels ? "target-label accuracy" : "unweighted last-epoch loss");
  }
  m.set("result", {{"epochs_run", best->epochs_run}, {"best_epoch", best->best_epoch}, {"early_stopped", best->early_stopped}});
  m.write(manifest_path(o.manifest, o.out));

  json summary{{"out", o.out},
               {"alpha", best_cfg.weights.alpha},
               {"beta", best_cfg.weights.beta},
               {"epochs_run", best->epochs_run},
               {"best_epoch", best->best_epoch}};
  if (eval) summary["target_accuracy"] = accuracy(best->model, *eval);
  std::cout << summary.dump() << "\n";
  return 0;
}

struct Eval {
  std::string ckpt, data, perturb = "none", manifest;
  std::uint64_t seed = 0;
};

int run_eval(const Eval& o, const std::vector<std::string>& argv) {
  Regime regime = Regime::none;
  if (o.perturb == "weak") regime = Regime::weak;
  else if (o.perturb == "strong") regime = Regime::strong;
  else if (o.perturb != "none") throw CliError("invalid_value", "--perturb must be none, weak or strong", 2);
  const auto model = load_model(o.ckpt);
  const auto data = load_data(o.data);
  check_compatible(model, data, o.ckpt, o.data);
  const double acc = evaluate(model, data, regime, o.seed);
  if (!o.manifest.empty()) {
    Manifest m("eval", argv);
    m.set("seed", o.seed);
    m.set("config", {{"perturb", o.perturb}});
    m.input("checkpoint", o.ckpt);
    m.input("data", o.data);
    m.set("result", {{"accuracy", acc}});
    m.write(o.manifest);
  }
  std::cout << json{{"accuracy", acc}, {"perturb", o.perturb}, {"n", data.size()}}.dump() << "\n";
  return 0;
}

struct Sweep {
  TaskOptions task;
  AdaptOptions cfg;
  std::vector<std::string> presets;
  std::string views = "1..5";
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::string out, manifest;
};

json accuracy_json(const PerturbedAccuracy& a) { return {{"none", a.none}, {"weak", a.weak}, {"strong", a.strong}}; }

/// Runs one adaptation per (row, repeat). Repeat r uses seed + r for data,
/// pretraining and adaptation; the source model is shared across rows.
int run_table(const std::string& command, const TaskSpec& t, const std::vector<std::pair<std::string, AdaptConfig>>& rows,
              const Sweep& o, const std::vector<std::string>& argv) {
  if (o.repeats == 0) throw CliError("usage", "--repeats must be at least 1", 2);
  std::vector<std::vector<double>> acc(rows.size());
  std::vector<double> source_acc;
  json trials = json::array();
  for (std::size_t r = 0; r < o.repeats; ++r) {
    const std::uint64_t seed = o.seed + r;
    const auto data = prepare_task(t, seed);
    const auto source = pretrain_for_task<double>(data, PretrainConfig{}, seed);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto tr = run_adaptation_trial(source, data, rows[i].second, seed);
      acc[i].push_back(tr.adapted.none);
      if (i == 0) source_acc.push_back(tr.source.none);
      trials.push_back({{"row", rows[i].first},
                        {"seed", seed},
                        {"source", accuracy_json(tr.source)},
                        {"adapted", accuracy_json(tr.adapted)},
                        {"epochs_run", tr.epochs_run}});
    }
  }
  std::vector<ReportRow> report;
  for (std::size_t i = 0; i < rows.size(); ++i) report.push_back({t.name(), rows[i].first, summarize(acc[i])});
  const auto csv = report_csv(report);
  io::write_file(o.out, csv);

  Manifest m(command, argv);
  m.set("seed", o.seed);
  json cfgs = json::object();
  for (const auto& [label, c] : rows) cfgs[label] = to_json(c);
  m.set("config", {{"task", task_json(t)}, {"repeats", o.repeats}, {"rows", cfgs}});
  m.set("trials", trials);
  const auto src = summarize(source_acc);
  m.set("source_only", {{"accuracy_mean", src.mean}, {"accuracy_std", src.std}});
  m.output("csv", o.out);
  m.write(manifest_path(o.manifest, o.out));
  std::cout << csv;
  return 0;
}

int run_ablate(const Sweep& o, const std::vector<std::string>& argv) {
  const auto t = o.task.resolve();
  const auto base = o.cfg.resolve(std::nullopt);
  std::vector<Preset> chosen;
  for (const auto& name : o.presets) {
    try {
      chosen.push_back(preset_from_string(name));
    } catch (const ValueError& e) {
      throw CliError("invalid_value", e.what(), 2);
    }
  }
  std::vector<std::pair<std::string, AdaptConfig>> rows;
  for (auto p : kAblationRows) {
    if (chosen.empty() || std::find(chosen.begin(), chosen.end(), p) != chosen.end()) {
      rows.emplace_back(row_label(p), apply_preset(base, p));
    }
  }
  return run_table("ablate", t, rows, o, argv);
}

int run_sweep_views(const Sweep& o, const std::vector<std::string>& argv) {
  const auto t = o.task.resolve();
  Preset preset = Preset::faust;
  if (!o.presets.empty()) {
    if (o.presets.size() > 1) throw CliError("usage", "sweep-views takes a single --preset", 2);
    try {
      preset = preset_from_string(o.presets.front());
    } catch (const ValueError& e) {
      throw CliError("invalid_value", e.what(), 2);
    }
  }
  const auto base = apply_preset(o.cfg.resolve(std::nullopt), preset);
  std::vector<std::pair<std::string, AdaptConfig>> rows;
  for (auto v : parse_views(o.views)) {
    AdaptConfig c = base;
    c.views = v;
    rows.emplace_back(row_label(preset) + " v=" + std::to_string(v), c);
  }
  return run_table("sweep-views", t, rows, o, argv);
}

int dispatch(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Source-free domain adaptation on toy tasks"};
  app.allow_extras();
  std::vector<std::pair<CLI::App*, CLI::Option*>> required;
  const auto need = [&](CLI::App* sub, CLI::Option* o) { required.emplace_back(sub, o); };

  GenData gen;
  auto* g = app.add_subcommand("gen-data", "generate source, target and held-out target split");
  gen.task.add(g);
  g->add_option("--seed", gen.seed)->capture_default_str();
  need(g, g->add_option("--out", gen.out, "output directory"));

  Pretrain pre;
  auto* p = app.add_subcommand("pretrain", "train the source model on labeled source data");
  need(p, p->add_option("--data", pre.data, "source .fdat"));
  p->add_option("--label-smoothing", pre.label_smoothing)->capture_default_str();
  p->add_option("--epochs", pre.epochs)->capture_default_str();
  p->add_option("--seed", pre.seed)->capture_default_str();
  need(p, p->add_option("--out", pre.out, "output .fckpt"));
  p->add_option("--manifest", pre.manifest, "manifest path (default <out>.manifest.json)");

  Adapt ad;
  auto* a = app.add_subcommand("adapt", "adapt a source checkpoint to unlabeled target data");
  need(a, a->add_option("--source-ckpt", ad.source_ckpt, "source .fckpt"));
  need(a, a->add_option("--target-data", ad.target_data, "target .fdat (labels are ignored)"));
  a->add_option("--eval-data", ad.eval_data, "separate labeled target split for per-epoch accuracy");
  ad.cfg.add(a);
  ad.seed_opt = a->add_option("--seed", ad.seed, "adaptation seed (overrides the config)");
  need(a, a->add_option("--out", ad.out, "output .fckpt"));
  a->add_option("--log", ad.log, "RunLog JSONL path (default <out>.runlog.jsonl)");
  a->add_option("--manifest", ad.manifest, "manifest path (default <out>.manifest.json)");
  a->add_flag("--grid", ad.grid, "sweep (alpha, beta) over the five-point grid");
  a->add_flag("--select-with-target-labels", ad.select_with_labels,
              "pick the grid point by accuracy on --eval-data (uses target labels)");

  Eval ev;
  auto* e = app.add_subcommand("eval", "accuracy of a checkpoint on a labeled dataset");
  need(e, e->add_option("--ckpt", ev.ckpt));
  need(e, e->add_option("--data", ev.data));
  e->add_option("--perturb", ev.perturb, "none | weak | strong")->capture_default_str();
  e->add_option("--seed", ev.seed, "perturbation seed")->capture_default_str();
  e->add_option("--manifest", ev.manifest, "write a manifest to this path");

  Sweep ab;
  auto* b = app.add_subcommand("ablate", "loss ablation table over repeats (CSV)");
  ab.task.add(b);
  ab.cfg.add(b);
  b->add_option("--preset", ab.presets, "rows to run (default: all five)");
  b->add_option("--repeats", ab.repeats)->capture_default_str();
  b->add_option("--seed", ab.seed, "first seed; repeat r uses seed + r")->capture_default_str();
  need(b, b->add_option("--out", ab.out, "output CSV"));
  b->add_option("--manifest", ab.manifest, "manifest path (default <out>.manifest.json)");

  Sweep sv;
  auto* s = app.add_subcommand("sweep-views", "accuracy against the number of views (CSV)");
  sv.task.add(s);
  sv.cfg.add(s, false);
  s->add_option("--views", sv.views, "range lo..hi or comma list")->capture_default_str();
  s->add_option("--preset", sv.presets, "preset to sweep (default faust)");
  s->add_option("--repeats", sv.repeats)->capture_default_str();
  s->add_option("--seed", sv.seed, "first seed; repeat r uses seed + r")->capture_default_str();
  need(s, s->add_option("--out", sv.out, "output CSV"));
  s->add_option("--manifest", sv.manifest, "manifest path (default <out>.manifest.json)");

  for (auto* sub : app.get_subcommands({})) sub->allow_extras();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& x) {
    return report_error("usage", x.what(), 2);
  }
  const auto chosen = app.get_subcommands();
  if (chosen.empty()) {
    if (!app.remaining().empty()) return report_error("unknown_command", "unknown subcommand '" + app.remaining().front() + "'", 2);
    return report_error("usage", "a subcommand is required (gen-data, pretrain, adapt, eval, ablate, sweep-views)", 2);
  }
  if (const auto extra = chosen.front()->remaining(); !extra.empty() || !app.remaining().empty()) {
    return report_error("unknown_flag", "unexpected argument '" + (extra.empty() ? app.remaining() : extra).front() + "'", 2);
  }
  for (const auto& [sub, o] : required) {
    if (sub == chosen.front() && o->count() == 0) return report_error("usage", o->get_name() + " is required", 2);
  }

  if (g->parsed()) return run_gen_data(gen, args);
  if (p->parsed()) return run_pretrain(pre, args);
  if (a->parsed()) return run_adapt(ad, args);
  if (e->parsed()) return run_eval(ev, args);
  if (b->parsed()) return run_ablate(ab, args);
  return run_sweep_views(sv, args);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const CliError& e) {
    return report_error(e.code, e.what(), e.exit_code);
  } catch (const MagicMismatch& e) {
    return report_error("bad_magic", e.what(), 1);
  } catch (const VersionMismatch& e) {
    return report_error("bad_version", e.what(), 1);
  } catch (const TruncatedFile& e) {
    return report_error("truncated_file", e.what(), 1);
  } catch (const FormatError& e) {
    return report_error("bad_format", e.what(), 1);
  } catch (const IoError& e) {
    return report_error("io", e.what(), 1);
  } catch (const ShapeError& e) {
    return report_error("shape_mismatch", e.what(), 1);
  } catch (const DivergenceError& e) {
    return report_error("divergence", e.what(), 1);
  } catch (const ConvergenceError& e) {
    return report_error("no_convergence", e.what(), 1);
  } catch (const ValueError& e) {
    return report_error("invalid_value", e.what(), 1);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
}
