#include "crackbench/cli.hpp"

#include "crackbench/serialize.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace crackbench::cli {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

fs::path anchor(const fs::path& p, const fs::path& base) {
  if (p.empty()) return p;
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

std::string mode_name(metrics::ToleranceMode m) { return m == metrics::ToleranceMode::diagonal ? "diag" : "abs"; }

metrics::ToleranceMode parse_mode(const std::string& s) {
  if (s == "diag" || s == "diagonal") return metrics::ToleranceMode::diagonal;
  if (s == "abs" || s == "absolute") return metrics::ToleranceMode::absolute;
  throw ConfigError("tolerance mode must be 'diag' or 'abs', got '" + s + "'");
}

Split split_or_throw(const std::string& s, const std::string& where) {
  try {
    return parse_split(s);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + where + "' must be train, val or test (got '" + s + "')");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void echo_config(const RunConfig& c) {
  fs::create_directories(c.run_dir);
  write_text(c.run_dir / "resolved_config.json", resolved_json(c) + "\n");
}

std::string iter_name(int it) {
  std::ostringstream ss;
  ss << "iter_" << std::setw(6) << std::setfill('0') << it << ".json";
  return ss.str();
}

}  // namespace

fs::path run_root_from_env() {
  const char* env = std::getenv("CRACKBENCH_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

RunConfig resolve_config(const std::string& command, const std::string& config_text, const fs::path& base_dir,
                         const fs::path& run_root, const Overrides& overrides) {
  json j;
  try {
    j = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "run_dir", "model", "train", "metrics", "manifest", "predict", "datasets", "synth"});

  RunConfig c;
  c.command = command;
  read_opt(j, "seed", c.seed, "config");
  if (overrides.seed) c.seed = *overrides.seed;

  std::string run_dir = command;
  read_opt(j, "run_dir", run_dir, "config");
  c.run_dir = fs::path(run_dir).is_absolute() ? fs::path(run_dir) : fs::absolute(run_root / run_dir);
  c.run_dir = c.run_dir.lexically_normal();

  const json model = j.value("model", json::object());
  check_keys(model, "model",
             {"preset", "pyramid", "stage_channels", "convs_per_stage", "merge_channels", "input_channels", "init_std",
              "he_backbone", "input_mean"});
  read_opt(model, "preset", c.model_preset, "model");
  if (c.model_preset == "tiny")
    c.model = ModelConfig::tiny();
  else if (c.model_preset == "paper")
    c.model = ModelConfig::paper();
  else
    throw ConfigError("config: model.preset must be 'tiny' or 'paper'");
  read_opt(model, "pyramid", c.model.pyramid, "model");
  read_opt(model, "stage_channels", c.model.stage_channels, "model");
  read_opt(model, "convs_per_stage", c.model.convs_per_stage, "model");
  read_opt(model, "merge_channels", c.model.merge_channels, "model");
  read_opt(model, "input_channels", c.model.input_channels, "model");
  read_opt(model, "init_std", c.model.init_std, "model");
  read_opt(model, "he_backbone", c.model.he_backbone, "model");
  read_opt(model, "input_mean", c.model.input_mean, "model");

  const json train = j.value("train", json::object());
  check_keys(train, "train",
             {"preset", "batch_size", "lr", "momentum", "weight_decay", "total_iters", "lr_drop_every",
              "lr_drop_factor", "snapshot_every", "boosting", "detach_weights", "normalize_weights"});
  read_opt(train, "preset", c.train_preset, "train");
  if (c.train_preset == "tiny")
    c.train = TrainConfig::tiny();
  else if (c.train_preset == "paper")
    c.train = TrainConfig::paper();
  else
    throw ConfigError("config: train.preset must be 'tiny' or 'paper'");
  read_opt(train, "batch_size", c.train.batch_size, "train");
  read_opt(train, "lr", c.train.lr, "train");
  read_opt(train, "momentum", c.train.momentum, "train");
  read_opt(train, "weight_decay", c.train.weight_decay, "train");
  read_opt(train, "total_iters", c.train.total_iters, "train");
  read_opt(train, "lr_drop_every", c.train.lr_drop_every, "train");
  read_opt(train, "lr_drop_factor", c.train.lr_drop_factor, "train");
  read_opt(train, "snapshot_every", c.train.snapshot_every, "train");
  read_opt(train, "boosting", c.loss.boosting, "train");
  read_opt(train, "detach_weights", c.loss.detach_weights, "train");
  read_opt(train, "normalize_weights", c.loss.normalize_weights, "train");
  c.train.seed = c.seed;

  const json met = j.value("metrics", json::object());
  check_keys(met, "metrics", {"tolerance", "tolerance_mode"});
  read_opt(met, "tolerance", c.tolerance.value, "metrics");
  std::string mode = "diag";
  read_opt(met, "tolerance_mode", mode, "metrics");
  if (overrides.tolerance_mode) mode = *overrides.tolerance_mode;
  c.tolerance.mode = parse_mode(mode);
  if (!(c.tolerance.value > 0)) throw ConfigError("config: metrics.tolerance must be positive");

  std::string manifest;
  read_opt(j, "manifest", manifest, "config");
  c.manifest = anchor(manifest, base_dir);

  const json pred = j.value("predict", json::object());
  check_keys(pred, "predict", {"snapshot", "split", "inputs", "sides", "float_sidecar"});
  std::string snapshot, split = "test";
  std::vector<std::string> inputs;
  read_opt(pred, "snapshot", snapshot, "predict");
  read_opt(pred, "split", split, "predict");
  read_opt(pred, "inputs", inputs, "predict");
  read_opt(pred, "sides", c.sides, "predict");
  read_opt(pred, "float_sidecar", c.float_sidecar, "predict");
  c.sides = c.sides || overrides.sides;
  c.snapshot = anchor(snapshot, base_dir);
  c.predict_split = split_or_throw(split, "predict.split");
  for (const auto& in : inputs) c.inputs.push_back(anchor(in, base_dir));

  if (j.contains("datasets")) {
    if (!j["datasets"].is_array()) throw ConfigError("config: 'datasets' must be an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < j["datasets"].size(); ++i) {
      const json& d = j["datasets"][i];
      const std::string where = "datasets[" + std::to_string(i) + "]";
      check_keys(d, where, {"name", "manifest", "split", "predictions", "format"});
      if (!d.contains("manifest") || !d.contains("predictions"))
        throw ConfigError("config: " + where + " needs both 'manifest' and 'predictions'");
      DatasetSpec spec;
      std::string m, p, s = "test";
      read_opt(d, "manifest", m, where);
      read_opt(d, "predictions", p, where);
      read_opt(d, "split", s, where);
      read_opt(d, "format", spec.format, where);
      spec.manifest = anchor(m, base_dir);
      spec.predictions = anchor(p, base_dir);
      spec.split = split_or_throw(s, where + ".split");
      spec.name = spec.manifest.stem().string();
      read_opt(d, "name", spec.name, where);
      if (spec.format != "png" && spec.format != "pfm")
        throw ConfigError("config: " + where + ".format must be 'png' or 'pfm'");
      if (!names.insert(spec.name).second) throw ConfigError("config: duplicate dataset name '" + spec.name + "'");
      c.datasets.push_back(std::move(spec));
    }
  }

  const json syn = j.value("synth", json::object());
  check_keys(syn, "synth",
             {"size", "train", "val", "test", "width", "curvature", "contrast", "noise", "shadow", "texture"});
  read_opt(syn, "size", c.synth.size, "synth");
  read_opt(syn, "train", c.synth.n_train, "synth");
  read_opt(syn, "val", c.synth.n_val, "synth");
  read_opt(syn, "test", c.synth.n_test, "synth");
  read_opt(syn, "width", c.synth.params.width, "synth");
  read_opt(syn, "curvature", c.synth.params.curvature, "synth");
  read_opt(syn, "contrast", c.synth.params.contrast, "synth");
  read_opt(syn, "noise", c.synth.params.noise, "synth");
  read_opt(syn, "shadow", c.synth.params.shadow, "synth");
  read_opt(syn, "texture", c.synth.params.texture, "synth");

  try {
    c.model.validate();
    c.train.validate();
    if (command == "synth") {
      c.synth.params.validate(c.synth.size);
      if (c.synth.n_train < 0 || c.synth.n_val < 0 || c.synth.n_test < 0)
        throw std::invalid_argument("synth: sample counts must be >= 0");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

std::string resolved_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["seed"] = c.seed;
  j["run_dir"] = c.run_dir.string();
  j["model"] = json::parse(config_to_json(c.model));
  j["model"]["preset"] = c.model_preset;
  j["train"] = {{"preset", c.train_preset},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"total_iters", c.train.total_iters},
                {"lr_drop_every", c.train.lr_drop_every},
                {"lr_drop_factor", c.train.lr_drop_factor},
                {"snapshot_every", c.train.snapshot_every},
                {"boosting", c.loss.boosting},
                {"detach_weights", c.loss.detach_weights},
                {"normalize_weights", c.loss.normalize_weights}};
  j["metrics"] = {{"tolerance", c.tolerance.value}, {"tolerance_mode", mode_name(c.tolerance.mode)}};
  j["manifest"] = c.manifest.string();
  json inputs = json::array();
  for (const auto& p : c.inputs) inputs.push_back(p.string());
  j["predict"] = {{"snapshot", c.snapshot.string()},
                  {"split", to_string(c.predict_split)},
                  {"inputs", inputs},
                  {"sides", c.sides},
                  {"float_sidecar", c.float_sidecar}};
  json ds = json::array();
  for (const auto& d : c.datasets)
    ds.push_back({{"name", d.name},
                  {"manifest", d.manifest.string()},
                  {"split", to_string(d.split)},
                  {"predictions", d.predictions.string()},
                  {"format", d.format}});
  j["datasets"] = ds;
  const auto& sp = c.synth.params;
  j["synth"] = {{"size", c.synth.size},   {"train", c.synth.n_train},     {"val", c.synth.n_val},
                {"test", c.synth.n_test}, {"width", sp.width},            {"curvature", sp.curvature},
                {"contrast", sp.contrast}, {"noise", sp.noise},           {"shadow", sp.shadow},
                {"texture", sp.texture}};
  return j.dump(2);
}

void cmd_train(const RunConfig& c, std::ostream& log) {
  if (c.manifest.empty()) throw ConfigError("train: config field 'manifest' is required");
  const DatasetManifest manifest = load_manifest(c.manifest);
  if (manifest.split(Split::train).empty())
    throw ConfigError("train: manifest '" + c.manifest.string() + "' has no entries with \"split\": \"train\"");
  if (manifest.split(Split::val).empty())
    throw ConfigError("train: manifest '" + c.manifest.string() +
                      "' has no entries with \"split\": \"val\" (needed for model selection)");
  const auto train_set = load_split(manifest, Split::train);
  const auto val_set = load_split(manifest, Split::val);
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      if (s.image.shape().c != c.model.input_channels)
        throw ConfigError("train: image '" + s.id + "' has " + std::to_string(s.image.shape().c) +
                          " channels but model.input_channels is " + std::to_string(c.model.input_channels));

  echo_config(c);
  const fs::path snap_dir = c.run_dir / "snapshots";
  fs::create_directories(snap_dir);
  log << "train: " << train_set.size() << " training / " << val_set.size() << " validation samples, "
      << c.train.total_iters << " iterations, seed " << c.seed << "\n";

  TrainHooks hooks;
  const int every = std::max(1, c.train.total_iters / 10);
  hooks.on_iteration = [&](const LossTraceRow& r) {
    if (r.iteration % every == 0 || r.iteration == 1)
      log << "  iter " << r.iteration << "  lr " << r.lr << "  loss " << r.loss.total << "\n";
  };

  TrainResult result;
  try {
    result = train(init_params<float>(c.model, c.seed), train_set, c.train, c.loss, hooks);
  } catch (const TrainingDiverged& e) {
    std::ofstream trace(c.run_dir / "loss_trace.csv", std::ios::binary);
    write_loss_trace_csv(trace, e.trace);
    if (e.last_good) save_snapshot(snap_dir / "last_good.json", *e.last_good);
    throw;
  }
  if (result.skipped_samples > 0) log << "train: skipped " << result.skipped_samples << " samples without cracks\n";

  {
    std::ofstream trace(c.run_dir / "loss_trace.csv", std::ios::binary);
    write_loss_trace_csv(trace, result.trace);
  }

  const Selection sel = select_best_model(result.snapshots, val_set);
  std::ofstream curve(c.run_dir / "val_aiu.csv", std::ios::binary);
  curve << "iteration,val_aiu\n" << std::setprecision(9);
  for (const auto& [it, aiu] : sel.aiu_curve) curve << it << ',' << aiu << '\n';
  for (const auto& s : result.snapshots) save_snapshot(snap_dir / iter_name(s.iteration), s);

  const Snapshot& best = result.snapshots[sel.index];
  fs::copy_file(snap_dir / iter_name(best.iteration), c.run_dir / "best_snapshot.json",
                fs::copy_options::overwrite_existing);
  json marker = {{"iteration", best.iteration},
                 {"snapshot", (fs::path("snapshots") / iter_name(best.iteration)).string()},
                 {"val_aiu", *best.val_aiu}};
  write_text(c.run_dir / "best.json", marker.dump(2) + "\n");
  log << "train: best snapshot iteration " << best.iteration << " (validation AIU " << *best.val_aiu << ")\n";
}

void cmd_predict(const RunConfig& c, std::ostream& log) {
  if (c.snapshot.empty()) throw ConfigError("predict: config field 'predict.snapshot' is required");
  const Snapshot snap = load_snapshot(c.snapshot);

  std::vector<std::pair<std::string, fs::path>> inputs;
  if (!c.inputs.empty()) {
    for (const auto& p : c.inputs) inputs.emplace_back(p.stem().string(), p);
  } else if (!c.manifest.empty()) {
    for (const auto& e : load_manifest(c.manifest).split(c.predict_split))
      inputs.emplace_back(e.image.stem().string(), e.image);
  } else {
    throw ConfigError("predict: set 'predict.inputs' or 'manifest'");
  }
  if (inputs.empty()) throw ConfigError("predict: no input images");
  std::set<std::string> ids;
  for (const auto& [id, _] : inputs)
    if (!ids.insert(id).second) throw ConfigError("predict: two inputs share the id '" + id + "'");

  echo_config(c);
  const fs::path out = c.run_dir / "predictions";
  fs::create_directories(out);
  for (const auto& [id, path] : inputs) {
    const Tensorf image = image8_to_tensor(read_png(path));
    if (image.shape().c != snap.params.config.input_channels)
      throw std::runtime_error("predict: '" + path.string() + "' has " + std::to_string(image.shape().c) +
                               " channels, the model expects " + std::to_string(snap.params.config.input_channels));
    const ImagePrediction p = predict_image(snap.params, image);
    if (p.padded)
      log << "predict: " << id << " is " << image.shape().w << "x" << image.shape().h
          << ", padded to a multiple of 16 and cropped back\n";
    write_png(out / (id + "_fuse.png"), prob_to_image8(p.fused));
    if (c.float_sidecar) write_pfm(out / (id + "_fuse.pfm"), p.fused);
    if (c.sides)
      for (int m = 0; m < kNumSides; ++m) {
        const std::string name = id + "_side" + std::to_string(m + 1);
        write_png(out / (name + ".png"), prob_to_image8(p.sides[static_cast<std::size_t>(m)]));
        if (c.float_sidecar) write_pfm(out / (name + ".pfm"), p.sides[static_cast<std::size_t>(m)]);
      }
  }
  log << "predict: wrote " << inputs.size() << " prediction sets to " << out.string() << "\n";
}

void cmd_eval(const RunConfig& c, std::ostream& log, bool curves_only) {
  if (c.datasets.empty()) throw ConfigError("eval: config field 'datasets' is required");

  // Resolve every prediction path first so missing files are reported together.
  struct Item {
    std::string id;
    fs::path pred, mask;
  };
  std::vector<std::vector<Item>> items;
  std::vector<std::string> missing;
  for (const auto& d : c.datasets) {
    auto& list = items.emplace_back();
    const auto entries = load_manifest(d.manifest).split(d.split);
    if (entries.empty()) throw ConfigError("eval: dataset '" + d.name + "' has no " + to_string(d.split) + " entries");
    for (const auto& e : entries) {
      const std::string id = e.image.stem().string();
      fs::path pred = d.predictions / (id + "_fuse." + d.format);
      if (!fs::exists(pred)) pred = d.predictions / (id + "." + d.format);
      if (!fs::exists(pred)) missing.push_back(d.name + ": " + (d.predictions / (id + "_fuse." + d.format)).string());
      list.push_back({id, pred, e.mask});
    }
  }
  if (!missing.empty()) {
    std::string msg = "eval: " + std::to_string(missing.size()) + " predictions missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw std::runtime_error(msg);
  }

  echo_config(c);
  std::vector<metrics::MetricReport> reports;
  for (std::size_t k = 0; k < c.datasets.size(); ++k) {
    const auto& d = c.datasets[k];
    std::vector<metrics::ImageEval> evals;
    for (const auto& it : items[k]) {
      const ProbMap pred = d.format == "pfm" ? read_pfm(it.pred) : image8_to_prob(read_png(it.pred));
      const BinaryMap gt = binarize_mask(read_png(it.mask));
      if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
        throw std::runtime_error("eval: prediction '" + it.pred.string() + "' is " + std::to_string(pred.cols()) +
                                 "x" + std::to_string(pred.rows()) + ", ground truth is " +
                                 std::to_string(gt.cols()) + "x" + std::to_string(gt.rows()));
      evals.push_back(metrics::evaluate_image(it.id, pred, gt, c.tolerance));
    }
    const auto report = metrics::aggregate(d.name, evals);
    const fs::path dir = c.run_dir / d.name;
    fs::create_directories(dir);
    {
      std::ofstream csv(dir / "curve.csv", std::ios::binary);
      metrics::write_curve_csv(csv, report);
    }
    if (!curves_only) write_text(dir / "report.json", metrics::report_json(report) + "\n");
    log << std::fixed << std::setprecision(3) << d.name << ": AIU " << report.aiu << "  ODS " << report.ods
        << "  OIS " << report.ois << "  (" << report.n_images << " images)\n";
    log.unsetf(std::ios::floatfield);
    reports.push_back(report);
  }

  if (curves_only || reports.size() < 2) return;
  json summary;
  json per = json::array();
  for (const auto& r : reports) per.push_back({{"dataset", r.dataset}, {"aiu", r.aiu}, {"ods", r.ods}, {"ois", r.ois}});
  summary["datasets"] = per;
  std::ofstream csv(c.run_dir / "summary.csv", std::ios::binary);
  csv << "metric,mean,std\n" << std::setprecision(9);
  for (const char* metric : {"aiu", "ods", "ois"}) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(std::string(metric) == "aiu" ? r.aiu : metric[1] == 'd' ? r.ods : r.ois);
    const auto ms = metrics::cross_dataset_stats(v);
    summary[metric] = {{"mean", ms.mean}, {"std", ms.std}};
    csv << metric << ',' << ms.mean << ',' << ms.std << '\n';
    log << std::fixed << std::setprecision(3) << metric << ": " << ms.mean << " +/- " << ms.std << "\n";
    log.unsetf(std::ios::floatfield);
  }
  write_text(c.run_dir / "summary.json", summary.dump(2) + "\n");
}

void cmd_synth(const RunConfig& c, std::ostream& log) {
  echo_config(c);
  fs::create_directories(c.run_dir / "images");
  fs::create_directories(c.run_dir / "masks");
  DatasetManifest manifest;
  manifest.provenance = "synthetic cracks, seed " + std::to_string(c.seed);
  int index = 0;
  for (auto [split, count] : {std::pair{Split::train, c.synth.n_train}, std::pair{Split::val, c.synth.n_val},
                              std::pair{Split::test, c.synth.n_test}})
    for (int i = 0; i < count; ++i, ++index) {
      const auto sc = synth_crack(c.seed * 1000003ULL + static_cast<std::uint64_t>(index), c.synth.size, c.synth.params);
      std::ostringstream name;
      name << to_string(split) << '_' << std::setw(3) << std::setfill('0') << i << ".png";
      const fs::path img = c.run_dir / "images" / name.str(), mask = c.run_dir / "masks" / name.str();
      save_sample(sc.sample, img, mask);
      manifest.entries.push_back({img, mask, split});
    }
  save_manifest(c.run_dir / "manifest.json", manifest);
  log << "synth: wrote " << index << " samples and " << (c.run_dir / "manifest.json").string() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"crackbench: FPHBN crack detection training, prediction and evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  bool sides = false;
  std::string mode;
  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {{"train", "train a model and select the best snapshot on the validation split"},
                      {"predict", "write probability maps for a snapshot"},
                      {"eval", "score prediction maps: AIU, ODS, OIS, curves and cross-dataset summary"},
                      {"curves", "write IU/PR curve CSVs only"},
                      {"synth", "generate a synthetic crack dataset with a manifest"}};
  std::vector<CLI::App*> subs;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_flag("--sides", sides, "also write the five side-output maps (predict)");
    sub->add_option("--tolerance-mode", mode, "matching tolerance: diag or abs")->check(CLI::IsMember({"diag", "abs"}));
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  std::string command;
  bool seed_given = false;
  for (auto* sub : subs)
    if (sub->parsed()) {
      command = sub->get_name();
      seed_given = sub->get_option("--seed")->count() > 0;
    }

  try {
    std::ifstream in(config_path, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    Overrides ov;
    if (seed_given) ov.seed = seed;
    ov.sides = sides;
    if (!mode.empty()) ov.tolerance_mode = mode;
    const RunConfig c = resolve_config(command, text.str(), fs::absolute(config_path).parent_path(),
                                       run_root_from_env(), ov);
    if (command == "train")
      cmd_train(c, std::cout);
    else if (command == "predict")
      cmd_predict(c, std::cout);
    else if (command == "eval")
      cmd_eval(c, std::cout);
    else if (command == "curves")
      cmd_eval(c, std::cout, true);
    else
      cmd_synth(c, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.last_good) std::cerr << "last good snapshot: iteration " << e.last_good->iteration << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace crackbench::cli
