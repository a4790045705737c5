#include <doctest.h>

#include "crackbench/cli.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace crackbench;
using namespace crackbench::cli;
using nlohmann::json;

namespace {

const fs::path kFixtures = CRACKBENCH_FIXTURES;

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("crackbench_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
  const fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "crackbench");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(int(argv.size()), argv.data());
}

RunConfig resolve(const std::string& cmd, const json& j, const fs::path& dir, const Overrides& ov = {}) {
  return resolve_config(cmd, j.dump(), dir, dir / "runs", ov);
}

// Synthetic dataset under dir/runs/<name> via the synth command.
fs::path make_dataset(const fs::path& dir, const std::string& name, std::uint64_t seed, int n_train, int n_val, int n_test,
                      int size = 64) {
  const auto c = resolve("synth", {{"seed", seed}, {"run_dir", name}, {"synth", {{"size", size}, {"train", n_train}, {"val", n_val}, {"test", n_test}}}}, dir);
  std::ostringstream log;
  cmd_synth(c, log);
  return c.run_dir / "manifest.json";
}

}  // namespace

TEST_CASE("resolve_config: defaults, presets and overrides") {
  const auto dir = scratch("resolve");
  const auto c = resolve("train", json::object(), dir);
  CHECK(c.seed == 0);
  CHECK(c.run_dir == (dir / "runs" / "train").lexically_normal());
  CHECK(c.model_preset == "tiny");
  CHECK(c.train.total_iters == TrainConfig::tiny().total_iters);
  CHECK(c.loss.boosting);
  CHECK(c.tolerance.mode == metrics::ToleranceMode::diagonal);

  const auto p = resolve("train", {{"seed", 5}, {"model", {{"preset", "paper"}, {"pyramid", false}}}, {"train", {{"preset", "paper"}, {"boosting", false}}},
                                   {"manifest", "data/m.json"}, {"run_dir", "a/../b"}},
                         dir, Overrides{11, true, "abs"});
  CHECK(p.seed == 11);
  CHECK(p.train.seed == 11);
  CHECK(p.model.stage_channels[0] == 64);
  CHECK_FALSE(p.model.pyramid);
  CHECK(p.train.batch_size == 10);
  CHECK_FALSE(p.loss.boosting);
  CHECK(p.manifest == dir / "data/m.json");
  CHECK(p.run_dir == dir / "runs" / "b");
  CHECK(p.sides);
  CHECK(p.tolerance.mode == metrics::ToleranceMode::absolute);

  // The resolved config parses back as JSON and records the effective seed.
  CHECK(json::parse(resolved_json(p))["seed"] == 11);
}

TEST_CASE("resolve_config: errors name the offending field") {
  const auto dir = scratch("errors");
  CHECK_THROWS_WITH_AS(resolve("train", {{"trian", {}}}, dir), doctest::Contains("trian"), ConfigError);
  CHECK_THROWS_WITH_AS(resolve("train", {{"train", {{"lr", "fast"}}}}, dir), doctest::Contains("lr"), ConfigError);
  CHECK_THROWS_WITH_AS(resolve("train", {{"model", {{"preset", "huge"}}}}, dir), doctest::Contains("preset"), ConfigError);
  CHECK_THROWS_AS(resolve("train", {{"train", {{"momentum", 1.5}}}}, dir), ConfigError);
  CHECK_THROWS_AS(resolve("eval", {{"metrics", {{"tolerance_mode", "manhattan"}}}}, dir), ConfigError);
  CHECK_THROWS_AS(resolve("eval", {{"datasets", {{{"name", "x"}}}}}, dir), ConfigError);
  CHECK_THROWS_AS(resolve("synth", {{"synth", {{"width", -1}}}}, dir), ConfigError);
}

TEST_CASE("synth then train writes the run artifacts") {
  const auto dir = scratch("train");
  const auto manifest = make_dataset(dir, "data", 3, 3, 1, 0);
  auto c = resolve("train", {{"seed", 2}, {"manifest", manifest.string()}, {"train", {{"total_iters", 8}, {"snapshot_every", 4}}}}, dir);
  std::ostringstream log;
  cmd_train(c, log);
  for (const char* f : {"resolved_config.json", "loss_trace.csv", "val_aiu.csv", "best.json", "best_snapshot.json",
                        "snapshots/iter_000004.json", "snapshots/iter_000008.json"})
    CHECK_MESSAGE(fs::exists(c.run_dir / f), f);
  const auto best = json::parse(slurp(c.run_dir / "best.json"));
  std::istringstream curve(slurp(c.run_dir / "val_aiu.csv"));
  std::string line;
  std::getline(curve, line);
  CHECK(line == "iteration,val_aiu");
  std::vector<int> iters;
  std::vector<double> aius;
  while (std::getline(curve, line)) {
    iters.push_back(std::stoi(line.substr(0, line.find(','))));
    aius.push_back(std::stod(line.substr(line.find(',') + 1)));
  }
  CHECK(iters == std::vector<int>{4, 8});
  CHECK(best["iteration"] == iters[argmax_late_tie(aius)]);
  const auto snap = snapshot_from_json(slurp(c.run_dir / "best_snapshot.json"));
  CHECK(snap.val_aiu.has_value());

  // No validation split: the error says which split is needed.
  const auto no_val = make_dataset(dir, "noval", 3, 2, 0, 0);
  c.manifest = no_val;
  CHECK_THROWS_WITH_AS(cmd_train(c, log), doctest::Contains("\"split\": \"val\""), ConfigError);
}

TEST_CASE("exit codes") {
  const auto dir = scratch("exit");
  setenv("CRACKBENCH_RUN_ROOT", (dir / "runs").c_str(), 1);
  CHECK(run_cli({"train"}) == 2);
  CHECK(run_cli({"train", "--config", (dir / "absent.json").string()}) == 2);
  CHECK(run_cli({"train", "--config", write_config(dir, "bad.json", {{"bogus", 1}}).string()}) == 2);
  CHECK(run_cli({"eval", "--config", write_config(dir, "noeval.json", json::object()).string()}) == 2);

  const auto manifest = make_dataset(dir, "data", 1, 2, 1, 0);
  const auto diverge = write_config(dir, "diverge.json", {{"manifest", manifest.string()}, {"run_dir", "diverge"},
                                                          {"train", {{"lr", 1e4}, {"total_iters", 60}, {"snapshot_every", 1}}}});
  CHECK(run_cli({"train", "--config", diverge.string()}) == 3);
  CHECK(fs::exists(dir / "runs" / "diverge" / "loss_trace.csv"));

  const auto synth = write_config(dir, "synth.json", {{"run_dir", "s"}, {"synth", {{"size", 32}, {"train", 1}, {"val", 0}, {"test", 0}}}});
  CHECK(run_cli({"synth", "--config", synth.string(), "--seed", "4"}) == 0);
  CHECK(json::parse(slurp(dir / "runs" / "s" / "resolved_config.json"))["seed"] == 4);
  unsetenv("CRACKBENCH_RUN_ROOT");
}

TEST_CASE("predict: untrained sides give uniform maps at the input size") {
  const auto dir = scratch("predict");
  std::ofstream(dir / "snap.json") << snapshot_to_json({0, init_params<float>(ModelConfig::tiny(), 1), std::nullopt});
  Image8 img{50, 70, 1, std::vector<std::uint8_t>(50 * 70)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t(i * 37 % 256);
  write_png(dir / "odd.png", img);

  auto c = resolve("predict", {{"predict", {{"snapshot", "snap.json"}, {"inputs", {"odd.png"}}, {"float_sidecar", true}}}}, dir,
                   Overrides{std::nullopt, true, std::nullopt});
  std::ostringstream log;
  cmd_predict(c, log);
  CHECK(log.str().find("padded") != std::string::npos);
  const fs::path out = c.run_dir / "predictions";
  const auto fuse = read_png(out / "odd_fuse.png");
  CHECK(fuse.height == 50);
  CHECK(fuse.width == 70);
  for (auto v : fuse.pixels) CHECK(v == 128);
  for (int m = 1; m <= 5; ++m) CHECK(fs::exists(out / ("odd_side" + std::to_string(m) + ".png")));
  CHECK((read_pfm(out / "odd_fuse.pfm").array() == 0.5).all());

  c.inputs = {dir / "odd.png", dir / "odd.png"};
  CHECK_THROWS_AS(cmd_predict(c, log), ConfigError);
  c.snapshot = dir / "nothing.json";
  CHECK_THROWS(cmd_predict(c, log));
}

TEST_CASE("eval: perfect, empty and missing predictions") {
  const auto dir = scratch("eval");
  const auto manifest = make_dataset(dir, "data", 9, 0, 0, 10);
  const auto entries = load_manifest(manifest).split(Split::test);
  fs::create_directories(dir / "perfect");
  fs::create_directories(dir / "zeros");
  std::vector<metrics::ImageEval> direct;
  for (const auto& e : entries) {
    const auto mask = read_png(e.mask);
    write_png(dir / "perfect" / (e.image.stem().string() + "_fuse.png"), mask);
    write_png(dir / "zeros" / (e.image.stem().string() + ".png"), Image8{mask.height, mask.width, 1, std::vector<std::uint8_t>(mask.pixels.size(), 0)});
    direct.push_back(metrics::evaluate_image(e.image.stem().string(), image8_to_prob(mask), binarize_mask(mask)));
  }

  auto c = resolve("eval", {{"datasets", {{{"name", "perfect"}, {"manifest", manifest.string()}, {"predictions", "perfect"}},
                                          {{"name", "zeros"}, {"manifest", manifest.string()}, {"predictions", "zeros"}}}}},
                   dir);
  std::ostringstream log;
  cmd_eval(c, log);
  const auto perfect = json::parse(slurp(c.run_dir / "perfect" / "report.json"));
  CHECK(perfect["aiu"] == 1.0);
  CHECK(perfect["ods"].get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(perfect["ois"].get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(perfect["n_images"] == 10);
  const auto zeros = json::parse(slurp(c.run_dir / "zeros" / "report.json"));
  CHECK(zeros["aiu"] == 0.0);
  CHECK(zeros["ods"] == 0.0);

  // The report is exactly what the library computes directly.
  CHECK(slurp(c.run_dir / "perfect" / "report.json") == metrics::report_json(metrics::aggregate("perfect", direct)) + "\n");
  std::ostringstream curve;
  metrics::write_curve_csv(curve, metrics::aggregate("perfect", direct));
  CHECK(slurp(c.run_dir / "perfect" / "curve.csv") == curve.str());

  const auto summary = json::parse(slurp(c.run_dir / "summary.json"));
  CHECK(summary["aiu"]["mean"] == 0.5);
  CHECK(summary["aiu"]["std"].get<double>() == doctest::Approx(std::sqrt(0.5)));
  CHECK(slurp(c.run_dir / "summary.csv").rfind("metric,mean,std\n", 0) == 0);

  // Every missing file is listed, not just the first.
  fs::remove(dir / "zeros" / (entries[2].image.stem().string() + ".png"));
  fs::remove(dir / "zeros" / (entries[7].image.stem().string() + ".png"));
  try {
    cmd_eval(c, log);
    FAIL("expected missing predictions");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2 predictions missing") != std::string::npos);
    CHECK(msg.find(entries[2].image.stem().string()) != std::string::npos);
    CHECK(msg.find(entries[7].image.stem().string()) != std::string::npos);
  }

  // curves writes only the CSVs.
  auto cc = resolve("curves", {{"datasets", {{{"name", "perfect"}, {"manifest", manifest.string()}, {"predictions", "perfect"}}}}}, dir);
  cmd_eval(cc, log, true);
  CHECK(fs::exists(cc.run_dir / "perfect" / "curve.csv"));
  CHECK_FALSE(fs::exists(cc.run_dir / "perfect" / "report.json"));
}

TEST_CASE("regression fixture: committed snapshot and predictions reproduce byte for byte") {
  const fs::path fx = kFixtures / "regression";
  const auto dir = scratch("regression");
  std::ostringstream log;

  const auto pc = resolve_config("predict", slurp(fx / "predict.json"), fx, dir);
  cmd_predict(pc, log);
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(fx / "expected")) {
    const fs::path got = pc.run_dir / "predictions" / entry.path().filename();
    REQUIRE_MESSAGE(fs::exists(got), got.string());
    CHECK_MESSAGE(slurp(got) == slurp(entry.path()), entry.path().filename().string());
    ++compared;
  }
  CHECK(compared == 12);

  const auto tc = resolve_config("train", slurp(fx / "train.json"), fx, dir);
  cmd_train(tc, log);
  CHECK(slurp(tc.run_dir / "loss_trace.csv") == slurp(fx / "expected_loss_trace.csv"));
  CHECK(slurp(tc.run_dir / "best_snapshot.json") == slurp(fx / "snapshot.json"));
}
