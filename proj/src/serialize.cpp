#include "crackbench/serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace crackbench {

using json = nlohmann::ordered_json;

namespace {

json config_json(const ModelConfig& c) {
  return json{{"stage_channels", c.stage_channels},
              {"convs_per_stage", c.convs_per_stage},
              {"merge_channels", c.merge_channels},
              {"input_channels", c.input_channels},
              {"preset", c.preset == ScalePreset::paper ? "paper" : "tiny"},
              {"pyramid", c.pyramid},
              {"init_std", c.init_std},
              {"he_backbone", c.he_backbone},
              {"input_mean", c.input_mean}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.stage_channels = j.at("stage_channels").get<std::array<int, 5>>();
  c.convs_per_stage = j.at("convs_per_stage").get<std::array<int, 5>>();
  c.merge_channels = j.at("merge_channels").get<std::array<int, 4>>();
  c.input_channels = j.at("input_channels").get<int>();
  const auto preset = j.at("preset").get<std::string>();
  if (preset != "tiny" && preset != "paper") throw std::runtime_error("unknown preset '" + preset + "'");
  c.preset = preset == "paper" ? ScalePreset::paper : ScalePreset::tiny;
  c.pyramid = j.at("pyramid").get<bool>();
  c.init_std = j.value("init_std", 0.01);
  c.he_backbone = j.value("he_backbone", false);
  c.input_mean = j.value("input_mean", 0.0);
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(2); }

ModelConfig config_from_json(const std::string& text) { return config_from(json::parse(text)); }

std::string snapshot_to_json(const Snapshot& s) {
  json j;
  j["format"] = "crackbench.snapshot";
  j["version"] = 1;
  j["iteration"] = s.iteration;
  j["val_aiu"] = s.val_aiu ? json(*s.val_aiu) : json(nullptr);
  j["config"] = config_json(s.params.config);
  auto params = json::array();
  for (const auto* p : s.params.all()) {
    const Shape& sh = p->value.shape();
    json data = json::array();
    for (std::ptrdiff_t i = 0; i < p->value.size(); ++i) data.push_back(p->value[i]);
    params.push_back({{"name", p->name},
                      {"shape", {sh.n, sh.c, sh.h, sh.w}},
                      {"learnable", p->learnable},
                      {"data", std::move(data)}});
  }
  j["params"] = std::move(params);
  return j.dump();
}

Snapshot snapshot_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != "crackbench.snapshot")
    throw std::runtime_error("not a crackbench snapshot (format field missing or wrong)");
  if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported snapshot version");
  Snapshot s;
  s.iteration = j.at("iteration").get<int>();
  if (!j.at("val_aiu").is_null()) s.val_aiu = j.at("val_aiu").get<double>();
  // Build the layout from the config, then fill values by name.
  s.params = init_params<float>(config_from(j.at("config")), 0);
  const auto& entries = j.at("params");
  auto targets = s.params.all();
  if (entries.size() != targets.size())
    throw std::runtime_error("snapshot holds " + std::to_string(entries.size()) + " parameters, config implies " +
                             std::to_string(targets.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    Parameter<float>* p = targets[i];
    const auto name = e.at("name").get<std::string>();
    if (name != p->name) throw std::runtime_error("snapshot parameter '" + name + "' where '" + p->name + "' expected");
    const auto shape = e.at("shape").get<std::array<int, 4>>();
    const Shape sh{shape[0], shape[1], shape[2], shape[3]};
    if (sh != p->value.shape())
      throw std::runtime_error("snapshot parameter '" + name + "' has shape " + sh.str() + ", expected " +
                               p->value.shape().str());
    const auto& data = e.at("data");
    if (static_cast<std::ptrdiff_t>(data.size()) != p->value.size())
      throw std::runtime_error("snapshot parameter '" + name + "' has wrong data length");
    for (std::ptrdiff_t k = 0; k < p->value.size(); ++k) p->value[k] = data[static_cast<std::size_t>(k)].get<float>();
    p->learnable = e.at("learnable").get<bool>();
    p->zero_grad();
  }
  return s;
}

void save_snapshot(const std::filesystem::path& path, const Snapshot& snapshot) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write snapshot '" + path.string() + "'");
  out << snapshot_to_json(snapshot) << '\n';
}

Snapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open snapshot '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return snapshot_from_json(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("snapshot '" + path.string() + "': " + e.what());
  }
}

}  // namespace crackbench
