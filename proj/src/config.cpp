#include "handteleop/config.hpp"

#include "handteleop/errors.hpp"
#include "handteleop/io.hpp"
#include "handteleop/json_io.hpp"

namespace handteleop::config {

using nlohmann::json;

void RunConfig::propagate_seed() { train.seed = seed; }

json to_json(const RunConfig& c) {
  json dataset = data::to_json(c.dataset);
  dataset["size"] = c.dataset_size;
  json train = training::to_json(c.train);
  train.erase("seed");
  json teleop = teleop::to_json(c.teleop);
  teleop["duration"] = c.replay_duration;
  teleop["arm_chain"] = json_io::to_json(c.arm_chain);
  teleop["ik"] = json_io::to_json(c.ik);
  return {{"seed", c.seed},
          {"dataset", std::move(dataset)},
          {"train", std::move(train)},
          {"eval", evaluation::to_json(c.eval)},
          {"teleop", std::move(teleop)}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be an object");
  json merged = to_json(RunConfig{});
  const auto unknown = json_io::unknown_keys(merged, j);
  if (!unknown.empty()) {
    std::string msg = "unknown configuration key";
    msg += unknown.size() > 1 ? "s" : "";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", '" : " '") + unknown[i] + "'";
    throw ConfigError(msg);
  }
  merged.merge_patch(j);

  RunConfig c;
  c.seed = json_io::get<std::uint64_t>(merged, "seed");

  json dataset = merged.at("dataset");
  c.dataset_size = json_io::get<int>(dataset, "size");
  if (c.dataset_size < 1) throw ConfigError("dataset.size must be >= 1");
  dataset.erase("size");
  c.dataset = data::generation_from_json(dataset);

  c.train = training::train_config_from_json(merged.at("train"));
  c.eval = evaluation::eval_from_json(merged.at("eval"));

  json teleop = merged.at("teleop");
  c.replay_duration = json_io::get<double>(teleop, "duration");
  if (!(c.replay_duration >= 0.0)) throw ConfigError("teleop.duration must be >= 0");
  c.arm_chain = json_io::arm_from_json(teleop.at("arm_chain"));
  c.ik = json_io::ik_from_json(teleop.at("ik"));
  teleop.erase("duration");
  teleop.erase("arm_chain");
  teleop.erase("ik");
  c.teleop = teleop::gains_from_json(teleop);

  c.propagate_seed();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("configuration file not found: " + path.string());
  try {
    return run_config_from_json(json_io::parse(io::read_text(path), path.string()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace handteleop::config
