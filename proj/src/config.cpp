#include "airl/config.hpp"

namespace airl {

void VizConfig::validate() const {
  if (split != "train" && split != "eval") throw Error("config", "viz: split must be train or eval");
  if (first_task < 0 || max_tasks < 0) throw Error("config", "viz: task range must be >= 0");
  if (group_size < 1) throw Error("config", "viz: group_size must be >= 1");
  if (target != "html" && target != "ansi") throw Error("config", "viz: target must be html or ansi");
  if (gamma < 0.0 || gamma > 1.0) throw Error("config", "viz: gamma must be in [0, 1]");
}

void to_json(nlohmann::json& j, const VizConfig& c) {
  j = {{"split", c.split},         {"first_task", c.first_task}, {"max_tasks", c.max_tasks},
       {"group_size", c.group_size}, {"target", c.target},       {"raw", c.raw},
       {"gamma", c.gamma}};
}

void from_json(const nlohmann::json& j, VizConfig& c) {
  VizConfig d;
  c.split = j.value("split", d.split);
  c.first_task = j.value("first_task", d.first_task);
  c.max_tasks = j.value("max_tasks", d.max_tasks);
  c.group_size = j.value("group_size", d.group_size);
  c.target = j.value("target", d.target);
  c.raw = j.value("raw", d.raw);
  c.gamma = j.value("gamma", d.gamma);
}

void LabConfig::set_seed(std::uint64_t master) {
  seed = master;
  train.seed = derive_seed(master, "train");
  eval.seed = derive_seed(master, "eval");
}

void LabConfig::validate() const {
  task.validate();
  data.validate();
  train.validate();
  eval.validate();
  viz.validate();
}

nlohmann::json config_to_json(const LabConfig& c) {
  nlohmann::json train = c.train;
  nlohmann::json eval = c.eval;
  train.erase("seed");
  eval.erase("seed");
  return {{"seed", c.seed}, {"task", c.task}, {"data", c.data},
          {"train", train}, {"eval", eval},   {"viz", c.viz}};
}

LabConfig config_from_json(const nlohmann::json& j_in) {
  const nlohmann::json& j =
      j_in.contains("kind") && j_in.at("kind") == "manifest" ? j_in.at("config") : j_in;
  if (!j.is_object()) throw Error("config", "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "seed" && key != "task" && key != "data" && key != "train" &&
        key != "eval" && key != "viz") {
      throw Error("config", "unknown config key '" + key + "'");
    }
  }
  LabConfig c;
  try {
    c.task = j.value("task", c.task);
    c.data = j.value("data", c.data);
    c.train = j.value("train", c.train);
    c.eval = j.value("eval", c.eval);
    c.viz = j.value("viz", c.viz);
    c.set_seed(j.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw Error("config", std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

LabConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config", path.string() + ": " + e.what());
  }
}

}  // namespace airl
