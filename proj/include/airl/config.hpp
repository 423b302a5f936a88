#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "airl/dataset.hpp"
#include "airl/eval.hpp"
#include "airl/synthgsm.hpp"
#include "airl/trainer.hpp"

namespace airl {

struct VizConfig {
  std::string split = "eval";
  int first_task = 0;
  int max_tasks = 16;   // tasks scanned for a correct and a wrong example
  int group_size = 8;   // samples standardised together with the expert
  std::string target = "html";
  bool raw = false;     // raw discriminator logits instead of advantages
  double gamma = 0.9;

  void validate() const;
};

void to_json(nlohmann::json& j, const VizConfig& c);
void from_json(const nlohmann::json& j, VizConfig& c);

// Whole experiment configuration. One master seed feeds every stream; the
// train and eval seeds are derived from it and not set independently.
struct LabConfig {
  std::uint64_t seed = 0;
  TaskParams task;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  VizConfig viz;

  void set_seed(std::uint64_t master);
  void validate() const;
};

nlohmann::json config_to_json(const LabConfig& c);
// Unknown top-level keys are rejected. Accepts a run manifest as well, in
// which case its config snapshot is used.
LabConfig config_from_json(const nlohmann::json& j);
LabConfig load_config(const std::filesystem::path& path);

}  // namespace airl
