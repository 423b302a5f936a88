#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "airl/config.hpp"
#include "airl/eval.hpp"
#include "airl/trainer.hpp"

namespace airl {

std::string code_version();

// Writes train.jsonl, eval.jsonl, vocab.json and manifest.json into out.
void cmd_gen_data(const LabConfig& cfg, const std::filesystem::path& out);

// Run directory layout: manifest.json, config.json, metrics.jsonl,
// checkpoints/step_NNNNNN/{policy,disc}.ckpt and warm_policy.ckpt.
TrainResult cmd_train(TrainMode mode, const LabConfig& cfg,
                      const std::filesystem::path& data_dir,
                      const std::filesystem::path& out, int threads);

struct EvalInputs {
  std::filesystem::path run_dir;  // resolves checkpoints and data from its manifest
  std::filesystem::path policy;   // explicit checkpoint pair overrides run_dir
  std::filesystem::path disc;
  std::filesystem::path data_dir;
};

// Writes report.json, pass_at_k.csv and candidates.csv into out.
EvalReport cmd_eval(const LabConfig& cfg, const EvalInputs& in,
                    const std::filesystem::path& out, int threads);

// Writes {split}_{index}_{correct|wrong}.html files (or prints ansi to
// stdout). Returns the paths written; empty selection only warns.
std::vector<std::filesystem::path> cmd_viz(const LabConfig& cfg, const EvalInputs& in,
                                           const std::filesystem::path& out, int threads);

}  // namespace airl
