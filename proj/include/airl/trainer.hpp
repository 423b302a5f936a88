#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "airl/model.hpp"
#include "airl/optim.hpp"
#include "airl/perturb.hpp"
#include "airl/reward.hpp"
#include "airl/synthgsm.hpp"

namespace airl {

enum class LossMode { bce, wgan };
enum class TrainMode { airl, sft, outcome_grpo };

const char* train_mode_name(TrainMode mode);  // airl / sft / outcome-grpo
TrainMode train_mode_from_name(std::string_view name);

struct WarmStartConfig {
  int steps = 150;
  int subset = 200;  // expert traces drawn from the front of the train split
  int batch_size = 16;
  double lr = 1e-3;
};

struct TrainConfig {
  int iterations = 500;
  int batch_size = 16;  // prompts per step
  int group_size = 16;  // policy samples per prompt
  double gamma = 0.9;
  double clip_eps = 0.2;
  double lr_policy = 3e-4;
  double lr_disc = 3e-4;
  double warmup_fraction = 0.1;
  double label_smoothing = 0.95;
  LossMode loss_mode = LossMode::bce;
  double wgan_clip = 0.01;
  bool disc_class_balance = true;
  // "random" or "policy": start the discriminator from the warm-started
  // policy's backbone (requires disc_arch equal to policy_arch).
  std::string disc_init = "random";
  int disc_warmup_steps = 0;  // discriminator-only steps against the frozen warm policy
  bool perturb = true;
  PerturbationSpec perturbation;
  WarmStartConfig warm_start;
  std::uint64_t seed = 0;
  AdamConfig adam;
  double grad_clip = 1.0;
  int grad_accum = 2;
  double kl_coef = 0.0;
  int ppo_epochs = 1;
  int log_every = 25;
  int checkpoint_every = 100;
  int monitor_tasks = 64;  // tasks per split sampled for the logged metrics
  DecodeConfig decode{1.0, 1.0, 64, false, 0};  // training-time sampling
  ArchConfig policy_arch{};
  ArchConfig disc_arch{0, 96, 64, 2, 128, 1};

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Linear warm-up over the first ceil(warmup_fraction * total) steps, then
// cosine decay reaching 0 at step == total.
double lr_at(int step, double base, int total, double warmup_fraction);

struct StepResult {
  double loss = 0.0;
  bool applied = false;
  double grad_norm = 0.0;
};

struct DiscUpdateConfig {
  LossMode mode = LossMode::bce;
  double label_smoothing = 0.95;
  double wgan_clip = 0.01;
  double grad_clip = 1.0;
  int grad_accum = 1;
  // BCE as the mean of the expert-token and negative-token averages, so the
  // optimum is p_E / (p_E + p_theta) regardless of how many negatives there are.
  bool class_balance = true;
};

// One optimiser step on the discriminator. Parameters are left untouched when
// the loss or gradient is non-finite.
StepResult disc_update(ModelParams& disc, Adam& opt,
                       std::span<const Trace> experts,
                       std::span<const Trace> negatives,
                       const DiscUpdateConfig& cfg, double lr);

struct GroupBatch {
  std::size_t task = 0;
  std::optional<Trace> expert;
  std::vector<Trace> samples;
  // Indexed like members(): expert first when present.
  std::vector<RewardProfile> profiles;
  std::vector<std::vector<double>> advantages;
  std::vector<std::vector<double>> old_log_probs;
  std::vector<std::vector<double>> ref_log_probs;

  std::vector<Trace> members() const;
};

struct PpoConfig {
  double clip_eps = 0.2;
  double kl_coef = 0.0;
  double grad_clip = 1.0;
  int grad_accum = 1;
  int epochs = 1;
};

// Clipped-surrogate ascent on every response token of every group member.
// A batch whose advantages are all zero (and no KL term) leaves the policy and
// the optimiser state untouched.
StepResult ppo_update(ModelParams& policy, Adam& opt,
                      std::span<const GroupBatch> groups, const PpoConfig& cfg,
                      double lr);

// Mean response-token NLL step on expert traces.
StepResult sft_step(ModelParams& policy, Adam& opt,
                    std::span<const Trace> traces, int grad_accum,
                    double grad_clip, double lr);

struct Dataset;

struct TrainRuntime {
  int threads = 1;
  // Skips the warm start and begins from this policy instead.
  const ModelParams* initial_policy = nullptr;
  std::function<void(const nlohmann::json&)> on_metrics;
  std::function<void(int step, const ModelParams& policy,
                     const ModelParams* disc)>
      on_checkpoint;
};

struct TrainResult {
  ModelParams policy;
  ModelParams warm_policy;  // policy after warm start (initial for sft)
  std::optional<ModelParams> disc;
  std::vector<nlohmann::json> metrics;
  int aborted_steps = 0;
};

ModelParams warm_start(const ModelParams& init, std::span<const Trace> experts,
                       const WarmStartConfig& cfg, const TrainConfig& train,
                       std::uint64_t seed);

TrainResult run_training(TrainMode mode, const TrainConfig& cfg,
                         const Dataset& data, const TrainRuntime& rt = {});

TrainResult airl_train(const TrainConfig& cfg, const Dataset& data,
                       const TrainRuntime& rt = {});
TrainResult sft_train(const TrainConfig& cfg, const Dataset& data,
                      const TrainRuntime& rt = {});
TrainResult outcome_grpo_train(const TrainConfig& cfg, const Dataset& data,
                               const TrainRuntime& rt = {});

}  // namespace airl
