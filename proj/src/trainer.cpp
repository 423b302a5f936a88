#include "airl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>

#include "airl/dataset.hpp"

namespace airl {

const char* train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::airl: return "airl";
    case TrainMode::sft: return "sft";
    case TrainMode::outcome_grpo: return "outcome-grpo";
  }
  return "?";
}

TrainMode train_mode_from_name(std::string_view name) {
  if (name == "airl") return TrainMode::airl;
  if (name == "sft") return TrainMode::sft;
  if (name == "outcome-grpo") return TrainMode::outcome_grpo;
  throw Error("usage", "unknown training mode '" + std::string(name) +
                           "' (expected airl, sft or outcome-grpo)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("config", "train: " + what); };
  if (iterations < 1) fail("iterations must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (group_size < 1) fail("group_size must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0, 1]");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail("clip_eps must be in (0, 1)");
  if (!(label_smoothing > 0.5 && label_smoothing <= 1.0)) {
    fail("label_smoothing must be in (0.5, 1]");
  }
  if (lr_policy < 0.0 || lr_disc < 0.0) fail("learning rates must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    fail("warmup_fraction must be in [0, 1]");
  }
  if (!(wgan_clip > 0.0)) fail("wgan_clip must be > 0");
  if (grad_accum < 1) fail("grad_accum must be >= 1");
  if (ppo_epochs < 1) fail("ppo_epochs must be >= 1");
  if (log_every < 1 || checkpoint_every < 1) fail("log/checkpoint intervals must be >= 1");
  if (monitor_tasks < 0) fail("monitor_tasks must be >= 0");
  if (kl_coef < 0.0) fail("kl_coef must be >= 0");
  if (warm_start.steps < 0) fail("warm_start.steps must be >= 0");
  if (warm_start.steps > 0 && (warm_start.subset < 1 || warm_start.batch_size < 1)) {
    fail("warm_start subset and batch_size must be >= 1");
  }
  if (disc_init != "random" && disc_init != "policy") fail("disc_init must be random or policy");
  if (disc_warmup_steps < 0) fail("disc_warmup_steps must be >= 0");
  perturbation.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"group_size", c.group_size},
       {"gamma", c.gamma},
       {"clip_eps", c.clip_eps},
       {"lr_policy", c.lr_policy},
       {"lr_disc", c.lr_disc},
       {"warmup_fraction", c.warmup_fraction},
       {"label_smoothing", c.label_smoothing},
       {"loss_mode", c.loss_mode == LossMode::bce ? "bce" : "wgan"},
       {"wgan_clip", c.wgan_clip},
       {"disc_class_balance", c.disc_class_balance},
       {"disc_init", c.disc_init},
       {"disc_warmup_steps", c.disc_warmup_steps},
       {"perturb", c.perturb},
       {"perturbation", c.perturbation},
       {"warm_start",
        {{"steps", c.warm_start.steps},
         {"subset", c.warm_start.subset},
         {"batch_size", c.warm_start.batch_size},
         {"lr", c.warm_start.lr}}},
       {"seed", c.seed},
       {"adam",
        {{"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"eps", c.adam.eps},
         {"weight_decay", c.adam.weight_decay}}},
       {"grad_clip", c.grad_clip},
       {"grad_accum", c.grad_accum},
       {"kl_coef", c.kl_coef},
       {"ppo_epochs", c.ppo_epochs},
       {"log_every", c.log_every},
       {"checkpoint_every", c.checkpoint_every},
       {"monitor_tasks", c.monitor_tasks},
       {"decode", c.decode},
       {"policy_arch", c.policy_arch},
       {"disc_arch", c.disc_arch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.group_size = j.value("group_size", d.group_size);
  c.gamma = j.value("gamma", d.gamma);
  c.clip_eps = j.value("clip_eps", d.clip_eps);
  c.lr_policy = j.value("lr_policy", d.lr_policy);
  c.lr_disc = j.value("lr_disc", d.lr_disc);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.label_smoothing = j.value("label_smoothing", d.label_smoothing);
  const std::string mode = j.value("loss_mode", std::string("bce"));
  if (mode == "bce") {
    c.loss_mode = LossMode::bce;
  } else if (mode == "wgan") {
    c.loss_mode = LossMode::wgan;
  } else {
    throw Error("config", "train: unknown loss_mode '" + mode + "'");
  }
  c.wgan_clip = j.value("wgan_clip", d.wgan_clip);
  c.disc_class_balance = j.value("disc_class_balance", d.disc_class_balance);
  c.disc_init = j.value("disc_init", d.disc_init);
  c.disc_warmup_steps = j.value("disc_warmup_steps", d.disc_warmup_steps);
  c.perturb = j.value("perturb", d.perturb);
  c.perturbation = j.value("perturbation", d.perturbation);
  if (j.contains("warm_start")) {
    const auto& w = j.at("warm_start");
    c.warm_start.steps = w.value("steps", d.warm_start.steps);
    c.warm_start.subset = w.value("subset", d.warm_start.subset);
    c.warm_start.batch_size = w.value("batch_size", d.warm_start.batch_size);
    c.warm_start.lr = w.value("lr", d.warm_start.lr);
  } else {
    c.warm_start = d.warm_start;
  }
  c.seed = j.value("seed", d.seed);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.beta1 = a.value("beta1", d.adam.beta1);
    c.adam.beta2 = a.value("beta2", d.adam.beta2);
    c.adam.eps = a.value("eps", d.adam.eps);
    c.adam.weight_decay = a.value("weight_decay", d.adam.weight_decay);
  } else {
    c.adam = d.adam;
  }
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.grad_accum = j.value("grad_accum", d.grad_accum);
  c.kl_coef = j.value("kl_coef", d.kl_coef);
  c.ppo_epochs = j.value("ppo_epochs", d.ppo_epochs);
  c.log_every = j.value("log_every", d.log_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.monitor_tasks = j.value("monitor_tasks", d.monitor_tasks);
  c.decode = j.value("decode", d.decode);
  c.policy_arch = j.value("policy_arch", d.policy_arch);
  c.disc_arch = j.value("disc_arch", d.disc_arch);
}

double lr_at(int step, double base, int total, double warmup_fraction) {
  if (total < 1 || step < 0 || step > total) {
    throw std::invalid_argument("lr_at: step outside [0, total]");
  }
  const int warm =
      static_cast<int>(std::ceil(warmup_fraction * total - 1e-12));
  if (step < warm) return base * step / warm;
  if (total == warm) return base;
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

// Gradient accumulation: the batch is split into `accum` contiguous chunks
// whose losses and gradients add up to the full-batch values.
double accumulate_chunks(const ModelParams& params,
                         std::span<const Trace> traces, const LossSpec& spec,
                         int accum, ModelParams& grad) {
  const std::size_t n = traces.size();
  const std::size_t k = std::clamp<std::size_t>(accum, 1, std::max<std::size_t>(n, 1));
  double loss = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    loss += accumulate_loss_grad(params, traces, spec, n * c / k,
                                 n * (c + 1) / k, &grad);
  }
  return loss;
}

StepResult apply_step(ModelParams& params, Adam& opt, std::span<const Trace> traces,
                      const LossSpec& spec, int accum, double grad_clip,
                      double lr) {
  StepResult out;
  ModelParams grad = params.zeros_like();
  try {
    out.loss = accumulate_chunks(params, traces, spec, accum, grad);
  } catch (const NonFiniteLoss&) {
    out.loss = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  if (!all_finite(grad.values())) return out;
  out.grad_norm = clip_grad_norm(grad, grad_clip);
  opt.step(params, grad, lr);
  out.applied = true;
  return out;
}

}  // namespace

StepResult disc_update(ModelParams& disc, Adam& opt,
                       std::span<const Trace> experts,
                       std::span<const Trace> negatives,
                       const DiscUpdateConfig& cfg, double lr) {
  if (experts.empty() || negatives.empty()) {
    throw std::invalid_argument("disc_update needs expert and negative traces");
  }
  std::vector<Trace> all(experts.begin(), experts.end());
  all.insert(all.end(), negatives.begin(), negatives.end());
  LossSpec spec;
  spec.kind = cfg.mode == LossMode::bce ? LossKind::disc_bce : LossKind::disc_wgan;
  const double pos = cfg.mode == LossMode::bce ? cfg.label_smoothing : 1.0;
  spec.targets.assign(experts.size(), pos);
  spec.targets.resize(all.size(), 1.0 - pos);
  if (cfg.class_balance) {
    // Each class contributes half of the objective whatever its token count.
    double n_exp = 0.0, n_neg = 0.0;
    for (const auto& t : experts) n_exp += t.response_len();
    for (const auto& t : negatives) n_neg += t.response_len();
    spec.weights.assign(experts.size(), 1.0 / n_exp);
    spec.weights.resize(all.size(), 1.0 / n_neg);
  }
  StepResult out = apply_step(disc, opt, all, spec, cfg.grad_accum,
                              cfg.grad_clip, lr);
  if (out.applied && cfg.mode == LossMode::wgan) clip_weights(disc, cfg.wgan_clip);
  if (!out.applied) std::cerr << "warning: discriminator step aborted (non-finite)\n";
  return out;
}

std::vector<Trace> GroupBatch::members() const {
  std::vector<Trace> out;
  if (expert) out.push_back(*expert);
  out.insert(out.end(), samples.begin(), samples.end());
  return out;
}

StepResult ppo_update(ModelParams& policy, Adam& opt,
                      std::span<const GroupBatch> groups, const PpoConfig& cfg,
                      double lr) {
  std::vector<Trace> traces;
  LossSpec spec;
  spec.kind = LossKind::ppo;
  spec.clip_eps = cfg.clip_eps;
  spec.kl_coef = cfg.kl_coef;
  bool any_signal = cfg.kl_coef != 0.0;
  for (const auto& g : groups) {
    auto m = g.members();
    if (g.advantages.size() != m.size() || g.old_log_probs.size() != m.size()) {
      throw std::invalid_argument("group batch arrays do not match its members");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      traces.push_back(std::move(m[i]));
      spec.advantages.push_back(g.advantages[i]);
      spec.old_log_probs.push_back(g.old_log_probs[i]);
      if (cfg.kl_coef != 0.0) spec.ref_log_probs.push_back(g.ref_log_probs.at(i));
      for (double a : g.advantages[i]) any_signal = any_signal || a != 0.0;
    }
  }
  if (traces.empty()) throw std::invalid_argument("ppo_update needs traces");
  if (!any_signal) return {0.0, true, 0.0};

  const ModelParams before = policy;
  const Adam opt_before = opt;
  StepResult first;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    StepResult r = apply_step(policy, opt, traces, spec, cfg.grad_accum,
                              cfg.grad_clip, lr);
    if (!r.applied) {
      policy = before;
      opt = opt_before;
      std::cerr << "warning: policy step aborted (non-finite)\n";
      return r;
    }
    if (epoch == 0) first = r;
  }
  return first;
}

StepResult sft_step(ModelParams& policy, Adam& opt,
                    std::span<const Trace> traces, int grad_accum,
                    double grad_clip, double lr) {
  LossSpec spec;
  spec.kind = LossKind::sft;
  return apply_step(policy, opt, traces, spec, grad_accum, grad_clip, lr);
}

ModelParams warm_start(const ModelParams& init, std::span<const Trace> experts,
                       const WarmStartConfig& cfg, const TrainConfig& train,
                       std::uint64_t seed) {
  ModelParams policy = init;
  if (cfg.steps <= 0 || experts.empty()) return policy;
  Adam opt(policy.size(), train.adam);
  std::vector<Trace> batch(cfg.batch_size);
  for (int s = 1; s <= cfg.steps; ++s) {
    Rng rng = make_rng(seed, "warm.batch", s);
    std::uniform_int_distribution<std::size_t> pick(0, experts.size() - 1);
    for (auto& t : batch) t = experts[pick(rng)];
    sft_step(policy, opt, batch, train.grad_accum, train.grad_clip,
             lr_at(s, cfg.lr, cfg.steps, train.warmup_fraction));
  }
  return policy;
}

namespace {

struct MonitorStats {
  double correctness = 0.0;
  std::optional<double> mean_reward;
};

MonitorStats monitor(const ModelParams& policy, const ModelParams* disc,
                     std::span<const TaskInstance> tasks, const Vocabulary& vocab,
                     const DecodeConfig& decode, std::uint64_t seed,
                     std::string_view purpose, int threads) {
  MonitorStats out;
  if (tasks.empty()) return out;
  std::vector<double> correct(tasks.size()), reward(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, purpose, i);
    Trace t = sample_trace(policy, tasks[i].prompt_tokens, decode, rng, vocab);
    correct[i] = verify_signals(t, tasks[i], vocab).correctness;
    if (disc) {
      auto z = disc_token_logits(*disc, t);
      reward[i] = std::accumulate(z.begin(), z.end(), 0.0) /
                  static_cast<double>(z.size());
    }
  });
  const double n = static_cast<double>(tasks.size());
  out.correctness = std::accumulate(correct.begin(), correct.end(), 0.0) / n;
  if (disc) out.mean_reward = std::accumulate(reward.begin(), reward.end(), 0.0) / n;
  return out;
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

ArchConfig resolve_arch(ArchConfig arch, const Dataset& data, const char* which) {
  if (arch.vocab_size == 0) arch.vocab_size = data.vocab.size();
  if (arch.vocab_size != data.vocab.size()) {
    throw Error("config", std::string(which) + " vocab_size does not match the dataset vocabulary");
  }
  if (arch.max_len < data.task.max_len) {
    throw Error("config", std::string(which) + " max_len is shorter than the task max_len");
  }
  arch.validate();
  return arch;
}

}  // namespace

TrainResult run_training(TrainMode mode, const TrainConfig& cfg_in,
                         const Dataset& data, const TrainRuntime& rt) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  cfg.policy_arch = resolve_arch(cfg.policy_arch, data, "policy_arch");
  cfg.disc_arch = resolve_arch(cfg.disc_arch, data, "disc_arch");
  if (data.train.empty()) throw Error("data", "empty train split");

  const Vocabulary& vocab = data.vocab;
  const int max_len = data.task.max_len;
  const std::vector<Trace> experts = expert_traces(data.train, vocab, max_len);
  const std::uint64_t seed = cfg.seed;
  const int threads = std::max(1, rt.threads);
  const int B = cfg.batch_size;
  const int G = cfg.group_size;
  const int I = cfg.iterations;

  TrainResult res;
  ModelParams policy =
      rt.initial_policy
          ? *rt.initial_policy
          : init_params(Role::policy, cfg.policy_arch, derive_seed(seed, "init.policy"));
  if (policy.arch() != cfg.policy_arch) {
    throw Error("config", "initial policy architecture does not match policy_arch");
  }
  if (!rt.initial_policy && mode != TrainMode::sft) {
    const std::size_t n = std::min<std::size_t>(cfg.warm_start.subset, experts.size());
    policy = warm_start(policy, std::span(experts).first(n), cfg.warm_start, cfg,
                        derive_seed(seed, "warm"));
  }
  res.warm_policy = policy;
  const ModelParams reference = policy;

  std::optional<ModelParams> disc;
  if (mode == TrainMode::airl) {
    disc = init_params(Role::discriminator, cfg.disc_arch, derive_seed(seed, "init.disc"));
    if (cfg.disc_init == "policy") {
      if (!(cfg.disc_arch == cfg.policy_arch)) {
        throw Error("config", "disc_init=policy needs disc_arch equal to policy_arch");
      }
      copy_backbone(policy, *disc);
    }
  }
  Adam opt_policy(policy.size(), cfg.adam);
  Adam opt_disc(disc ? disc->size() : 0, cfg.adam);

  auto sample_batch = [&](const std::vector<std::size_t>& batch, std::string_view purpose,
                          int it) {
    std::vector<Trace> samples(batch.size() * static_cast<std::size_t>(G));
    parallel_for(samples.size(), threads, [&](std::size_t k) {
      Rng rng = make_rng(seed, purpose, static_cast<std::uint64_t>(it - 1) * samples.size() + k);
      samples[k] = sample_trace(policy, data.train[batch[k / G]].prompt_tokens, cfg.decode,
                                rng, vocab);
    });
    return samples;
  };
  auto pick_batch = [&](std::string_view purpose, int it) {
    Rng batch_rng = make_rng(seed, purpose, it);
    std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
    std::vector<std::size_t> batch(B);
    for (auto& b : batch) b = pick(batch_rng);
    return batch;
  };
  int dropped = 0;
  // Negatives are the policy samples plus near-miss edits of a pool drawn with
  // replacement from the batch's experts and samples.
  auto make_negatives = [&](const std::vector<std::size_t>& batch,
                            const std::vector<Trace>& batch_experts,
                            const std::vector<Trace>& samples, Rng prng) {
    std::vector<Trace> negatives = samples;
    if (!cfg.perturb) return negatives;
    std::vector<PerturbSource> pool;
    const std::size_t n_exp = batch_experts.size();
    std::uniform_int_distribution<std::size_t> src(0, n_exp + samples.size() - 1);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const std::size_t s = src(prng);
      const bool is_expert = s < n_exp;
      const std::size_t task = is_expert ? batch[s] : batch[(s - n_exp) / G];
      pool.push_back({is_expert ? batch_experts[s] : samples[s - n_exp],
                      data.train[task].ground_truth});
    }
    PerturbBatch pb = perturb_batch(pool, cfg.perturbation, vocab, prng, max_len);
    dropped += pb.dropped;
    for (auto& p : pb.traces) negatives.push_back(std::move(p.trace));
    return negatives;
  };

  const std::size_t n_mon_train = std::min<std::size_t>(cfg.monitor_tasks, data.train.size());
  const std::size_t n_mon_eval = std::min<std::size_t>(cfg.monitor_tasks, data.eval.size());
  const DiscUpdateConfig disc_cfg{cfg.loss_mode, cfg.label_smoothing, cfg.wgan_clip,
                                  cfg.grad_clip, cfg.grad_accum, cfg.disc_class_balance};
  const PpoConfig ppo_cfg{cfg.clip_eps, cfg.kl_coef, cfg.grad_clip, cfg.grad_accum,
                          cfg.ppo_epochs};

  double disc_loss_sum = 0.0, policy_loss_sum = 0.0;
  int disc_n = 0, policy_n = 0, consecutive = 0;

  if (disc) {
    const int W = cfg.disc_warmup_steps;
    for (int it = 1; it <= W; ++it) {
      auto batch = pick_batch("disc_warmup.batch", it);
      std::vector<Trace> batch_experts;
      for (auto b : batch) batch_experts.push_back(experts[b]);
      auto samples = sample_batch(batch, "disc_warmup.sample", it);
      auto negatives = make_negatives(batch, batch_experts, samples,
                                      make_rng(seed, "disc_warmup.perturb", it));
      disc_update(*disc, opt_disc, batch_experts, negatives, disc_cfg,
                  lr_at(it, cfg.lr_disc, W, cfg.warmup_fraction));
    }
    dropped = 0;
  }

  for (int it = 1; it <= I; ++it) {
    const double lr_p = lr_at(it, cfg.lr_policy, I, cfg.warmup_fraction);
    const double lr_d = lr_at(it, cfg.lr_disc, I, cfg.warmup_fraction);
    const std::vector<std::size_t> batch = pick_batch("train.batch", it);

    bool aborted = false;
    if (mode == TrainMode::sft) {
      std::vector<Trace> traces;
      for (auto b : batch) traces.push_back(experts[b]);
      StepResult r = sft_step(policy, opt_policy, traces, cfg.grad_accum, cfg.grad_clip, lr_p);
      aborted = !r.applied;
      if (r.applied) {
        policy_loss_sum += r.loss;
        ++policy_n;
      }
    } else {
      const std::vector<Trace> samples = sample_batch(batch, "train.sample", it);

      std::vector<GroupBatch> groups(B);
      for (int b = 0; b < B; ++b) {
        groups[b].task = batch[b];
        if (mode == TrainMode::airl) groups[b].expert = experts[batch[b]];
        groups[b].samples.assign(samples.begin() + b * G, samples.begin() + (b + 1) * G);
      }

      if (mode == TrainMode::airl) {
        std::vector<Trace> batch_experts;
        for (auto b : batch) batch_experts.push_back(experts[b]);
        std::vector<Trace> negatives = make_negatives(batch, batch_experts, samples,
                                                      make_rng(seed, "train.perturb", it));
        StepResult d = disc_update(*disc, opt_disc, batch_experts, negatives, disc_cfg, lr_d);
        aborted = !d.applied;
        if (d.applied) {
          disc_loss_sum += d.loss;
          ++disc_n;
        }
      }

      // Rewards, advantages and old log-probs, per member, in parallel.
      std::vector<std::pair<int, int>> slots;
      for (int b = 0; b < B; ++b) {
        const int m = (groups[b].expert ? 1 : 0) + G;
        groups[b].old_log_probs.resize(m);
        groups[b].ref_log_probs.resize(cfg.kl_coef != 0.0 ? m : 0);
        groups[b].advantages.resize(m);
        for (int k = 0; k < m; ++k) slots.emplace_back(b, k);
      }
      std::vector<std::vector<double>> raw(slots.size());
      std::vector<std::vector<Trace>> members(B);
      for (int b = 0; b < B; ++b) members[b] = groups[b].members();
      parallel_for(slots.size(), threads, [&](std::size_t s) {
        auto [b, k] = slots[s];
        const Trace& t = members[b][k];
        groups[b].old_log_probs[k] = policy_log_probs(policy, t);
        if (cfg.kl_coef != 0.0) groups[b].ref_log_probs[k] = policy_log_probs(reference, t);
        if (mode == TrainMode::airl) {
          raw[s] = token_rewards(disc_token_logits(*disc, t));
        } else {
          raw[s] = {static_cast<double>(
              verify_signals(t, data.train[groups[b].task], vocab).correctness)};
        }
      });
      std::size_t s = 0;
      for (int b = 0; b < B; ++b) {
        auto& g = groups[b];
        const std::size_t m = members[b].size();
        std::vector<std::vector<double>> group_raw(raw.begin() + s, raw.begin() + s + m);
        s += m;
        if (m < 2) {
          g.advantages[0].assign(members[b][0].response_len(), 0.0);
          continue;
        }
        StandardizedGroup sg = group_standardize(group_raw);
        for (std::size_t k = 0; k < m; ++k) {
          const Trace& t = members[b][k];
          if (mode == TrainMode::airl) {
            g.profiles.push_back(make_profile(t, group_raw[k], sg.rewards[k], cfg.gamma,
                                              segment(t, vocab)));
            g.advantages[k] = g.profiles.back().advantage;
          } else {
            g.advantages[k].assign(t.response_len(), sg.rewards[k].back());
          }
        }
      }

      StepResult p = ppo_update(policy, opt_policy, groups, ppo_cfg, lr_p);
      aborted = aborted || !p.applied;
      if (p.applied) {
        policy_loss_sum += p.loss;
        ++policy_n;
      }
    }

    if (aborted) {
      ++res.aborted_steps;
      if (++consecutive >= 10) {
        throw Error("train", "halted after 10 consecutive aborted steps (step " +
                                 std::to_string(it) + ")");
      }
    } else {
      consecutive = 0;
    }

    if (it % cfg.log_every == 0 || it == I) {
      const ModelParams* d = disc ? &*disc : nullptr;
      MonitorStats tr = monitor(policy, d, std::span(data.train).first(n_mon_train), vocab,
                                cfg.decode, seed, "monitor.train", threads);
      MonitorStats ev = monitor(policy, d, std::span(data.eval).first(n_mon_eval), vocab,
                                cfg.decode, seed, "monitor.eval", threads);
      nlohmann::json row = {
          {"step", it},
          {"mode", train_mode_name(mode)},
          {"disc_loss", disc_n ? nlohmann::json(disc_loss_sum / disc_n) : nlohmann::json(nullptr)},
          {"policy_loss", policy_n ? nlohmann::json(policy_loss_sum / policy_n) : nlohmann::json(nullptr)},
          {"mean_reward_train", opt_json(tr.mean_reward)},
          {"mean_reward_eval", opt_json(ev.mean_reward)},
          {"correctness_train", tr.correctness},
          {"correctness_eval", ev.correctness},
          {"lr_policy", lr_p},
          {"lr_disc", mode == TrainMode::airl ? nlohmann::json(lr_d) : nlohmann::json(nullptr)},
          {"perturb_dropped", dropped},
          {"aborted_steps", res.aborted_steps}};
      res.metrics.push_back(row);
      if (rt.on_metrics) rt.on_metrics(row);
      disc_loss_sum = policy_loss_sum = 0.0;
      disc_n = policy_n = dropped = 0;
    }
    if ((it % cfg.checkpoint_every == 0 || it == I) && rt.on_checkpoint) {
      rt.on_checkpoint(it, policy, disc ? &*disc : nullptr);
    }
  }
  res.policy = std::move(policy);
  res.disc = std::move(disc);
  return res;
}

TrainResult airl_train(const TrainConfig& cfg, const Dataset& data, const TrainRuntime& rt) {
  return run_training(TrainMode::airl, cfg, data, rt);
}

TrainResult sft_train(const TrainConfig& cfg, const Dataset& data, const TrainRuntime& rt) {
  return run_training(TrainMode::sft, cfg, data, rt);
}

TrainResult outcome_grpo_train(const TrainConfig& cfg, const Dataset& data,
                               const TrainRuntime& rt) {
  return run_training(TrainMode::outcome_grpo, cfg, data, rt);
}

}  // namespace airl
