// airl-lab: data generation, training, evaluation and heatmap rendering.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "airl/config.hpp"
#include "airl/run.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  bool print_config = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "JSON config or run manifest");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--print-config", c.print_config, "print the resolved config and exit");
}

airl::LabConfig resolve(const Common& c) {
  airl::LabConfig cfg = c.config.empty() ? airl::config_from_json(nlohmann::json::object())
                                         : airl::load_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial inverse RL for step-by-step arithmetic reasoning"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, viz_c;
  auto* gen = app.add_subcommand("gen-data", "generate train/eval task splits");
  add_common(gen, gen_c, false);

  auto* train = app.add_subcommand("train", "train a policy (airl, sft or outcome-grpo)");
  add_common(train, train_c, false);
  std::string mode = "airl", train_data;
  train->add_option("--mode", mode, "airl | sft | outcome-grpo");
  train->add_option("--data", train_data, "dataset directory from gen-data");

  airl::EvalInputs eval_in, viz_in;
  std::optional<int> eval_n;
  std::vector<int> eval_k;
  auto* eval = app.add_subcommand("eval", "rerank evaluation of a policy/discriminator pair");
  add_common(eval, eval_c, false);
  eval->add_option("--run", eval_in.run_dir, "training run directory");
  eval->add_option("--policy", eval_in.policy, "policy checkpoint");
  eval->add_option("--disc", eval_in.disc, "discriminator checkpoint");
  eval->add_option("--data", eval_in.data_dir, "dataset directory");
  eval->add_option("--n", eval_n, "candidates per task");
  eval->add_option("--k", eval_k, "k values, comma separated")->delimiter(',');

  std::optional<int> viz_index, viz_count;
  std::optional<std::string> viz_split, viz_target;
  bool viz_raw = false;
  auto* viz = app.add_subcommand("viz", "token-level reward heatmaps");
  add_common(viz, viz_c, false);
  viz->add_option("--run", viz_in.run_dir, "training run directory");
  viz->add_option("--policy", viz_in.policy, "policy checkpoint");
  viz->add_option("--disc", viz_in.disc, "discriminator checkpoint");
  viz->add_option("--data", viz_in.data_dir, "dataset directory");
  viz->add_option("--split", viz_split, "train | eval");
  viz->add_option("--index", viz_index, "first task index");
  viz->add_option("--count", viz_count, "number of tasks to scan");
  viz->add_option("--target", viz_target, "html | ansi");
  viz->add_flag("--raw", viz_raw, "raw discriminator logits instead of advantages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n" << app.help();
    return 2;
  }

  auto need_out = [](const Common& c) {
    if (c.out.empty()) throw airl::Error("usage", "--out is required");
    return std::filesystem::path(c.out);
  };

  try {
    if (gen->parsed()) {
      airl::LabConfig cfg = resolve(gen_c);
      if (gen_c.print_config) {
        std::cout << airl::config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      airl::cmd_gen_data(cfg, need_out(gen_c));
    } else if (train->parsed()) {
      airl::LabConfig cfg = resolve(train_c);
      const airl::TrainMode m = airl::train_mode_from_name(mode);
      if (train_c.print_config) {
        std::cout << airl::config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      if (train_data.empty()) throw airl::Error("usage", "--data is required");
      airl::cmd_train(m, cfg, train_data, need_out(train_c), train_c.threads);
    } else if (eval->parsed()) {
      airl::LabConfig cfg = resolve(eval_c);
      if (eval_n) cfg.eval.num_candidates = *eval_n;
      if (!eval_k.empty()) cfg.eval.k_list = eval_k;
      cfg.eval.validate();
      if (eval_c.print_config) {
        std::cout << airl::config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      auto report = airl::cmd_eval(cfg, eval_in, need_out(eval_c), eval_c.threads);
      std::cout << airl::pass_table_csv(report);
    } else if (viz->parsed()) {
      airl::LabConfig cfg = resolve(viz_c);
      if (viz_split) cfg.viz.split = *viz_split;
      if (viz_index) cfg.viz.first_task = *viz_index;
      if (viz_count) cfg.viz.max_tasks = *viz_count;
      if (viz_target) cfg.viz.target = *viz_target;
      if (viz_raw) cfg.viz.raw = true;
      cfg.viz.validate();
      if (viz_c.print_config) {
        std::cout << airl::config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      std::filesystem::path out = viz_c.out;
      if (cfg.viz.target == "html") out = need_out(viz_c);
      for (const auto& p : airl::cmd_viz(cfg, viz_in, out, viz_c.threads)) {
        std::cout << p.string() << "\n";
      }
    }
  } catch (const airl::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    if (e.code() == "usage") std::cerr << app.help();
    return e.code() == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
