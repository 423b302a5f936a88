#include "airl/run.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "airl/checkpoint.hpp"
#include "airl/dataset.hpp"
#include "airl/diagnostics.hpp"

namespace fs = std::filesystem;

namespace airl {

#ifndef AIRL_VERSION
#define AIRL_VERSION "dev"
#endif

std::string code_version() { return AIRL_VERSION; }

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error("io", "cannot create directory " + dir.string() +
                          (ec ? ": " + ec.message() : std::string()));
  }
}

std::string file_digest(const fs::path& path) {
  const std::string bytes = read_file(path);
  return hex64(fnv1a64(std::as_bytes(std::span(bytes.data(), bytes.size()))));
}

nlohmann::json dataset_entry(const fs::path& dir) {
  return {{"dir", fs::absolute(dir).lexically_normal().string()},
          {"digests",
           {{"train.jsonl", file_digest(dir / "train.jsonl")},
            {"eval.jsonl", file_digest(dir / "eval.jsonl")},
            {"vocab.json", file_digest(dir / "vocab.json")}}}};
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

std::string step_dir_name(int step) {
  std::ostringstream out;
  out << "step_" << std::setw(6) << std::setfill('0') << step;
  return out.str();
}

struct LoadedPair {
  ModelParams policy;
  ModelParams disc;
  Dataset data;
};

LoadedPair load_pair(const EvalInputs& in) {
  fs::path policy = in.policy, disc = in.disc, data_dir = in.data_dir;
  if (!in.run_dir.empty()) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_file(in.run_dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
      throw Error("io", "unreadable manifest in " + in.run_dir.string() + ": " + e.what());
    }
    const auto& art = manifest.value("artifacts", nlohmann::json::object());
    if (policy.empty() && art.contains("policy")) policy = art.at("policy").get<std::string>();
    if (disc.empty() && art.contains("disc")) disc = art.at("disc").get<std::string>();
    if (data_dir.empty() && manifest.contains("dataset")) {
      data_dir = manifest.at("dataset").at("dir").get<std::string>();
    }
  }
  if (policy.empty()) throw Error("usage", "no policy checkpoint (pass --run or --policy)");
  if (disc.empty()) {
    throw Error("usage", "no discriminator checkpoint (pass --disc; only airl runs produce one)");
  }
  if (data_dir.empty()) throw Error("usage", "no dataset (pass --data)");
  LoadedPair out{load_checkpoint(policy), load_checkpoint(disc), load_dataset(data_dir)};
  if (out.policy.role() != Role::policy) throw Error("checkpoint", policy.string() + " is not a policy");
  if (out.disc.role() != Role::discriminator) {
    throw Error("checkpoint", disc.string() + " is not a discriminator");
  }
  if (out.policy.arch().vocab_size != out.data.vocab.size() ||
      out.disc.arch().vocab_size != out.data.vocab.size()) {
    throw Error("checkpoint", "checkpoint vocabulary size does not match the dataset");
  }
  return out;
}

}  // namespace

void cmd_gen_data(const LabConfig& cfg, const fs::path& out) {
  cfg.validate();
  make_dir(out);
  const std::string started = utc_now();
  Dataset data = generate_dataset(cfg.task, cfg.data, cfg.seed);
  write_dataset(data, out);
  nlohmann::json manifest = {{"kind", "manifest"},
                             {"command", "gen-data"},
                             {"config", config_to_json(cfg)},
                             {"vocab", data.vocab.to_json()},
                             {"dataset", dataset_entry(out)},
                             {"seed", cfg.seed},
                             {"code_version", code_version()},
                             {"started_at", started},
                             {"finished_at", utc_now()},
                             {"artifacts",
                              {{"train", (out / "train.jsonl").string()},
                               {"eval", (out / "eval.jsonl").string()},
                               {"vocab", (out / "vocab.json").string()}}}};
  write_json(out / "manifest.json", manifest);
}

TrainResult cmd_train(TrainMode mode, const LabConfig& cfg, const fs::path& data_dir,
                      const fs::path& out_dir, int threads) {
  cfg.validate();
  const fs::path out = fs::absolute(out_dir).lexically_normal();
  Dataset data = load_dataset(data_dir);
  make_dir(out);
  nlohmann::json manifest = {{"kind", "manifest"},
                             {"command", "train"},
                             {"mode", train_mode_name(mode)},
                             {"config", config_to_json(cfg)},
                             {"vocab", data.vocab.to_json()},
                             {"dataset", dataset_entry(data_dir)},
                             {"seed", cfg.seed},
                             {"code_version", code_version()},
                             {"started_at", utc_now()},
                             {"finished_at", nullptr},
                             {"status", "running"},
                             {"artifacts", {{"metrics", (out / "metrics.jsonl").string()},
                                            {"checkpoints", nlohmann::json::array()}}}};
  write_json(out / "manifest.json", manifest);
  write_json(out / "config.json", config_to_json(cfg));

  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw Error("io", "cannot write " + (out / "metrics.jsonl").string());

  TrainRuntime rt;
  rt.threads = threads;
  rt.on_metrics = [&](const nlohmann::json& row) {
    metrics << row.dump() << '\n';
    metrics.flush();
  };
  rt.on_checkpoint = [&](int step, const ModelParams& policy, const ModelParams* disc) {
    const fs::path dir = out / "checkpoints" / step_dir_name(step);
    save_checkpoint(dir / "policy.ckpt", policy);
    nlohmann::json entry = {{"step", step}, {"policy", (dir / "policy.ckpt").string()}};
    if (disc) {
      save_checkpoint(dir / "disc.ckpt", *disc);
      entry["disc"] = (dir / "disc.ckpt").string();
    }
    manifest["artifacts"]["checkpoints"].push_back(entry);
    manifest["artifacts"]["policy"] = entry["policy"];
    if (disc) manifest["artifacts"]["disc"] = entry["disc"];
    write_json(out / "manifest.json", manifest);
  };

  TrainResult res;
  try {
    res = run_training(mode, cfg.train, data, rt);
  } catch (...) {
    manifest["status"] = "failed";
    manifest["finished_at"] = utc_now();
    write_json(out / "manifest.json", manifest);
    throw;
  }
  if (mode != TrainMode::sft) {
    save_checkpoint(out / "warm_policy.ckpt", res.warm_policy);
    manifest["artifacts"]["warm_policy"] = (out / "warm_policy.ckpt").string();
  }
  manifest["status"] = "complete";
  manifest["finished_at"] = utc_now();
  write_json(out / "manifest.json", manifest);
  return res;
}

EvalReport cmd_eval(const LabConfig& cfg, const EvalInputs& in, const fs::path& out,
                    int threads) {
  cfg.validate();
  LoadedPair pair = load_pair(in);
  EvalReport report =
      rerank_eval(pair.policy, pair.disc, pair.data.eval, pair.data.vocab, cfg.eval, threads);
  make_dir(out);
  nlohmann::json j = report_to_json(report);
  j["config"] = cfg.eval;
  write_json(out / "report.json", j);
  write_file(out / "pass_at_k.csv", pass_table_csv(report));
  write_file(out / "candidates.csv", candidates_csv(report));
  return report;
}

std::vector<fs::path> cmd_viz(const LabConfig& cfg, const EvalInputs& in, const fs::path& out,
                              int threads) {
  cfg.validate();
  const VizConfig& viz = cfg.viz;
  LoadedPair pair = load_pair(in);
  const auto& vocab = pair.data.vocab;
  const auto& tasks = viz.split == "train" ? pair.data.train : pair.data.eval;
  const int begin = std::min<int>(viz.first_task, static_cast<int>(tasks.size()));
  const int end = std::min<int>(begin + viz.max_tasks, static_cast<int>(tasks.size()));
  std::vector<fs::path> written;
  if (begin >= end) {
    std::cerr << "warning: empty trace selection, nothing rendered\n";
    return written;
  }
  const RenderTarget target = render_target_from_name(viz.target);
  if (target == RenderTarget::html) make_dir(out);
  bool have_correct = false, have_wrong = false;
  for (int idx = begin; idx < end && !(have_correct && have_wrong); ++idx) {
    const TaskInstance& task = tasks[idx];
    std::vector<Trace> members(1 + viz.group_size);
    members[0] = render_expert_trace(task, vocab, pair.data.task.max_len);
    parallel_for(viz.group_size, threads, [&](std::size_t g) {
      Rng rng = make_rng(cfg.eval.seed, "viz.sample",
                         static_cast<std::uint64_t>(idx) * viz.group_size + g);
      members[g + 1] = sample_trace(pair.policy, task.prompt_tokens, cfg.eval.decode, rng, vocab);
    });
    std::vector<std::vector<double>> raw;
    for (const auto& m : members) raw.push_back(token_rewards(disc_token_logits(pair.disc, m)));
    StandardizedGroup sg = group_standardize(raw);
    for (std::size_t g = 1; g < members.size(); ++g) {
      const bool correct = verify_signals(members[g], task, vocab).correctness != 0;
      if ((correct && have_correct) || (!correct && have_wrong)) continue;
      (correct ? have_correct : have_wrong) = true;
      const std::vector<double> values =
          viz.raw ? raw[g] : discounted_advantages(sg.rewards[g], viz.gamma);
      const std::string name =
          viz.split + "_" + std::to_string(idx) + "_" + (correct ? "correct" : "wrong");
      const std::string doc = render_heatmap(
          members[g], values, vocab, target,
          name + " (" + (viz.raw ? "raw reward" : "standardised discounted reward") + ")");
      if (target == RenderTarget::ansi) {
        std::cout << doc;
      } else {
        const fs::path path = out / (name + ".html");
        write_file(path, doc);
        written.push_back(path);
      }
    }
  }
  if (!have_correct || !have_wrong) {
    std::cerr << "warning: no " << (have_correct ? "wrong" : "correct")
              << " example found in the selected tasks\n";
  }
  return written;
}

}  // namespace airl
