#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "airl/checkpoint.hpp"
#include "airl/config.hpp"
#include "airl/run.hpp"

using namespace airl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("airl_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

LabConfig small_lab(std::uint64_t seed = 3) {
  nlohmann::json j = {
      {"task", {{"min_ops", 1}, {"max_ops", 2}, {"start_max", 9}, {"add_operand_max", 9},
                {"mul_operand_max", 3}, {"value_min", 0}, {"value_max", 40}, {"max_len", 48}}},
      {"data", {{"train_size", 40}, {"eval_size", 8}}},
      {"train", {{"iterations", 2}, {"batch_size", 2}, {"group_size", 2}, {"log_every", 1},
                 {"checkpoint_every", 1}, {"monitor_tasks", 4},
                 {"warm_start", {{"steps", 3}, {"subset", 20}, {"batch_size", 4}, {"lr", 1e-3}}},
                 {"decode", {{"max_new_tokens", 24}, {"top_p", 1.0}}},
                 {"policy_arch", {{"max_len", 48}, {"d_model", 16}, {"d_ff", 32}, {"n_layers", 1}}},
                 {"disc_arch", {{"max_len", 48}, {"d_model", 16}, {"d_ff", 32}, {"n_layers", 1}}}}},
      {"eval", {{"num_candidates", 4}, {"k_list", {1, 3}}, {"decode", {{"max_new_tokens", 24}}}}},
      {"viz", {{"max_tasks", 8}, {"group_size", 4}}}};
  LabConfig c = config_from_json(j);
  c.set_seed(seed);
  return c;
}

std::string slurp(const fs::path& p) { return read_file(p); }

struct Proc {
  int status = 0;
  std::string out;
};

Proc run(const std::string& args) {
  const std::string cmd = std::string(AIRL_LAB_PATH) + " " + args + " 2>&1";
  Proc p;
  FILE* f = ::popen(cmd.c_str(), "r");
  REQUIRE(f != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), f)) > 0) p.out.append(buf.data(), n);
  const int rc = ::pclose(f);
  p.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return p;
}

struct Fixture {
  fs::path data, run_dir;
  LabConfig cfg = small_lab();
};

const Fixture& trained() {
  static const Fixture fx = [] {
    Fixture f;
    f.data = scratch("data");
    f.run_dir = scratch("run");
    cmd_gen_data(f.cfg, f.data);
    cmd_train(TrainMode::airl, f.cfg, f.data, f.run_dir, 1);
    return f;
  }();
  return fx;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise") {
  ModelParams p = init_params(Role::discriminator, {30, 16, 8, 2, 16, 1}, 4, false);
  p.values()[3] = -0.0f;
  p.values()[4] = 1e-42f;  // subnormal
  const fs::path path = scratch("ckpt") / "nested" / "d.ckpt";
  save_checkpoint(path, p);
  const ModelParams q = load_checkpoint(path);
  CHECK(q.role() == Role::discriminator);
  CHECK(q.arch() == p.arch());
  REQUIRE(q.size() == p.size());
  CHECK(std::memcmp(q.data(), p.data(), p.size() * sizeof(float)) == 0);
  CHECK(encode_checkpoint(q) == encode_checkpoint(p));
  CHECK(encode_checkpoint(p).rfind("AIRL CKPT", 0) == 0);
}

TEST_CASE("damaged checkpoints are rejected") {
  const ModelParams p = init_params(Role::policy, {30, 16, 8, 2, 16, 1}, 5, false);
  const std::string bytes = encode_checkpoint(p);
  auto code_of = [](const std::string& b) {
    try {
      decode_checkpoint(b);
    } catch (const Error& e) {
      return e.code() + ": " + e.what();
    }
    return std::string("ok");
  };
  CHECK(code_of(bytes) == "ok");
  CHECK(code_of(bytes.substr(0, bytes.size() - 11)).rfind("checksum", 0) == 0);
  std::string flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x01;
  CHECK(code_of(flipped).rfind("checksum", 0) == 0);
  std::string version = bytes;
  version[9] = 7;
  const std::string msg = code_of(version);
  CHECK(msg.rfind("checkpoint", 0) == 0);
  CHECK(msg.find("version") != std::string::npos);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(code_of(magic).rfind("checkpoint", 0) == 0);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing") / "none.ckpt"), Error);
}

TEST_CASE("config round trip and strictness") {
  const LabConfig c = small_lab(11);
  const nlohmann::json j = config_to_json(c);
  const LabConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.train.seed == derive_seed(11, "train"));
  CHECK(back.eval.seed == derive_seed(11, "eval"));
  nlohmann::json bad = j;
  bad["trian"] = nlohmann::json::object();
  CHECK_THROWS_AS(config_from_json(bad), Error);
  nlohmann::json wrong = j;
  wrong["train"]["gamma"] = 2.0;
  CHECK_THROWS_AS(config_from_json(wrong), Error);
  nlohmann::json manifest = {{"kind", "manifest"}, {"config", j}};
  CHECK(config_to_json(config_from_json(manifest)) == j);
}

TEST_CASE("gen-data is reproducible and writes the expected rows") {
  const LabConfig c = small_lab();
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  cmd_gen_data(c, a);
  cmd_gen_data(c, b);
  for (const char* f : {"train.jsonl", "eval.jsonl", "vocab.json"}) CHECK(slurp(a / f) == slurp(b / f));
  std::ifstream in(a / "train.jsonl");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto row = nlohmann::json::parse(line);
    for (const char* key : {"task", "prompt_text", "expert_text", "ground_truth", "split"}) {
      CHECK(row.contains(key));
    }
    CHECK(row.at("split") == "train");
    ++rows;
  }
  CHECK(rows == 40);
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("dataset").at("digests").size() == 3);
  CHECK(manifest.contains("code_version"));
  const Dataset d = load_dataset(a);
  CHECK(d.train.size() == 40);
  CHECK(d.eval.size() == 8);
}

TEST_CASE("gen-data into an unwritable path fails") {
  const fs::path file = scratch("blocker") / "file";
  write_file(file, "x");
  CHECK_THROWS_AS(cmd_gen_data(small_lab(), file / "sub"), Error);
}

TEST_CASE("train writes metrics, checkpoints and a manifest") {
  const auto& fx = trained();
  const auto manifest = nlohmann::json::parse(slurp(fx.run_dir / "manifest.json"));
  CHECK(manifest.at("status") == "complete");
  CHECK(manifest.at("mode") == "airl");
  CHECK(manifest.at("artifacts").at("checkpoints").size() == 2);
  CHECK(fs::exists(manifest.at("artifacts").at("disc").get<std::string>()));
  CHECK(fs::exists(fx.run_dir / "warm_policy.ckpt"));
  CHECK(fs::exists(fx.run_dir / "checkpoints" / "step_000002" / "policy.ckpt"));
  int rows = 0;
  std::ifstream in(fx.run_dir / "metrics.jsonl");
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("rerunning from the manifest reproduces the metrics bytes") {
  const auto& fx = trained();
  const LabConfig again = load_config(fx.run_dir / "manifest.json");
  const fs::path second = scratch("run_again");
  cmd_train(TrainMode::airl, again, fx.data, second, 2);
  CHECK(slurp(second / "metrics.jsonl") == slurp(fx.run_dir / "metrics.jsonl"));
}

TEST_CASE("sft smoke run") {
  const auto& fx = trained();
  const fs::path out = scratch("run_sft");
  cmd_train(TrainMode::sft, fx.cfg, fx.data, out, 1);
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("status") == "complete");
  CHECK_FALSE(manifest.at("artifacts").contains("disc"));
}

TEST_CASE("eval writes a report and is reproducible") {
  const auto& fx = trained();
  EvalInputs in;
  in.run_dir = fx.run_dir;
  const fs::path a = scratch("eval_a"), b = scratch("eval_b");
  const EvalReport r = cmd_eval(fx.cfg, in, a, 1);
  cmd_eval(fx.cfg, in, b, 2);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
  CHECK(slurp(a / "candidates.csv") == slurp(b / "candidates.csv"));
  CHECK(r.pass.size() == 2);
  const auto j = nlohmann::json::parse(slurp(a / "report.json"));
  CHECK(j.at("pass_at_k").size() == 2);

  LabConfig bad = fx.cfg;
  bad.eval.k_list = {1, 5};
  CHECK_THROWS_AS(cmd_eval(bad, in, scratch("eval_bad"), 1), Error);
}

TEST_CASE("viz emits heatmaps or warns") {
  const auto& fx = trained();
  EvalInputs in;
  in.run_dir = fx.run_dir;
  const fs::path out = scratch("viz");
  const auto files = cmd_viz(fx.cfg, in, out, 1);
  CHECK(files.size() >= 1);
  CHECK(files.size() <= 2);
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    CHECK(name.rfind("eval_", 0) == 0);
    CHECK((name.find("_correct.html") != std::string::npos || name.find("_wrong.html") != std::string::npos));
  }
  LabConfig empty = fx.cfg;
  empty.viz.first_task = 1000;
  const fs::path none = scratch("viz_empty");
  CHECK(cmd_viz(empty, in, none, 1).empty());
  CHECK(fs::is_empty(none));
}

TEST_CASE("viz with a corrupted checkpoint reports a checksum error") {
  const auto& fx = trained();
  const fs::path dir = scratch("corrupt");
  std::string bytes = slurp(fx.run_dir / "warm_policy.ckpt");
  bytes[bytes.size() / 2] ^= 0x10;
  write_file(dir / "policy.ckpt", bytes);
  EvalInputs in;
  in.run_dir = fx.run_dir;
  in.policy = dir / "policy.ckpt";
  try {
    cmd_viz(fx.cfg, in, scratch("viz_bad"), 1);
    FAIL("expected a checksum error");
  } catch (const Error& e) {
    CHECK(e.code() == "checksum");
  }
}

TEST_CASE("command line: help, errors and exit codes") {
  const auto& fx = trained();
  const Proc help = run("--help");
  CHECK(help.status == 0);
  for (const char* cmd : {"gen-data", "train", "eval", "viz"}) CHECK(help.out.find(cmd) != std::string::npos);

  const Proc mode = run("train --mode dpo --data " + fx.data.string() + " --out " + scratch("x").string());
  CHECK(mode.status == 2);
  CHECK(mode.out.rfind("error[usage]: ", 0) == 0);
  CHECK(mode.out.find("Usage") != std::string::npos);

  const Proc missing = run("eval --run " + scratch("nothing").string() + " --out " + scratch("y").string());
  CHECK(missing.status == 1);
  CHECK(missing.out.rfind("error[", 0) == 0);

  const Proc threads = run("gen-data --threads 0 --out " + scratch("z").string());
  CHECK(threads.status == 2);

  const Proc printed = run("train --print-config --seed 9");
  CHECK(printed.status == 0);
  const auto cfg = nlohmann::json::parse(printed.out);
  CHECK(cfg.at("seed") == 9);
  CHECK(cfg.at("train").at("iterations") == 500);
  CHECK(cfg.at("train").at("gamma") == 0.9);
}

TEST_CASE("command line: full pipeline") {
  const fs::path root = scratch("pipeline");
  const fs::path cfg_path = root / "config.json";
  write_file(cfg_path, config_to_json(small_lab(5)).dump());
  const std::string common = " --config " + cfg_path.string() + " --threads 2";
  CHECK(run("gen-data" + common + " --out " + (root / "data").string()).status == 0);
  CHECK(run("train --mode airl --data " + (root / "data").string() + common + " --out " +
            (root / "run").string()).status == 0);
  const Proc ev = run("eval --run " + (root / "run").string() + common + " --n 4 --k 1,2 --out " +
                      (root / "eval").string());
  CHECK(ev.status == 0);
  CHECK(fs::exists(root / "eval" / "pass_at_k.csv"));
  const Proc too_big = run("eval --run " + (root / "run").string() + common + " --n 2 --k 1,3 --out " +
                           (root / "eval2").string());
  CHECK(too_big.status != 0);
  CHECK(too_big.out.rfind("error[config]: ", 0) == 0);
  const Proc ansi = run("viz --run " + (root / "run").string() + common + " --target ansi --count 4");
  CHECK(ansi.status == 0);
  CHECK(ansi.out.find("\x1b[") != std::string::npos);
}
