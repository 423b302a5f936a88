#include "airl/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace airl {

void DataConfig::validate() const {
  if (train_size < 1 || eval_size < 1) {
    throw Error("config", "data: split sizes must be >= 1");
  }
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"train_size", c.train_size}, {"eval_size", c.eval_size}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  DataConfig d;
  c.train_size = j.value("train_size", d.train_size);
  c.eval_size = j.value("eval_size", d.eval_size);
}

Dataset generate_dataset(const TaskParams& task, const DataConfig& data,
                         std::uint64_t seed, Vocabulary vocab) {
  task.validate();
  data.validate();
  Dataset out;
  out.vocab = std::move(vocab);
  out.task = task;
  Rng train_rng = make_rng(seed, "data.train");
  std::set<std::vector<TokenId>> seen;
  for (int i = 0; i < data.train_size; ++i) {
    out.train.push_back(sample_task(train_rng, task, out.vocab));
    seen.insert(out.train.back().prompt_tokens);
  }
  Rng eval_rng = make_rng(seed, "data.eval");
  for (int i = 0; i < data.eval_size; ++i) {
    TaskInstance t = sample_task(eval_rng, task, out.vocab);
    for (int retry = 0; retry < 100 && seen.count(t.prompt_tokens); ++retry) {
      t = sample_task(eval_rng, task, out.vocab);
    }
    out.eval.push_back(std::move(t));
  }
  return out;
}

std::vector<Trace> expert_traces(std::span<const TaskInstance> tasks,
                                 const Vocabulary& vocab, int max_len) {
  std::vector<Trace> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(render_expert_trace(t, vocab, max_len));
  return out;
}

std::string split_jsonl(const Dataset& data, std::string_view split) {
  const auto& tasks = split == "train" ? data.train : data.eval;
  std::ostringstream out;
  for (const auto& t : tasks) {
    Trace expert = render_expert_trace(t, data.vocab, data.task.max_len);
    nlohmann::json row = {
        {"task", task_to_json(t)},
        {"prompt_text", prompt_text(t)},
        {"expert_text", data.vocab.decode(expert.response())},
        {"ground_truth", t.ground_truth},
        {"split", split}};
    out << row.dump() << '\n';
  }
  return out.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("io", "write failed for " + path.string());
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("io", "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json vocab = {{"vocab", data.vocab.to_json()}, {"task", data.task}};
  write_file(dir / "vocab.json", vocab.dump(2) + "\n");
  write_file(dir / "train.jsonl", split_jsonl(data, "train"));
  write_file(dir / "eval.jsonl", split_jsonl(data, "eval"));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset out;
  try {
    auto meta = nlohmann::json::parse(read_file(dir / "vocab.json"));
    out.vocab = Vocabulary::from_json(meta.at("vocab"));
    out.task = meta.at("task").get<TaskParams>();
    for (std::string split : {"train", "eval"}) {
      auto& tasks = split == "train" ? out.train : out.eval;
      std::istringstream lines(read_file(dir / (split + ".jsonl")));
      std::string line;
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        tasks.push_back(task_from_json(nlohmann::json::parse(line).at("task"),
                                       out.vocab));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("data", "malformed dataset in " + dir.string() + ": " + e.what());
  }
  if (out.train.empty() || out.eval.empty()) {
    throw Error("data", "dataset in " + dir.string() + " has an empty split");
  }
  return out;
}

}  // namespace airl
