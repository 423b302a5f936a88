#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "airl/synthgsm.hpp"
#include "airl/trace.hpp"

namespace airl {

struct DataConfig {
  int train_size = 2000;
  int eval_size = 200;

  void validate() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct Dataset {
  Vocabulary vocab;
  TaskParams task;
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> eval;
};

// Train and eval splits come from separate seed streams; eval prompts that
// already occur in train are resampled (bounded retries).
Dataset generate_dataset(const TaskParams& task, const DataConfig& data,
                         std::uint64_t seed, Vocabulary vocab = build_vocabulary());

std::vector<Trace> expert_traces(std::span<const TaskInstance> tasks,
                                 const Vocabulary& vocab, int max_len);

// One JSON object per line: {task, prompt_text, expert_text, ground_truth, split}.
std::string split_jsonl(const Dataset& data, std::string_view split);

// Writes train.jsonl, eval.jsonl and vocab.json into dir.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace airl
