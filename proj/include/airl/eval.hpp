#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "airl/model.hpp"
#include "airl/reward.hpp"
#include "airl/synthgsm.hpp"

namespace airl {

struct CandidateSet {
  std::vector<double> scores;
  std::vector<int> correct;  // 0/1 per candidate
  std::uint64_t ranking_seed = 0;
};

enum class Ranking { reward, random };

// Candidate indices best-first. Reward ranking sorts by descending score with
// ties broken by index; random ranking is a shuffle seeded by ranking_seed.
std::vector<std::size_t> rank_candidates(const CandidateSet& set,
                                         Ranking ranking);

// Fraction of sets whose top-k (under `ranking`) contains a correct candidate.
// Throws std::invalid_argument when k is outside [1, N] for some set.
double pass_at_k_given_N(std::span<const CandidateSet> sets, int k,
                         Ranking ranking);

// 1 - C(N-c, k) / C(N, k): success probability of a uniformly random top-k.
double random_pass_expectation(int n, int correct, int k);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

// Welch unequal-variance t-test of mean(a) - mean(b). Each group needs >= 2.
WelchResult separation_tstat(std::span<const double> a,
                             std::span<const double> b);

// Pearson r, or nullopt when either vector has zero variance.
std::optional<double> pearson(std::span<const double> x,
                              std::span<const double> y);

struct NamedSeries {
  std::string name;
  std::vector<double> values;
};

using CorrelationMatrix = std::vector<std::vector<std::optional<double>>>;

CorrelationMatrix pearson_matrix(std::span<const NamedSeries> rows,
                                 std::span<const NamedSeries> cols);

struct EvalConfig {
  int num_candidates = 16;
  std::vector<int> k_list = {1, 3, 5, 10};
  DecodeConfig decode;
  double gamma = 0.9;
  RerankMode rerank_mode = RerankMode::suffix_sum;
  int max_tasks = 0;  // 0 = all
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct PassAtK {
  int k = 0;
  double reward = 0.0;
  double random = 0.0;
  double random_expected = 0.0;
  double reward_ci = 0.0;  // normal-approximation half-width
  double random_ci = 0.0;
};

struct CandidateRecord {
  std::size_t task = 0;
  std::size_t candidate = 0;
  double score = 0.0;        // discounted answer-span score
  double mean_reward = 0.0;  // undiscounted answer-span mean
  bool whole_response = false;
  VerifiableSignals signals;
};

struct EvalReport {
  int num_candidates = 0;
  int tasks_evaluated = 0;
  int tasks_skipped = 0;
  int decode_failures = 0;
  std::vector<PassAtK> pass;
  std::optional<WelchResult> separation;  // correct vs incorrect scores
  std::vector<std::string> score_names;
  std::vector<std::string> signal_names;
  CorrelationMatrix correlations;
  std::vector<CandidateRecord> candidates;
  std::vector<CandidateSet> sets;
};

EvalReport rerank_eval(const ModelParams& policy, const ModelParams& disc,
                       std::span<const TaskInstance> tasks,
                       const Vocabulary& vocab, const EvalConfig& cfg,
                       int threads = 1);

// Mean correctness of `samples` decoded traces per task.
double correctness_rate(const ModelParams& policy,
                        std::span<const TaskInstance> tasks,
                        const Vocabulary& vocab, const DecodeConfig& decode,
                        int samples, std::uint64_t seed, int threads = 1);

nlohmann::json report_to_json(const EvalReport& report);
std::string pass_table_csv(const EvalReport& report);
std::string candidates_csv(const EvalReport& report);

}  // namespace airl
