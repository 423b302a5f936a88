#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "airl/trace.hpp"

namespace airl {

inline constexpr double kSigmaFloor = 1e-6;

// Arrays cover response positions [prompt_len, T) of one trace.
struct RewardProfile {
  std::vector<double> raw;
  std::vector<double> standardized;
  std::vector<double> advantage;
  double gamma = 0.9;
  double rerank_score = 0.0;
};

struct GroupStats {
  double baseline = 0.0;  // mean of last-valid-token rewards
  double scale = 1.0;     // sample std (divisor |S| - 1), floored
  int group_size = 0;
};

// r_t = log D_t - log(1 - D_t), which for D = sigmoid(z) is z itself.
std::vector<double> token_rewards(std::span<const double> disc_logits);

struct StandardizedGroup {
  GroupStats stats;
  std::vector<std::vector<double>> rewards;
};

// Standardises every token reward of every member with the mean and sample
// standard deviation of the members' last-token rewards. Needs >= 2 members.
StandardizedGroup group_standardize(
    const std::vector<std::vector<double>>& raw_rewards,
    double sigma_floor = kSigmaFloor);

// A_t = sum_{s >= t} gamma^(s-t) r_s via the backward recursion
// A_t = r_t + gamma A_{t+1}.
std::vector<double> discounted_advantages(std::span<const double> rewards,
                                          double gamma);

enum class RerankMode {
  suffix_sum,         // mean of discounted suffix sums over answer tokens
  position_weighted,  // mean of gamma^(t - answer_start) r_t over answer tokens
};

struct RerankScore {
  double value = 0.0;
  bool whole_response = false;  // answer span empty, averaged over response
};

RerankScore rerank_score(const Trace& trace, std::span<const double> raw,
                         const SegmentMap& segments, double gamma,
                         RerankMode mode = RerankMode::suffix_sum);

// Undiscounted mean raw reward over the answer span (same fallback).
RerankScore mean_answer_reward(const Trace& trace, std::span<const double> raw,
                               const SegmentMap& segments);

RewardProfile make_profile(const Trace& trace, std::vector<double> raw,
                           std::vector<double> standardized, double gamma,
                           const SegmentMap& segments);

nlohmann::json profile_to_json(const RewardProfile& profile,
                               const Trace& trace, const Vocabulary& vocab);

}  // namespace airl
