#include "airl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace airl {

std::vector<double> token_rewards(std::span<const double> disc_logits) {
  return {disc_logits.begin(), disc_logits.end()};
}

StandardizedGroup group_standardize(
    const std::vector<std::vector<double>>& raw_rewards, double sigma_floor) {
  const std::size_t n = raw_rewards.size();
  if (n < 2) throw std::invalid_argument("group needs at least two traces");
  double mean = 0.0;
  for (const auto& r : raw_rewards) {
    if (r.empty()) throw std::invalid_argument("trace without rewards");
    mean += r.back();
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (const auto& r : raw_rewards) ss += (r.back() - mean) * (r.back() - mean);
  const double sigma =
      std::max(std::sqrt(ss / static_cast<double>(n - 1)), sigma_floor);

  StandardizedGroup out;
  out.stats = {mean, sigma, static_cast<int>(n)};
  out.rewards.reserve(n);
  for (const auto& r : raw_rewards) {
    std::vector<double> s(r.size());
    for (std::size_t t = 0; t < r.size(); ++t) s[t] = (r[t] - mean) / sigma;
    out.rewards.push_back(std::move(s));
  }
  return out;
}

std::vector<double> discounted_advantages(std::span<const double> rewards,
                                          double gamma) {
  if (gamma < 0.0 || gamma > 1.0) {
    throw std::invalid_argument("gamma must be in [0, 1]");
  }
  std::vector<double> adv(rewards.size());
  double next = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    next = rewards[i] + gamma * next;
    adv[i] = next;
  }
  return adv;
}

namespace {

Span scored_span(const Trace& trace, const SegmentMap& segments,
                 bool& whole_response) {
  whole_response = segments.answer.empty();
  if (whole_response) return {trace.prompt_len(), trace.length()};
  return segments.answer;
}

}  // namespace

RerankScore rerank_score(const Trace& trace, std::span<const double> raw,
                         const SegmentMap& segments, double gamma,
                         RerankMode mode) {
  if (static_cast<int>(raw.size()) != trace.response_len()) {
    throw std::invalid_argument("reward count does not match response length");
  }
  RerankScore out;
  Span span = scored_span(trace, segments, out.whole_response);
  const int p = trace.prompt_len();
  double sum = 0.0;
  if (mode == RerankMode::suffix_sum) {
    auto suffix = discounted_advantages(raw, gamma);
    for (int t = span.begin; t < span.end; ++t) sum += suffix[t - p];
  } else {
    double w = 1.0;
    for (int t = span.begin; t < span.end; ++t, w *= gamma) {
      sum += w * raw[t - p];
    }
  }
  out.value = sum / span.size();
  return out;
}

RerankScore mean_answer_reward(const Trace& trace, std::span<const double> raw,
                               const SegmentMap& segments) {
  return rerank_score(trace, raw, segments, 0.0, RerankMode::suffix_sum);
}

RewardProfile make_profile(const Trace& trace, std::vector<double> raw,
                           std::vector<double> standardized, double gamma,
                           const SegmentMap& segments) {
  RewardProfile profile;
  profile.gamma = gamma;
  profile.advantage = discounted_advantages(standardized, gamma);
  profile.rerank_score = rerank_score(trace, raw, segments, gamma).value;
  profile.raw = std::move(raw);
  profile.standardized = std::move(standardized);
  return profile;
}

nlohmann::json profile_to_json(const RewardProfile& profile,
                               const Trace& trace, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (TokenId t : trace.response()) tokens.push_back(vocab.symbol(t));
  return {{"tokens", tokens},
          {"raw", profile.raw},
          {"standardized", profile.standardized},
          {"advantage", profile.advantage},
          {"gamma", profile.gamma},
          {"score", profile.rerank_score}};
}

}  // namespace airl
