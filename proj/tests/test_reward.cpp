#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "airl/eval.hpp"
#include "airl/reward.hpp"
#include "helpers.hpp"

using namespace airl;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = build_vocabulary();
  return v;
}

// Well-formed trace with the given think and answer digit counts.
Trace shaped_trace(int think_digits, int answer_digits, Rng& rng) {
  std::uniform_int_distribution<int> digit(1, 9);
  std::string resp = "<think>";
  for (int i = 0; i < think_digits; ++i) resp += " " + std::to_string(digit(rng));
  resp += " </think> <answer>";
  for (int i = 0; i < answer_digits; ++i) resp += " " + std::to_string(digit(rng));
  resp += " </answer> <eos>";
  return testutil::trace_of(vocab(), "result ?", resp);
}

std::vector<double> random_rewards(std::size_t n, Rng& rng) {
  std::normal_distribution<double> z(0.3, 1.5);
  std::vector<double> r(n);
  for (auto& v : r) v = z(rng);
  return r;
}

std::vector<std::size_t> order_by(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

TEST_CASE("token rewards are the logits") {
  const std::vector<double> z = {0.0, 2.1972, -3.5, 1e-12};
  const auto r = token_rewards(z);
  CHECK(r == z);
  CHECK(r[1] == doctest::Approx(std::log(0.9 / 0.1)).epsilon(1e-4));
  for (double v : {0.3, 5.0, -7.25}) {
    const double a = token_rewards(std::vector<double>{v})[0];
    const double b = token_rewards(std::vector<double>{-v})[0];
    CHECK(a + b == 0.0);
    // log D - log(1 - D) evaluated directly.
    const double d = 1.0 / (1.0 + std::exp(-v));
    CHECK(a == doctest::Approx(std::log(d) - std::log(1.0 - d)).epsilon(1e-9));
  }
}

TEST_CASE("group standardisation hand example") {
  const auto g = group_standardize({{0.5, 1.0}, {2.0}, {7.0, 3.0}});
  CHECK(g.stats.baseline == doctest::Approx(2.0));
  CHECK(g.stats.scale == doctest::Approx(1.0));
  CHECK(g.stats.group_size == 3);
  CHECK(g.rewards[0].back() == doctest::Approx(-1.0));
  CHECK(g.rewards[1].back() == doctest::Approx(0.0));
  CHECK(g.rewards[2].back() == doctest::Approx(1.0));
  CHECK(g.rewards[0][0] == doctest::Approx(-1.5));
  CHECK(g.rewards[2][0] == doctest::Approx(5.0));
}

TEST_CASE("degenerate group uses the floor") {
  const auto g = group_standardize({{4.0, 2.0}, {1.0, 2.0}, {2.0}});
  CHECK(g.stats.scale == kSigmaFloor);
  for (const auto& r : g.rewards) CHECK(r.back() == 0.0);
  CHECK_THROWS(group_standardize({{1.0}}));
}

TEST_CASE("standardisation is one affine map per group") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> raw;
    const int n = 2 + static_cast<int>(rng() % 15);
    for (int i = 0; i < n; ++i) raw.push_back(random_rewards(1 + rng() % 20, rng));
    const auto g = group_standardize(raw);
    double mean = 0, ss = 0;
    for (const auto& r : g.rewards) mean += r.back();
    mean /= n;
    for (const auto& r : g.rewards) ss += (r.back() - mean) * (r.back() - mean);
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::sqrt(ss / (n - 1)) == doctest::Approx(1.0).epsilon(1e-6));
    for (int i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < raw[i].size(); ++t) {
        CHECK(g.rewards[i][t] * g.stats.scale + g.stats.baseline ==
              doctest::Approx(raw[i][t]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("discounted advantages") {
  const std::vector<double> ones = {1, 1, 1};
  CHECK(discounted_advantages(ones, 1.0) == std::vector<double>{3, 2, 1});
  CHECK(discounted_advantages(ones, 0.5) == std::vector<double>{1.75, 1.5, 1});
  const std::vector<double> r = {0.3, -2.0, 4.5};
  CHECK(discounted_advantages(r, 0.0) == r);
  CHECK_THROWS(discounted_advantages(r, 1.5));

  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_rewards(1 + rng() % 30, rng);
    const double gamma = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto a = discounted_advantages(x, gamma);
    CHECK(a.back() == x.back());
    for (std::size_t t = 0; t + 1 < x.size(); ++t) CHECK(a[t] == x[t] + gamma * a[t + 1]);
    // Closed form.
    for (std::size_t t = 0; t < x.size(); ++t) {
      double s = 0, w = 1;
      for (std::size_t u = t; u < x.size(); ++u, w *= gamma) s += w * x[u];
      CHECK(a[t] == doctest::Approx(s).epsilon(1e-9));
    }
  }
}

TEST_CASE("rerank score examples") {
  Rng rng(1);
  const Trace t = shaped_trace(3, 1, rng);
  const SegmentMap seg = segment(t, vocab());
  const std::vector<double> zeros(t.response_len(), 0.0);
  CHECK(rerank_score(t, zeros, seg, 0.9).value == 0.0);

  const std::vector<double> flat(t.response_len(), 1.7);
  CHECK(rerank_score(t, flat, seg, 0.0).value == doctest::Approx(1.7));

  const auto raw = random_rewards(t.response_len(), rng);
  const auto suffix = discounted_advantages(raw, 0.9);
  const int answer_pos = seg.answer.begin - t.prompt_len();
  CHECK(rerank_score(t, raw, seg, 0.9).value == doctest::Approx(suffix[answer_pos]));
  CHECK_FALSE(rerank_score(t, raw, seg, 0.9).whole_response);

  // Position-weighted reading of a two-digit answer.
  const Trace two = shaped_trace(2, 2, rng);
  const SegmentMap s2 = segment(two, vocab());
  const auto r2 = random_rewards(two.response_len(), rng);
  const int a0 = s2.answer.begin - two.prompt_len();
  CHECK(rerank_score(two, r2, s2, 0.5, RerankMode::position_weighted).value ==
        doctest::Approx((r2[a0] + 0.5 * r2[a0 + 1]) / 2));
}

TEST_CASE("rerank falls back to the whole response without an answer") {
  const Trace t = testutil::trace_of(vocab(), "result ?", "<think> 3 4 <eos>");
  const SegmentMap seg = segment(t, vocab());
  const std::vector<double> raw = {1, 2, 3, 4};
  const RerankScore s = rerank_score(t, raw, seg, 0.0);
  CHECK(s.whole_response);
  CHECK(s.value == doctest::Approx(2.5));
  CHECK_THROWS(rerank_score(t, std::vector<double>{1, 2}, seg, 0.0));
}

TEST_CASE("rank preservation when the map commutes with scoring") {
  // With gamma = 0 the score is a mean of affinely mapped rewards, so any
  // group keeps its order. With gamma > 0 the same holds for candidates
  // sharing answer length and distance from the end of the response.
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const bool same_shape = trial % 2 == 1;
    const double gamma = same_shape ? std::uniform_real_distribution<double>(0, 1)(rng) : 0.0;
    const int n = 2 + static_cast<int>(rng() % 10);
    std::vector<Trace> traces;
    std::vector<std::vector<double>> raw;
    for (int i = 0; i < n; ++i) {
      const int answer = same_shape ? 2 : 1 + static_cast<int>(rng() % 3);
      traces.push_back(shaped_trace(1 + static_cast<int>(rng() % 8), answer, rng));
      raw.push_back(random_rewards(traces.back().response_len(), rng));
    }
    const auto g = group_standardize(raw);
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      const SegmentMap seg = segment(traces[i], vocab());
      a.push_back(rerank_score(traces[i], raw[i], seg, gamma).value);
      b.push_back(rerank_score(traces[i], g.rewards[i], seg, gamma).value);
    }
    CHECK(order_by(a) == order_by(b));
  }
}

TEST_CASE("discounting breaks rank preservation across answer lengths") {
  // One- and two-digit answers under a large common reward level: the
  // standardised offset -mean/sigma is multiplied by different discount sums.
  const Trace one = testutil::trace_of(vocab(), "result ?", "<think> 1 </think> <answer> 5 </answer> <eos>");
  const Trace two = testutil::trace_of(vocab(), "result ?", "<think> 1 </think> <answer> 1 5 </answer> <eos>");
  std::vector<double> r1(one.response_len(), 5.0), r2(two.response_len(), 5.0);
  r1.back() = 5.5;
  r2.back() = 4.5;
  const auto g = group_standardize({r1, r2});
  const double gamma = 0.9;
  const double raw1 = rerank_score(one, r1, segment(one, vocab()), gamma).value;
  const double raw2 = rerank_score(two, r2, segment(two, vocab()), gamma).value;
  const double std1 = rerank_score(one, g.rewards[0], segment(one, vocab()), gamma).value;
  const double std2 = rerank_score(two, g.rewards[1], segment(two, vocab()), gamma).value;
  CHECK((raw1 > raw2) != (std1 > std2));
}

TEST_CASE("profile bundles the pieces") {
  Rng rng(4);
  const Trace t = shaped_trace(4, 2, rng);
  const auto raw = random_rewards(t.response_len(), rng);
  std::vector<double> stdz = raw;
  for (auto& v : stdz) v = (v - 0.2) / 1.3;
  const auto p = make_profile(t, raw, stdz, 0.9, segment(t, vocab()));
  CHECK(p.raw == raw);
  CHECK(p.standardized == stdz);
  CHECK(p.advantage == discounted_advantages(stdz, 0.9));
  CHECK(p.rerank_score == rerank_score(t, raw, segment(t, vocab()), 0.9).value);
  const auto j = profile_to_json(p, t, vocab());
  CHECK(j.at("tokens").size() == static_cast<std::size_t>(t.response_len()));
  CHECK(j.at("gamma").get<double>() == 0.9);
  for (const char* key : {"raw", "standardized", "advantage", "score"}) CHECK(j.contains(key));
}
