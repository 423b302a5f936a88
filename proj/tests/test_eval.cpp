#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "airl/dataset.hpp"
#include "airl/eval.hpp"

using namespace airl;

namespace {

double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Fraction of all N! orderings whose top-k contains a correct candidate.
double brute_force_random(const std::vector<int>& correct, int k) {
  std::vector<int> perm(correct.size());
  std::iota(perm.begin(), perm.end(), 0);
  long hits = 0, total = 0;
  do {
    bool any = false;
    for (int i = 0; i < k; ++i) any |= correct[perm[i]] != 0;
    hits += any;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

struct SmallPair {
  Dataset data;
  ModelParams policy, disc;
};

const SmallPair& small_pair() {
  static const SmallPair pair = [] {
    TaskParams task;
    task.min_ops = 1;
    task.max_ops = 2;
    task.start_max = 9;
    task.add_operand_max = 9;
    task.mul_operand_max = 3;
    task.value_min = 0;
    task.value_max = 40;
    task.max_len = 48;
    SmallPair p{generate_dataset(task, DataConfig{50, 12}, 3), {}, {}};
    ArchConfig arch{p.data.vocab.size(), 48, 16, 2, 32, 1};
    p.policy = init_params(Role::policy, arch, 1, false);
    for (auto& v : p.policy.values()) v *= 3.0f;
    p.disc = init_params(Role::discriminator, arch, 2, false);
    return p;
  }();
  return pair;
}

EvalConfig small_eval(int n) {
  EvalConfig cfg;
  cfg.num_candidates = n;
  cfg.k_list.clear();
  for (int k : {1, 3, 5, 10}) {
    if (k <= n) cfg.k_list.push_back(k);
  }
  cfg.decode.max_new_tokens = 24;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("pass@k hand example") {
  const std::vector<CandidateSet> sets = {{{0.9, 0.8, 0.7, 0.1}, {0, 0, 1, 0}, 5}};
  CHECK(pass_at_k_given_N(sets, 1, Ranking::reward) == 0.0);
  CHECK(pass_at_k_given_N(sets, 3, Ranking::reward) == 1.0);
  CHECK(pass_at_k_given_N(sets, 4, Ranking::reward) == 1.0);
  CHECK(pass_at_k_given_N(sets, 4, Ranking::random) == 1.0);
  CHECK_THROWS_AS(pass_at_k_given_N(sets, 5, Ranking::reward), std::invalid_argument);
  CHECK_THROWS_AS(pass_at_k_given_N(sets, 0, Ranking::reward), std::invalid_argument);
}

TEST_CASE("ties break by candidate index") {
  const CandidateSet set{{1.0, 2.0, 2.0, 1.0}, {0, 0, 1, 1}, 0};
  CHECK(rank_candidates(set, Ranking::reward) == std::vector<std::size_t>{1, 2, 0, 3});
  const std::vector<CandidateSet> sets = {set};
  CHECK(pass_at_k_given_N(sets, 1, Ranking::reward) == 0.0);
  CHECK(pass_at_k_given_N(sets, 2, Ranking::reward) == 1.0);
}

TEST_CASE("all incorrect gives zero and k = N ignores the ranking") {
  Rng rng(2);
  std::vector<CandidateSet> sets;
  for (int i = 0; i < 30; ++i) {
    CandidateSet s;
    s.ranking_seed = rng();
    for (int j = 0; j < 6; ++j) {
      s.scores.push_back(std::normal_distribution<double>()(rng));
      s.correct.push_back(static_cast<int>(rng() % 4 == 0));
    }
    sets.push_back(s);
  }
  CHECK(pass_at_k_given_N(sets, 6, Ranking::reward) == pass_at_k_given_N(sets, 6, Ranking::random));
  for (auto& s : sets) std::fill(s.correct.begin(), s.correct.end(), 0);
  for (int k = 1; k <= 6; ++k) {
    CHECK(pass_at_k_given_N(sets, k, Ranking::reward) == 0.0);
    CHECK(pass_at_k_given_N(sets, k, Ranking::random) == 0.0);
  }
}

TEST_CASE("pass@k is nondecreasing in k") {
  Rng rng(6);
  std::vector<CandidateSet> sets;
  for (int i = 0; i < 50; ++i) {
    CandidateSet s;
    s.ranking_seed = rng();
    for (int j = 0; j < 10; ++j) {
      s.scores.push_back(std::normal_distribution<double>()(rng));
      s.correct.push_back(static_cast<int>(rng() % 5 == 0));
    }
    sets.push_back(s);
  }
  for (Ranking r : {Ranking::reward, Ranking::random}) {
    double prev = 0.0;
    for (int k = 1; k <= 10; ++k) {
      const double v = pass_at_k_given_N(sets, k, r);
      CHECK(v >= prev);
      CHECK((v >= 0.0 && v <= 1.0));
      prev = v;
    }
  }
}

TEST_CASE("reward ranking agrees with brute-force subset enumeration") {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    CandidateSet s;
    for (int j = 0; j < n; ++j) {
      s.scores.push_back(static_cast<double>(rng() % 5));  // frequent ties
      s.correct.push_back(static_cast<int>(rng() % 3 == 0));
    }
    for (int k = 1; k <= n; ++k) {
      // Oracle: the top-k set is the k best by (score desc, index asc).
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      bool expected = false;
      for (int a = 0; a < n; ++a) {
        int better = 0;
        for (int b = 0; b < n; ++b) {
          better += s.scores[b] > s.scores[a] || (s.scores[b] == s.scores[a] && b < a);
        }
        if (better < k && s.correct[a]) expected = true;
      }
      const std::vector<CandidateSet> one = {s};
      CHECK(pass_at_k_given_N(one, k, Ranking::reward) == (expected ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("hypergeometric expectation matches enumeration") {
  for (int n = 1; n <= 7; ++n) {
    for (int c = 0; c <= n; ++c) {
      std::vector<int> correct(n, 0);
      std::fill(correct.begin(), correct.begin() + c, 1);
      for (int k = 1; k <= n; ++k) {
        const double expected = 1.0 - binom(n - c, k) / binom(n, k);
        CHECK(random_pass_expectation(n, c, k) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(brute_force_random(correct, k) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("random ranking converges to the expectation") {
  const int n = 8, c = 2;
  std::vector<CandidateSet> sets;
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    CandidateSet s;
    s.scores.assign(n, 0.0);
    s.correct.assign(n, 0);
    s.correct[1] = s.correct[6] = 1;
    s.ranking_seed = rng();
    sets.push_back(s);
  }
  for (int k : {1, 3, 5}) {
    CHECK(std::abs(pass_at_k_given_N(sets, k, Ranking::random) - random_pass_expectation(n, c, k)) <=
          0.01);
  }
}

TEST_CASE("Welch t-test") {
  const std::vector<double> a = {1, 2, 3, 4, 5}, b = {3, 4, 5, 6, 7};
  const WelchResult w = separation_tstat(a, b);
  CHECK(w.t == doctest::Approx(-2.0));
  CHECK(w.df == doctest::Approx(8.0));
  // Two-sided p for t = -2 with 8 degrees of freedom.
  CHECK(w.p == doctest::Approx(0.0805).epsilon(1e-3));

  CHECK(separation_tstat(a, a).t == 0.0);
  CHECK(separation_tstat(a, a).p == doctest::Approx(1.0));

  std::vector<double> lo(50), hi(50);
  for (int i = 0; i < 50; ++i) {
    lo[i] = (i % 2 ? 1e-9 : -1e-9);
    hi[i] = 1.0 + (i % 3 ? 1e-9 : -1e-9);
  }
  CHECK(std::abs(separation_tstat(lo, hi).t) > 1e6);
  CHECK_THROWS(separation_tstat(std::vector<double>{1.0}, b));
}

TEST_CASE("Pearson correlation") {
  const std::vector<double> x = {1, 2, 3, 4.5, 7};
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
  CHECK(*pearson(x, x) == doctest::Approx(1.0));
  CHECK(*pearson(x, neg) == doctest::Approx(-1.0));
  CHECK_FALSE(pearson(x, std::vector<double>(5, 2.0)).has_value());
  CHECK_THROWS(pearson(x, std::vector<double>{1, 2}));
  const std::vector<double> y = {2, 1, 4, 3, 5};
  // Hand value: cov / (sx sy).
  CHECK(*pearson(x, y) == doctest::Approx(12.0 / std::sqrt(220.0)).epsilon(1e-3));

  const std::vector<NamedSeries> rows = {{"x", x}, {"y", y}, {"c", std::vector<double>(5, 1.0)}};
  const auto m = pearson_matrix(rows, rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows.size(); ++j) {
      CHECK(m[i][j].has_value() == m[j][i].has_value());
      if (m[i][j]) {
        CHECK(*m[i][j] == doctest::Approx(*m[j][i]));
        CHECK((*m[i][j] >= -1.0 && *m[i][j] <= 1.0));
      }
    }
    if (m[i][i]) CHECK(*m[i][i] == doctest::Approx(1.0));
  }
  CHECK_FALSE(m[2][2].has_value());
}

TEST_CASE("eval config validation") {
  EvalConfig cfg;
  CHECK(cfg.k_list == std::vector<int>{1, 3, 5, 10});
  CHECK(cfg.num_candidates == 16);
  cfg.k_list = {1, 20};
  CHECK_THROWS_AS(cfg.validate(), Error);
  nlohmann::json j = EvalConfig{};
  CHECK(j.get<EvalConfig>().k_list == EvalConfig{}.k_list);
}

TEST_CASE("rerank eval is deterministic and well formed") {
  const auto& p = small_pair();
  const EvalConfig cfg = small_eval(6);
  const EvalReport a = rerank_eval(p.policy, p.disc, p.data.eval, p.data.vocab, cfg, 1);
  const EvalReport b = rerank_eval(p.policy, p.disc, p.data.eval, p.data.vocab, cfg, 3);
  CHECK(report_to_json(a).dump() == report_to_json(b).dump());
  CHECK(a.tasks_evaluated + a.tasks_skipped == static_cast<int>(p.data.eval.size()));
  CHECK(a.pass.size() == 3);
  CHECK(a.candidates.size() == static_cast<std::size_t>(a.tasks_evaluated) * 6);
  double prev_reward = 0, prev_random = 0;
  for (const auto& row : a.pass) {
    CHECK(row.reward >= prev_reward);
    CHECK(row.random >= prev_random);
    prev_reward = row.reward;
    prev_random = row.random;
  }
  CHECK(a.score_names == std::vector<std::string>{"reward", "discounted_reward"});
  CHECK(a.signal_names.size() == 5);
  const auto j = report_to_json(a);
  CHECK(j.contains("pass_at_k"));
  CHECK(j.contains("pearson"));
  CHECK(j.at("pearson").at("reward").size() == 5);
  CHECK(pass_table_csv(a).rfind("k,", 0) == 0);
}

TEST_CASE("single candidate makes both rankings agree") {
  const auto& p = small_pair();
  const EvalReport r = rerank_eval(p.policy, p.disc, p.data.eval, p.data.vocab, small_eval(1), 1);
  REQUIRE(r.pass.size() == 1);
  CHECK(r.pass[0].k == 1);
  CHECK(r.pass[0].reward == r.pass[0].random);
}

TEST_CASE("default k list yields four rows") {
  const auto& p = small_pair();
  EvalConfig cfg = small_eval(16);
  cfg.max_tasks = 3;
  const EvalReport r = rerank_eval(p.policy, p.disc, p.data.eval, p.data.vocab, cfg, 1);
  REQUIRE(r.pass.size() == 4);
  CHECK(r.pass[0].k == 1);
  CHECK(r.pass[3].k == 10);
  CHECK(r.tasks_evaluated == 3);
}
