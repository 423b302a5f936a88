#include "airl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace airl {

std::vector<std::size_t> rank_candidates(const CandidateSet& set,
                                         Ranking ranking) {
  std::vector<std::size_t> order(set.scores.size());
  std::iota(order.begin(), order.end(), 0);
  if (ranking == Ranking::reward) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return set.scores[a] > set.scores[b];
    });
  } else {
    Rng rng(set.ranking_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

double pass_at_k_given_N(std::span<const CandidateSet> sets, int k,
                         Ranking ranking) {
  if (sets.empty()) return 0.0;
  int hits = 0;
  for (const auto& set : sets) {
    const int n = static_cast<int>(set.scores.size());
    if (k < 1 || k > n || set.correct.size() != set.scores.size()) {
      throw std::invalid_argument("pass@k|N needs 1 <= k <= N (k=" +
                                  std::to_string(k) +
                                  ", N=" + std::to_string(n) + ")");
    }
    auto order = rank_candidates(set, ranking);
    hits += std::any_of(order.begin(), order.begin() + k,
                        [&](std::size_t i) { return set.correct[i] != 0; });
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

double random_pass_expectation(int n, int correct, int k) {
  // C(n-c, k) / C(n, k) = prod_{i<k} (n-c-i) / (n-i)
  double miss = 1.0;
  for (int i = 0; i < k; ++i) {
    miss *= std::max(0, n - correct - i) / static_cast<double>(n - i);
  }
  return 1.0 - miss;
}

WelchResult separation_tstat(std::span<const double> a,
                             std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw std::invalid_argument("Welch t-test needs at least two per group");
  }
  auto moments = [](std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  auto [ma, va] = moments(a);
  auto [mb, vb] = moments(b);
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  const double se2 = sa + sb;
  WelchResult out;
  const double diff = ma - mb;
  if (se2 <= 0.0) {
    out.t = diff == 0.0 ? 0.0
                        : std::copysign(std::numeric_limits<double>::infinity(),
                                        diff);
    out.df = std::numeric_limits<double>::quiet_NaN();
    out.p = diff == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = diff / std::sqrt(se2);
  out.df = se2 * se2 / (sa * sa / static_cast<double>(a.size() - 1) +
                        sb * sb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(out.df);
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(out.t)));
  return out;
}

std::optional<double> pearson(std::span<const double> x,
                              std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson needs equal lengths >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix pearson_matrix(std::span<const NamedSeries> rows,
                                 std::span<const NamedSeries> cols) {
  CorrelationMatrix out;
  for (const auto& r : rows) {
    auto& line = out.emplace_back();
    for (const auto& c : cols) line.push_back(pearson(r.values, c.values));
  }
  return out;
}

void EvalConfig::validate() const {
  if (num_candidates < 1) throw Error("config", "eval: N must be >= 1");
  if (k_list.empty()) throw Error("config", "eval: k_list is empty");
  for (int k : k_list) {
    if (k < 1 || k > num_candidates) {
      throw Error("config", "eval: k=" + std::to_string(k) +
                                " outside [1, N=" +
                                std::to_string(num_candidates) + "]");
    }
  }
  if (gamma < 0.0 || gamma > 1.0) throw Error("config", "eval: gamma");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"num_candidates", c.num_candidates},
       {"k_list", c.k_list},
       {"decode", c.decode},
       {"gamma", c.gamma},
       {"rerank_mode", c.rerank_mode == RerankMode::suffix_sum
                           ? "suffix_sum"
                           : "position_weighted"},
       {"max_tasks", c.max_tasks},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  EvalConfig d;
  c.num_candidates = j.value("num_candidates", d.num_candidates);
  c.k_list = j.value("k_list", d.k_list);
  c.decode = j.value("decode", d.decode);
  c.gamma = j.value("gamma", d.gamma);
  const std::string mode = j.value("rerank_mode", std::string("suffix_sum"));
  if (mode == "suffix_sum") {
    c.rerank_mode = RerankMode::suffix_sum;
  } else if (mode == "position_weighted") {
    c.rerank_mode = RerankMode::position_weighted;
  } else {
    throw Error("config", "eval: unknown rerank_mode '" + mode + "'");
  }
  c.max_tasks = j.value("max_tasks", d.max_tasks);
  c.seed = j.value("seed", d.seed);
}

EvalReport rerank_eval(const ModelParams& policy, const ModelParams& disc,
                       std::span<const TaskInstance> tasks,
                       const Vocabulary& vocab, const EvalConfig& cfg,
                       int threads) {
  cfg.validate();
  const std::size_t n_tasks =
      cfg.max_tasks > 0 ? std::min<std::size_t>(tasks.size(), cfg.max_tasks)
                        : tasks.size();
  const int n = cfg.num_candidates;

  struct Slot {
    std::optional<CandidateRecord> record;
  };
  std::vector<Slot> slots(n_tasks * n);
  parallel_for(slots.size(), threads, [&](std::size_t idx) {
    const std::size_t task = idx / n;
    try {
      Rng rng(derive_seed(cfg.seed, "eval.sample", idx));
      Trace trace = sample_trace(policy, tasks[task].prompt_tokens, cfg.decode,
                                 rng, vocab);
      auto raw = token_rewards(disc_token_logits(disc, trace));
      auto seg = segment(trace, vocab);
      CandidateRecord rec;
      rec.task = task;
      rec.candidate = idx % n;
      auto score = rerank_score(trace, raw, seg, cfg.gamma, cfg.rerank_mode);
      rec.score = score.value;
      rec.whole_response = score.whole_response;
      rec.mean_reward = mean_answer_reward(trace, raw, seg).value;
      rec.signals = verify_signals(trace, tasks[task], vocab);
      slots[idx].record = rec;
    } catch (const std::exception&) {
      // counted below as a decoding failure
    }
  });

  EvalReport report;
  report.num_candidates = n;
  for (std::size_t task = 0; task < n_tasks; ++task) {
    CandidateSet set;
    set.ranking_seed = derive_seed(cfg.seed, "eval.rank", task);
    int failures = 0;
    for (int j = 0; j < n; ++j) {
      const auto& rec = slots[task * n + j].record;
      if (!rec) {
        ++failures;
        continue;
      }
      report.candidates.push_back(*rec);
      set.scores.push_back(rec->score);
      set.correct.push_back(rec->signals.correctness);
    }
    report.decode_failures += failures;
    if (set.scores.empty()) {
      ++report.tasks_skipped;
      continue;
    }
    // Sets with failures are shorter than N; only complete sets enter pass@k.
    if (failures == 0) report.sets.push_back(std::move(set));
    ++report.tasks_evaluated;
  }

  const double sets = static_cast<double>(report.sets.size());
  auto ci = [&](double p) {
    return sets > 0 ? 1.96 * std::sqrt(p * (1.0 - p) / sets) : 0.0;
  };
  for (int k : cfg.k_list) {
    PassAtK row;
    row.k = k;
    row.reward = pass_at_k_given_N(report.sets, k, Ranking::reward);
    row.random = pass_at_k_given_N(report.sets, k, Ranking::random);
    double expected = 0.0;
    for (const auto& s : report.sets) {
      const int c = static_cast<int>(
          std::count(s.correct.begin(), s.correct.end(), 1));
      expected += random_pass_expectation(n, c, k);
    }
    row.random_expected = sets > 0 ? expected / sets : 0.0;
    row.reward_ci = ci(row.reward);
    row.random_ci = ci(row.random);
    report.pass.push_back(row);
  }

  std::vector<double> good, bad;
  for (const auto& c : report.candidates) {
    (c.signals.correctness ? good : bad).push_back(c.score);
  }
  if (good.size() >= 2 && bad.size() >= 2) {
    report.separation = separation_tstat(good, bad);
  }

  if (report.candidates.size() >= 2) {
    std::vector<NamedSeries> rows = {{"reward", {}}, {"discounted_reward", {}}};
    std::vector<NamedSeries> cols = {{"correctness", {}},
                                     {"strict_format", {}},
                                     {"soft_format", {}},
                                     {"xml_count", {}},
                                     {"integer_response", {}}};
    for (const auto& c : report.candidates) {
      rows[0].values.push_back(c.mean_reward);
      rows[1].values.push_back(c.score);
      cols[0].values.push_back(c.signals.correctness);
      cols[1].values.push_back(c.signals.strict_format);
      cols[2].values.push_back(c.signals.soft_format);
      cols[3].values.push_back(c.signals.xml_count);
      cols[4].values.push_back(c.signals.integer_response);
    }
    for (const auto& r : rows) report.score_names.push_back(r.name);
    for (const auto& c : cols) report.signal_names.push_back(c.name);
    report.correlations = pearson_matrix(rows, cols);
  }
  return report;
}

double correctness_rate(const ModelParams& policy,
                        std::span<const TaskInstance> tasks,
                        const Vocabulary& vocab, const DecodeConfig& decode,
                        int samples, std::uint64_t seed, int threads) {
  const std::size_t total = tasks.size() * static_cast<std::size_t>(samples);
  if (total == 0) return 0.0;
  std::vector<int> correct(total, 0);
  parallel_for(total, threads, [&](std::size_t idx) {
    const auto& task = tasks[idx / samples];
    Rng rng(derive_seed(seed, "correctness", idx));
    Trace trace = sample_trace(policy, task.prompt_tokens, decode, rng, vocab);
    correct[idx] = verify_signals(trace, task, vocab).correctness;
  });
  return std::accumulate(correct.begin(), correct.end(), 0.0) /
         static_cast<double>(total);
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json pass = nlohmann::json::array();
  for (const auto& p : report.pass) {
    pass.push_back({{"k", p.k},
                    {"reward", p.reward},
                    {"random", p.random},
                    {"random_expected", p.random_expected},
                    {"reward_ci", p.reward_ci},
                    {"random_ci", p.random_ci}});
  }
  nlohmann::json corr = nlohmann::json::object();
  for (std::size_t r = 0; r < report.correlations.size(); ++r) {
    nlohmann::json line = nlohmann::json::object();
    for (std::size_t c = 0; c < report.correlations[r].size(); ++c) {
      const auto& v = report.correlations[r][c];
      line[report.signal_names[c]] =
          v ? nlohmann::json(*v) : nlohmann::json("undefined");
    }
    corr[report.score_names[r]] = line;
  }
  nlohmann::json sep = nullptr;
  if (report.separation) {
    sep = {{"t", report.separation->t},
           {"df", std::isfinite(report.separation->df)
                      ? nlohmann::json(report.separation->df)
                      : nlohmann::json(nullptr)},
           {"p", report.separation->p},
           {"test", "welch"}};
  }
  return {{"num_candidates", report.num_candidates},
          {"tasks_evaluated", report.tasks_evaluated},
          {"tasks_skipped", report.tasks_skipped},
          {"decode_failures", report.decode_failures},
          {"ci_method", "normal approximation, 95%"},
          {"pass_at_k", pass},
          {"separation", sep},
          {"pearson", corr}};
}

std::string pass_table_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "k,reward,reward_ci,random,random_ci,random_expected\n";
  for (const auto& p : report.pass) {
    out << p.k << ',' << p.reward << ',' << p.reward_ci << ',' << p.random
        << ',' << p.random_ci << ',' << p.random_expected << '\n';
  }
  return out.str();
}

std::string candidates_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "task,candidate,score,mean_reward,correctness,strict_format,"
         "soft_format,xml_count,integer_response\n";
  for (const auto& c : report.candidates) {
    out << c.task << ',' << c.candidate << ',' << c.score << ','
        << c.mean_reward << ',' << c.signals.correctness << ','
        << c.signals.strict_format << ',' << c.signals.soft_format << ','
        << c.signals.xml_count << ',' << c.signals.integer_response << '\n';
  }
  return out.str();
}

}  // namespace airl
