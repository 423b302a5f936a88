#include "airl/perturb.hpp"

#include <algorithm>
#include <set>

namespace airl {

const char* perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::operator_flip: return "operator_flip";
    case PerturbKind::numeric_corruption: return "numeric_corruption";
    case PerturbKind::answer_swap: return "answer_swap";
  }
  return "?";
}

void PerturbationSpec::validate() const {
  for (double r : {operator_flip, numeric_corruption, answer_swap}) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw Error("config", "perturbation rates must lie in [0, 1]");
    }
  }
  if (total_rate() > 1.0 + 1e-9) {
    throw Error("config", "perturbation rates must sum to at most 1");
  }
  if (max_offset < 1 || max_offset > 9) {
    throw Error("config", "perturbation max_offset must be in [1, 9]");
  }
}

void to_json(nlohmann::json& j, const PerturbationSpec& s) {
  j = {{"operator_flip", s.operator_flip},
       {"numeric_corruption", s.numeric_corruption},
       {"answer_swap", s.answer_swap},
       {"max_offset", s.max_offset}};
}

void from_json(const nlohmann::json& j, PerturbationSpec& s) {
  PerturbationSpec d;
  s.operator_flip = j.value("operator_flip", d.operator_flip);
  s.numeric_corruption = j.value("numeric_corruption", d.numeric_corruption);
  s.answer_swap = j.value("answer_swap", d.answer_swap);
  s.max_offset = j.value("max_offset", d.max_offset);
  s.validate();
}

namespace {

Op flipped(Op op) { return op == Op::add ? Op::sub : Op::add; }

Trace replace_span(const Trace& trace, Span span,
                   const std::vector<TokenId>& tokens,
                   const Vocabulary& vocab) {
  auto ids = trace.ids();
  std::vector<TokenId> out(ids.begin(), ids.begin() + span.begin);
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.insert(out.end(), ids.begin() + span.end, ids.end());
  return Trace::make(std::move(out), trace.prompt_len(), vocab);
}

template <class C>
const auto& pick(const C& items, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

}  // namespace

std::optional<Trace> flip_operator(const Trace& trace, const Vocabulary& vocab,
                                   Rng& rng) {
  std::vector<Equation> sites;
  for (const auto& eq : parse_equations(trace, vocab)) {
    if (apply_op(flipped(eq.op), eq.lhs.value, eq.rhs.value) !=
        eq.result.value) {
      sites.push_back(eq);
    }
  }
  if (sites.empty()) return std::nullopt;
  const Equation& eq = pick(sites, rng);
  return replace_span(trace, {eq.op_pos, eq.op_pos + 1},
                      {vocab.id(op_symbol(flipped(eq.op)))}, vocab);
}

std::optional<Trace> corrupt_number(const Trace& trace, const Vocabulary& vocab,
                                    Rng& rng, int max_offset) {
  struct Site {
    Literal literal;
    std::optional<Equation> equation;
    int role = 0;  // 0 lhs, 1 rhs, 2 result
  };
  std::vector<Site> sites;
  for (const auto& eq : parse_equations(trace, vocab)) {
    sites.push_back({eq.lhs, eq, 0});
    sites.push_back({eq.rhs, eq, 1});
    sites.push_back({eq.result, eq, 2});
  }
  if (auto ans = answer_literal(trace, vocab)) sites.push_back({*ans, {}, 0});
  if (sites.empty()) return std::nullopt;

  std::uniform_int_distribution<int> magnitude(1, max_offset);
  std::bernoulli_distribution sign(0.5);
  for (int attempt = 0; attempt < 16; ++attempt) {
    const Site& site = pick(sites, rng);
    const int delta = sign(rng) ? magnitude(rng) : -magnitude(rng);
    const long value = site.literal.value + delta;
    if (site.equation) {
      Equation eq = *site.equation;
      (site.role == 0 ? eq.lhs : site.role == 1 ? eq.rhs : eq.result).value =
          value;
      if (eq.holds()) continue;
    }
    return replace_span(trace, site.literal.span, number_tokens(value, vocab),
                        vocab);
  }
  return std::nullopt;
}

std::optional<Trace> swap_answer(const Trace& trace, const Vocabulary& vocab,
                                 Rng& rng) {
  auto answer = answer_literal(trace, vocab);
  if (!answer) return std::nullopt;
  std::set<long> distinct;
  for (const auto& eq : parse_equations(trace, vocab)) {
    if (eq.result.value != answer->value) distinct.insert(eq.result.value);
  }
  if (distinct.empty()) return std::nullopt;
  std::vector<long> values(distinct.begin(), distinct.end());
  return replace_span(trace, answer->span,
                      number_tokens(pick(values, rng), vocab), vocab);
}

bool is_near_miss(const Trace& trace, long ground_truth,
                  const Vocabulary& vocab) {
  if (!verify_signals(trace, ground_truth, vocab).correctness) return true;
  for (const auto& eq : parse_equations(trace, vocab)) {
    if (!eq.holds()) return true;
  }
  return false;
}

PerturbBatch perturb_batch(std::span<const PerturbSource> sources,
                           const PerturbationSpec& spec,
                           const Vocabulary& vocab, Rng& rng, int max_len) {
  spec.validate();
  PerturbBatch out;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& src = sources[i];
    const double u = unif(rng);
    PerturbKind kind;
    if (u < spec.operator_flip) {
      kind = PerturbKind::operator_flip;
    } else if (u < spec.operator_flip + spec.numeric_corruption) {
      kind = PerturbKind::numeric_corruption;
    } else if (u < spec.total_rate()) {
      kind = PerturbKind::answer_swap;
    } else {
      continue;
    }
    const int soft = verify_signals(src.trace, src.ground_truth, vocab).soft_format;
    bool emitted = false;
    for (int attempt = 0; attempt < 5 && !emitted; ++attempt) {
      std::optional<Trace> candidate;
      PerturbKind applied = kind;
      if (kind == PerturbKind::operator_flip) {
        candidate = flip_operator(src.trace, vocab, rng);
      } else if (kind == PerturbKind::answer_swap) {
        candidate = swap_answer(src.trace, vocab, rng);
      }
      if (!candidate) {
        applied = PerturbKind::numeric_corruption;
        candidate = corrupt_number(src.trace, vocab, rng, spec.max_offset);
      }
      if (!candidate || *candidate == src.trace) continue;
      if (max_len > 0 && candidate->length() > max_len) continue;
      if (!is_near_miss(*candidate, src.ground_truth, vocab)) continue;
      if (verify_signals(*candidate, src.ground_truth, vocab).soft_format !=
          soft) {
        continue;
      }
      out.traces.push_back({std::move(*candidate), applied, i});
      emitted = true;
    }
    if (!emitted) ++out.dropped;
  }
  return out;
}

}  // namespace airl
