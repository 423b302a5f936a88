#pragma once

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "airl/common.hpp"
#include "airl/synthgsm.hpp"
#include "airl/trace.hpp"

namespace airl {

enum class PerturbKind { operator_flip, numeric_corruption, answer_swap };

const char* perturb_kind_name(PerturbKind kind);

// Per-trace application probabilities; the remaining mass leaves a trace
// unperturbed.
struct PerturbationSpec {
  double operator_flip = 1.0 / 3.0;
  double numeric_corruption = 1.0 / 3.0;
  double answer_swap = 1.0 / 3.0;
  int max_offset = 3;  // numeric corruption offsets are +-[1, max_offset]

  double total_rate() const {
    return operator_flip + numeric_corruption + answer_swap;
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const PerturbationSpec& s);
void from_json(const nlohmann::json& j, PerturbationSpec& s);

// Flips one operator (+ to -, - to +, * to +) in a think equation where the
// flip makes it false. nullopt when no such site exists.
std::optional<Trace> flip_operator(const Trace& trace, const Vocabulary& vocab,
                                   Rng& rng);

// Offsets one numeric literal of the response by a nonzero delta. A literal
// inside an equation is only changed in a way that leaves it false. nullopt
// when the response has no usable literal.
std::optional<Trace> corrupt_number(const Trace& trace, const Vocabulary& vocab,
                                    Rng& rng, int max_offset);

// Replaces the answer with a uniformly chosen intermediate result that
// differs from it. nullopt when there is none.
std::optional<Trace> swap_answer(const Trace& trace, const Vocabulary& vocab,
                                 Rng& rng);

struct PerturbSource {
  Trace trace;
  long ground_truth = 0;
};

struct PerturbedTrace {
  Trace trace;
  PerturbKind kind = PerturbKind::operator_flip;  // kind actually applied
  std::size_t source = 0;
};

struct PerturbBatch {
  std::vector<PerturbedTrace> traces;  // all labelled non-expert
  int dropped = 0;
};

// Wrong final answer or at least one false equation.
bool is_near_miss(const Trace& trace, long ground_truth,
                  const Vocabulary& vocab);

// max_len > 0 rejects perturbations that would not fit the context window.
PerturbBatch perturb_batch(std::span<const PerturbSource> sources,
                           const PerturbationSpec& spec,
                           const Vocabulary& vocab, Rng& rng, int max_len = 0);

}  // namespace airl
