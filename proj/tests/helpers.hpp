#pragma once

#include <string>
#include <vector>

#include "airl/synthgsm.hpp"
#include "airl/trace.hpp"

namespace testutil {

// Trace from whitespace-separated prompt and response symbols.
inline airl::Trace trace_of(const airl::Vocabulary& vocab, const std::string& prompt,
                            const std::string& response) {
  std::vector<airl::TokenId> ids = vocab.encode(prompt);
  const int prompt_len = static_cast<int>(ids.size());
  for (auto id : vocab.encode(response)) ids.push_back(id);
  return airl::Trace::make(ids, prompt_len, vocab);
}

inline airl::TaskInstance task_of(const airl::Vocabulary& vocab, int start,
                                  std::vector<airl::Step> steps) {
  airl::TaskInstance t;
  t.start_value = start;
  t.steps = std::move(steps);
  long v = start;
  for (const auto& s : t.steps) v = airl::apply_op(s.op, v, s.operand);
  t.ground_truth = static_cast<int>(v);
  std::string spaced;
  for (char c : airl::prompt_text(t)) {
    spaced += c;
    if (c >= '0' && c <= '9') spaced += ' ';
  }
  t.prompt_tokens = vocab.encode(spaced);
  return t;
}

}  // namespace testutil
