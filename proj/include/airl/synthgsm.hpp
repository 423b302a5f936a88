#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "airl/common.hpp"
#include "airl/trace.hpp"

namespace airl {

enum class Op { add, sub, mul };

const char* op_name(Op op);     // prompt keyword: add / sub / mul
const char* op_symbol(Op op);   // equation symbol: + - *
Op op_from_name(std::string_view name);
long apply_op(Op op, long lhs, long rhs);

struct Step {
  Op op = Op::add;
  int operand = 1;
  bool operator==(const Step&) const = default;
};

// Bounds for chain-arithmetic tasks. Defaults span well over 10^6 tasks.
struct TaskParams {
  int min_ops = 1;
  int max_ops = 4;
  int start_min = 1;
  int start_max = 99;
  int add_operand_max = 99;  // add/sub operands in [1, add_operand_max]
  int mul_operand_min = 1;
  int mul_operand_max = 9;   // mul operands in [mul_operand_min, mul_operand_max]
  int value_min = -999;
  int value_max = 999;
  int max_len = 96;          // context window for rendered traces

  void validate() const;  // throws Error("config")
};

void to_json(nlohmann::json& j, const TaskParams& p);
void from_json(const nlohmann::json& j, TaskParams& p);

struct TaskInstance {
  int start_value = 0;
  std::vector<Step> steps;
  int ground_truth = 0;
  std::vector<TokenId> prompt_tokens;

  bool operator==(const TaskInstance&) const = default;
};

nlohmann::json task_to_json(const TaskInstance& task);
TaskInstance task_from_json(const nlohmann::json& j, const Vocabulary& vocab);

struct VerifiableSignals {
  int correctness = 0;
  int strict_format = 0;
  int soft_format = 0;
  int xml_count = 0;
  int integer_response = 0;

  bool operator==(const VerifiableSignals&) const = default;
};

// Tokens for a decimal integer: optional "-" then digits.
std::vector<TokenId> number_tokens(long value, const Vocabulary& vocab);
// Canonical decimal integer over exactly these tokens; nullopt otherwise.
std::optional<long> parse_number(std::span<const TokenId> tokens,
                                 const Vocabulary& vocab);

std::string prompt_text(const TaskInstance& task);
TaskInstance sample_task(Rng& rng, const TaskParams& params,
                         const Vocabulary& vocab);
Trace render_expert_trace(const TaskInstance& task, const Vocabulary& vocab,
                          int max_len);

std::optional<long> extract_answer(const Trace& trace, const Vocabulary& vocab);
VerifiableSignals verify_signals(const Trace& trace, const TaskInstance& task,
                                 const Vocabulary& vocab);
VerifiableSignals verify_signals(const Trace& trace, long ground_truth,
                                 const Vocabulary& vocab);

// A number occupying tokens [begin, end).
struct Literal {
  Span span;
  long value = 0;
};

// "lhs op rhs = result" inside the think span.
struct Equation {
  Literal lhs;
  int op_pos = 0;
  Op op = Op::add;
  Literal rhs;
  Literal result;
  bool holds() const { return apply_op(op, lhs.value, rhs.value) == result.value; }
};

// Equations in the (leniently located) think span, split on "." tokens.
// Chunks that do not parse as an equation are skipped.
std::vector<Equation> parse_equations(const Trace& trace,
                                      const Vocabulary& vocab);
// The answer literal, if the answer span holds a canonical integer.
std::optional<Literal> answer_literal(const Trace& trace,
                                      const Vocabulary& vocab);

}  // namespace airl
