#include "airl/synthgsm.hpp"

#include <algorithm>
#include <cstdlib>

namespace airl {

const char* op_name(Op op) {
  switch (op) {
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
  }
  return "?";
}

const char* op_symbol(Op op) {
  switch (op) {
    case Op::add: return "+";
    case Op::sub: return "-";
    case Op::mul: return "*";
  }
  return "?";
}

Op op_from_name(std::string_view name) {
  if (name == "add" || name == "+") return Op::add;
  if (name == "sub" || name == "-") return Op::sub;
  if (name == "mul" || name == "*") return Op::mul;
  throw std::invalid_argument("unknown operation '" + std::string(name) + "'");
}

long apply_op(Op op, long lhs, long rhs) {
  switch (op) {
    case Op::add: return lhs + rhs;
    case Op::sub: return lhs - rhs;
    case Op::mul: return lhs * rhs;
  }
  return 0;
}

void TaskParams::validate() const {
  auto fail = [](const std::string& m) { throw Error("config", "task: " + m); };
  if (min_ops < 1 || max_ops < min_ops) fail("need 1 <= min_ops <= max_ops");
  if (start_min > start_max) fail("start_min > start_max");
  if (add_operand_max < 1 || add_operand_max > 99) {
    fail("add_operand_max must be in [1, 99]");
  }
  if (mul_operand_min < 1 || mul_operand_max > 9 ||
      mul_operand_min > mul_operand_max) {
    fail("mul operands must satisfy 1 <= min <= max <= 9");
  }
  if (value_min < -999 || value_max > 999 || value_min > value_max) {
    fail("value bounds must lie within [-999, 999]");
  }
  if (start_min < value_min || start_max > value_max) {
    fail("start range must lie within value bounds");
  }
  if (max_len < 8) fail("max_len too small");
}

void to_json(nlohmann::json& j, const TaskParams& p) {
  j = {{"min_ops", p.min_ops},
       {"max_ops", p.max_ops},
       {"start_min", p.start_min},
       {"start_max", p.start_max},
       {"add_operand_max", p.add_operand_max},
       {"mul_operand_min", p.mul_operand_min},
       {"mul_operand_max", p.mul_operand_max},
       {"value_min", p.value_min},
       {"value_max", p.value_max},
       {"max_len", p.max_len}};
}

void from_json(const nlohmann::json& j, TaskParams& p) {
  TaskParams d;
  p.min_ops = j.value("min_ops", d.min_ops);
  p.max_ops = j.value("max_ops", d.max_ops);
  p.start_min = j.value("start_min", d.start_min);
  p.start_max = j.value("start_max", d.start_max);
  p.add_operand_max = j.value("add_operand_max", d.add_operand_max);
  p.mul_operand_min = j.value("mul_operand_min", d.mul_operand_min);
  p.mul_operand_max = j.value("mul_operand_max", d.mul_operand_max);
  p.value_min = j.value("value_min", d.value_min);
  p.value_max = j.value("value_max", d.value_max);
  p.max_len = j.value("max_len", d.max_len);
}

std::vector<TokenId> number_tokens(long value, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  if (value < 0) out.push_back(vocab.id("-"));
  for (char c : std::to_string(std::labs(value))) {
    out.push_back(vocab.digit(c - '0'));
  }
  return out;
}

std::optional<long> parse_number(std::span<const TokenId> tokens,
                                 const Vocabulary& vocab) {
  if (tokens.empty()) return std::nullopt;
  bool negative = tokens.front() == vocab.id("-");
  auto digits = negative ? tokens.subspan(1) : tokens;
  if (digits.empty() || digits.size() > 9) return std::nullopt;
  long value = 0;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    auto d = vocab.digit_value(digits[i]);
    if (!d) return std::nullopt;
    if (i == 0 && *d == 0 && (digits.size() > 1 || negative)) {
      return std::nullopt;  // leading zero or "-0"
    }
    value = value * 10 + *d;
  }
  return negative ? -value : value;
}

std::string prompt_text(const TaskInstance& task) {
  std::string text = "start with " + std::to_string(task.start_value) + " .";
  for (const auto& s : task.steps) {
    text += std::string(" then ") + op_name(s.op) + " " +
            std::to_string(s.operand) + " .";
  }
  text += " result ?";
  return text;
}

namespace {

// Space-separate digits so each becomes its own token.
std::string spaced(const std::string& text) {
  std::string out;
  bool prev_digit = false;
  for (char c : text) {
    bool digit = c >= '0' && c <= '9';
    if (digit && prev_digit) out += ' ';
    if (c == '-' && !out.empty() && out.back() != ' ') out += ' ';
    out += c;
    if (c == '-') out += ' ';
    prev_digit = digit;
  }
  return out;
}

std::vector<TokenId> encode_prompt(const TaskInstance& task,
                                   const Vocabulary& vocab) {
  return vocab.encode(spaced(prompt_text(task)));
}

}  // namespace

TaskInstance sample_task(Rng& rng, const TaskParams& params,
                         const Vocabulary& vocab) {
  params.validate();
  std::uniform_int_distribution<int> n_ops(params.min_ops, params.max_ops);
  std::uniform_int_distribution<int> start(params.start_min, params.start_max);
  std::uniform_int_distribution<int> which(0, 2);
  std::uniform_int_distribution<int> add_operand(1, params.add_operand_max);
  std::uniform_int_distribution<int> mul_operand(params.mul_operand_min,
                                                 params.mul_operand_max);
  auto in_bounds = [&](long v) {
    return v >= params.value_min && v <= params.value_max;
  };

  TaskInstance task;
  task.start_value = start(rng);
  const int count = n_ops(rng);
  long value = task.start_value;
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    // Resample the operand first; only switch operation when the current one
    // cannot stay in bounds.
    for (int op_try = 0; op_try < 64 && !placed; ++op_try) {
      Op op = static_cast<Op>(which(rng));
      for (int k = 0; k < 16; ++k) {
        int operand = op == Op::mul ? mul_operand(rng) : add_operand(rng);
        long next = apply_op(op, value, operand);
        if (in_bounds(next)) {
          task.steps.push_back({op, operand});
          value = next;
          placed = true;
          break;
        }
      }
    }
    if (!placed) {
      throw Error("config", "task bounds admit no valid step from value " +
                                std::to_string(value));
    }
  }
  task.ground_truth = static_cast<int>(value);
  task.prompt_tokens = encode_prompt(task, vocab);
  return task;
}

Trace render_expert_trace(const TaskInstance& task, const Vocabulary& vocab,
                          int max_len) {
  if (task.steps.empty()) {
    throw std::invalid_argument("task has no steps");
  }
  const auto& sp = vocab.special();
  std::vector<TokenId> ids = task.prompt_tokens;
  const int prompt_len = static_cast<int>(ids.size());
  auto append = [&](const std::vector<TokenId>& t) {
    ids.insert(ids.end(), t.begin(), t.end());
  };
  ids.push_back(sp.begin_think);
  long value = task.start_value;
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    const auto& s = task.steps[i];
    if (i) ids.push_back(vocab.id("."));
    long next = apply_op(s.op, value, s.operand);
    append(number_tokens(value, vocab));
    ids.push_back(vocab.id(op_symbol(s.op)));
    append(number_tokens(s.operand, vocab));
    ids.push_back(vocab.id("="));
    append(number_tokens(next, vocab));
    value = next;
  }
  ids.push_back(sp.end_think);
  ids.push_back(sp.begin_answer);
  append(number_tokens(task.ground_truth, vocab));
  ids.push_back(sp.end_answer);
  ids.push_back(sp.eos);
  if (static_cast<int>(ids.size()) > max_len) {
    throw Error("config", "rendered trace length " +
                              std::to_string(ids.size()) +
                              " exceeds max_len " + std::to_string(max_len));
  }
  return Trace::make(std::move(ids), prompt_len, vocab);
}

std::optional<Literal> answer_literal(const Trace& trace,
                                      const Vocabulary& vocab) {
  const auto& sp = vocab.special();
  auto span = find_span(trace, sp.begin_answer, sp.end_answer);
  if (!span) return std::nullopt;
  auto value = parse_number(trace.ids().subspan(span->begin, span->size()),
                            vocab);
  if (!value) return std::nullopt;
  return Literal{*span, *value};
}

std::optional<long> extract_answer(const Trace& trace,
                                   const Vocabulary& vocab) {
  if (auto lit = answer_literal(trace, vocab)) return lit->value;
  return std::nullopt;
}

VerifiableSignals verify_signals(const Trace& trace, const TaskInstance& task,
                                 const Vocabulary& vocab) {
  return verify_signals(trace, task.ground_truth, vocab);
}

VerifiableSignals verify_signals(const Trace& trace, long ground_truth,
                                 const Vocabulary& vocab) {
  const auto& sp = vocab.special();
  VerifiableSignals out;
  auto answer = extract_answer(trace, vocab);
  out.integer_response = answer.has_value();
  out.correctness = answer.has_value() && *answer == ground_truth;

  const TokenId markers[4] = {sp.begin_think, sp.end_think, sp.begin_answer,
                              sp.end_answer};
  auto resp = trace.response();
  int first[4] = {-1, -1, -1, -1};
  for (int m = 0; m < 4; ++m) {
    auto it = std::find(resp.begin(), resp.end(), markers[m]);
    if (it != resp.end()) {
      first[m] = static_cast<int>(it - resp.begin());
      ++out.xml_count;
    }
  }
  out.soft_format = out.xml_count == 4 && first[0] < first[1] &&
                    first[1] < first[2] && first[2] < first[3];

  // <think> X+ </think> <answer> Y+ </answer> <eos>, with no stray markers.
  auto seg = segment(trace, vocab);
  const int n = static_cast<int>(resp.size());
  out.strict_format =
      seg.well_formed && resp.front() == sp.begin_think &&
      !seg.think.empty() && !seg.answer.empty() &&
      seg.answer.begin == seg.think.end + 2 &&
      seg.answer.end == trace.length() - 2 && resp[n - 1] == sp.eos &&
      out.integer_response &&
      std::count(resp.begin(), resp.end(), sp.eos) == 1;
  return out;
}

std::vector<Equation> parse_equations(const Trace& trace,
                                      const Vocabulary& vocab) {
  const auto& sp = vocab.special();
  std::vector<Equation> out;
  auto think = find_span(trace, sp.begin_think, sp.end_think);
  if (!think) return out;
  const TokenId dot = vocab.id(".");
  const TokenId eq = vocab.id("=");
  const TokenId minus = vocab.id("-");
  const TokenId plus = vocab.id("+");
  const TokenId times = vocab.id("*");
  auto ids = trace.ids();

  // Reads a number starting at `pos` (optional sign then digits).
  auto read_number = [&](int pos, int end) -> std::optional<Literal> {
    int p = pos;
    if (p < end && ids[p] == minus) ++p;
    int digits_begin = p;
    while (p < end && vocab.digit_value(ids[p])) ++p;
    if (p == digits_begin) return std::nullopt;
    auto v = parse_number(ids.subspan(pos, p - pos), vocab);
    if (!v) return std::nullopt;
    return Literal{{pos, p}, *v};
  };

  int chunk_begin = think->begin;
  for (int i = think->begin; i <= think->end; ++i) {
    if (i < think->end && ids[i] != dot) continue;
    const int end = i;
    auto lhs = read_number(chunk_begin, end);
    chunk_begin = i + 1;
    if (!lhs) continue;
    int p = lhs->span.end;
    if (p >= end) continue;
    Op op;
    if (ids[p] == plus) {
      op = Op::add;
    } else if (ids[p] == minus) {
      op = Op::sub;
    } else if (ids[p] == times) {
      op = Op::mul;
    } else {
      continue;
    }
    const int op_pos = p;
    auto rhs = read_number(p + 1, end);
    if (!rhs || rhs->span.end >= end || ids[rhs->span.end] != eq) continue;
    auto result = read_number(rhs->span.end + 1, end);
    if (!result || result->span.end != end) continue;
    out.push_back({*lhs, op_pos, op, *rhs, *result});
  }
  return out;
}

nlohmann::json task_to_json(const TaskInstance& task) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : task.steps) {
    steps.push_back({{"op", op_name(s.op)}, {"operand", s.operand}});
  }
  return {{"start_value", task.start_value},
          {"steps", steps},
          {"ground_truth", task.ground_truth}};
}

TaskInstance task_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  TaskInstance task;
  task.start_value = j.at("start_value").get<int>();
  for (const auto& s : j.at("steps")) {
    task.steps.push_back(
        {op_from_name(s.at("op").get<std::string>()), s.at("operand").get<int>()});
  }
  task.ground_truth = j.at("ground_truth").get<int>();
  long value = task.start_value;
  for (const auto& s : task.steps) value = apply_op(s.op, value, s.operand);
  if (value != task.ground_truth) {
    throw Error("data", "task ground truth does not match its steps");
  }
  task.prompt_tokens = encode_prompt(task, vocab);
  return task;
}

}  // namespace airl
