#include "doctest.h"

#include <set>

#include "airl/dataset.hpp"
#include "airl/synthgsm.hpp"
#include "helpers.hpp"

using namespace airl;
using testutil::task_of;
using testutil::trace_of;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = build_vocabulary();
  return v;
}

long replay(const TaskInstance& t) {
  long v = t.start_value;
  for (const auto& s : t.steps) v = apply_op(s.op, v, s.operand);
  return v;
}

}  // namespace

TEST_CASE("sampling is deterministic per seed") {
  TaskParams p;
  Rng a(7), b(7);
  CHECK(sample_task(a, p, vocab()) == sample_task(b, p, vocab()));
}

TEST_CASE("max_ops = 0 is rejected") {
  TaskParams p;
  p.min_ops = 0;
  p.max_ops = 0;
  Rng rng(1);
  CHECK_THROWS_AS(sample_task(rng, p, vocab()), Error);
}

TEST_CASE("sampled tasks satisfy their invariants") {
  TaskParams p;
  Rng rng(123);
  for (int i = 0; i < 2000; ++i) {
    const TaskInstance t = sample_task(rng, p, vocab());
    CHECK(replay(t) == t.ground_truth);
    REQUIRE(!t.steps.empty());
    CHECK(static_cast<int>(t.steps.size()) <= p.max_ops);
    long v = t.start_value;
    for (const auto& s : t.steps) {
      if (s.op == Op::mul) {
        CHECK((s.operand >= 1 && s.operand <= 9));
      } else {
        CHECK((s.operand >= 1 && s.operand <= 99));
      }
      v = apply_op(s.op, v, s.operand);
      CHECK((v >= -999 && v <= 999));
    }
  }
}

TEST_CASE("expert trace rendering") {
  const TaskInstance t = task_of(vocab(), 5, {{Op::add, 3}, {Op::mul, 2}});
  const Trace tr = render_expert_trace(t, vocab(), 96);
  const std::string text = vocab().decode(tr.response());
  CHECK(text == "<think> 5 + 3 = 8 . 8 * 2 = 1 6 </think> <answer> 1 6 </answer> <eos>");
  CHECK(extract_answer(tr, vocab()) == 16);
  CHECK(verify_signals(tr, t, vocab()) == VerifiableSignals{1, 1, 1, 4, 1});

  TaskInstance empty = t;
  empty.steps.clear();
  CHECK_THROWS(render_expert_trace(empty, vocab(), 96));
  CHECK_THROWS_AS(render_expert_trace(t, vocab(), 10), Error);
}

TEST_CASE("every rendered expert trace verifies") {
  TaskParams p;
  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const TaskInstance t = sample_task(rng, p, vocab());
    const Trace tr = render_expert_trace(t, vocab(), 96);
    const VerifiableSignals s = verify_signals(tr, t, vocab());
    CHECK(s.correctness == 1);
    CHECK(s.strict_format == 1);
    CHECK(segment(tr, vocab()).well_formed);
    CHECK(extract_answer(tr, vocab()) == t.ground_truth);
    for (const auto& eq : parse_equations(tr, vocab())) CHECK(eq.holds());
    CHECK(parse_equations(tr, vocab()).size() == t.steps.size());
  }
}

TEST_CASE("extract_answer") {
  CHECK(extract_answer(trace_of(vocab(), "result ?", "<answer> 1 6 </answer>"), vocab()) == 16);
  CHECK(extract_answer(trace_of(vocab(), "result ?", "<answer> - 7 </answer>"), vocab()) == -7);
  CHECK_FALSE(extract_answer(trace_of(vocab(), "result ?", "1 6"), vocab()));
  CHECK_FALSE(extract_answer(trace_of(vocab(), "result ?", "<answer> </answer>"), vocab()));
  CHECK_FALSE(extract_answer(trace_of(vocab(), "result ?", "<answer> 1 + 2 </answer>"), vocab()));
}

TEST_CASE("number tokens are canonical") {
  CHECK(parse_number(number_tokens(-42, vocab()), vocab()) == -42);
  CHECK(parse_number(number_tokens(0, vocab()), vocab()) == 0);
  CHECK_FALSE(parse_number(vocab().encode("0 7"), vocab()));
  CHECK_FALSE(parse_number(vocab().encode("- 0"), vocab()));
  CHECK_FALSE(parse_number(vocab().encode("-"), vocab()));
}

TEST_CASE("verify_signals on hand-built traces") {
  const TaskInstance t = task_of(vocab(), 5, {{Op::add, 3}, {Op::mul, 2}});
  const std::string prompt = vocab().decode(t.prompt_tokens);
  // Empty response is not representable, so the closest is a lone eos.
  CHECK(verify_signals(trace_of(vocab(), prompt, "<eos>"), t, vocab()) ==
        VerifiableSignals{0, 0, 0, 0, 0});
  CHECK(verify_signals(
            trace_of(vocab(), prompt,
                     "<think> 5 + 3 = 8 . 8 * 2 = 1 6 </think> <answer> 1 7 </answer> <eos>"),
            t, vocab()) == VerifiableSignals{0, 1, 1, 4, 1});
  // Markers present in order but trailing junk: soft but not strict.
  CHECK(verify_signals(
            trace_of(vocab(), prompt, "<think> 8 </think> 3 <answer> 1 6 </answer> <eos>"), t,
            vocab()) == VerifiableSignals{1, 0, 1, 4, 1});
  // Non-integer answer with good shape is not strict.
  CHECK(verify_signals(trace_of(vocab(), prompt, "<think> 8 </think> <answer> + </answer> <eos>"),
                       t, vocab()) == VerifiableSignals{0, 0, 1, 4, 0});
}

TEST_CASE("signal implications hold on random token soup") {
  const TaskInstance t = task_of(vocab(), 5, {{Op::add, 3}});
  Rng rng(77);
  std::uniform_int_distribution<int> len(1, 20);
  std::uniform_int_distribution<TokenId> tok(0, vocab().size() - 1);
  // Bias toward markers and digits so the implications are exercised.
  const std::vector<TokenId> favoured = {
      vocab().special().begin_think, vocab().special().end_think, vocab().special().begin_answer,
      vocab().special().end_answer,  vocab().special().eos,       vocab().digit(8),
      vocab().digit(1),              vocab().id("-")};
  std::uniform_int_distribution<std::size_t> fav(0, favoured.size() - 1);
  int strict = 0, correct = 0;
  for (int i = 0; i < 20000; ++i) {
    std::vector<TokenId> ids = t.prompt_tokens;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      TokenId id = (rng() % 2) ? favoured[fav(rng)] : tok(rng);
      if (id == vocab().special().pad) id = vocab().special().eos;
      ids.push_back(id);
    }
    const Trace tr = Trace::make(ids, static_cast<int>(t.prompt_tokens.size()), vocab());
    const VerifiableSignals s = verify_signals(tr, t, vocab());
    if (s.strict_format) {
      ++strict;
      CHECK(s.soft_format == 1);
      CHECK(s.integer_response == 1);
    }
    if (s.correctness) {
      ++correct;
      CHECK(s.integer_response == 1);
    }
    CHECK((s.xml_count >= 0 && s.xml_count <= 4));
  }
  CHECK(correct > 0);
}

TEST_CASE("train and eval splits are disjoint") {
  TaskParams p;
  DataConfig d;
  const Dataset data = generate_dataset(p, d, 42);
  std::set<std::vector<TokenId>> train;
  for (const auto& t : data.train) train.insert(t.prompt_tokens);
  int overlap = 0;
  for (const auto& t : data.eval) overlap += train.count(t.prompt_tokens);
  CHECK(overlap == 0);
  CHECK(data.train.size() == 2000);
  CHECK(data.eval.size() == 200);
}

TEST_CASE("independent seed streams rarely collide") {
  // No deduplication here: raw collision rate between two streams.
  TaskParams p;
  Rng a = make_rng(5, "data.train"), b = make_rng(5, "data.eval");
  std::set<std::vector<TokenId>> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(sample_task(a, p, vocab()).prompt_tokens);
  int hits = 0;
  for (int i = 0; i < 200; ++i) hits += seen.count(sample_task(b, p, vocab()).prompt_tokens);
  CHECK(hits <= 2);
}

TEST_CASE("task json round trip") {
  Rng rng(3);
  const TaskInstance t = sample_task(rng, TaskParams{}, vocab());
  CHECK(task_from_json(task_to_json(t), vocab()) == t);
}
