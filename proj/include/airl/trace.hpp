#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "airl/common.hpp"

namespace airl {

struct SpecialTokens {
  std::string pad = "<pad>";
  std::string eos = "<eos>";
  std::string begin_think = "<think>";
  std::string end_think = "</think>";
  std::string begin_answer = "<answer>";
  std::string end_answer = "</answer>";
};

// Symbol inventory used to build a vocabulary. Ordering in the resulting
// vocabulary is: specials, digits, operators, keywords.
struct VocabSpec {
  SpecialTokens specials;
  std::vector<std::string> digits = {"0", "1", "2", "3", "4",
                                     "5", "6", "7", "8", "9"};
  std::vector<std::string> operators = {"+", "-", "*", "=", "."};
  std::vector<std::string> keywords = {"start", "with", "then", "add",
                                       "sub",   "mul",  "result", "?"};
};

struct SpecialIds {
  TokenId pad = 0;
  TokenId eos = 0;
  TokenId begin_think = 0;
  TokenId end_think = 0;
  TokenId begin_answer = 0;
  TokenId end_answer = 0;
};

class Vocabulary {
 public:
  static constexpr int kMaxSize = 256;

  Vocabulary() = default;
  // Throws std::invalid_argument on duplicate or empty symbols.
  Vocabulary(std::vector<std::string> symbols, const SpecialTokens& specials);

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const SpecialIds& special() const { return special_; }

  const std::string& symbol(TokenId id) const;
  std::optional<TokenId> find(std::string_view symbol) const;
  TokenId id(std::string_view symbol) const;  // throws if unknown

  bool is_marker(TokenId id) const;
  // Digit value 0-9, or nullopt for non-digit tokens.
  std::optional<int> digit_value(TokenId id) const;
  TokenId digit(int value) const { return digit_ids_.at(value); }

  // Whitespace-separated symbols to ids. The pad symbol is rejected.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const {
    return symbols_ == other.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  SpecialIds special_;
  std::vector<TokenId> digit_ids_;
};

Vocabulary build_vocabulary(const VocabSpec& spec = {});

// Half-open token range [begin, end).
struct Span {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(int pos) const { return pos >= begin && pos < end; }
  bool operator==(const Span&) const = default;
};

// A prompt followed by a response. Only valid (non-pad) tokens are stored;
// positions at or beyond length() are pad by definition.
class Trace {
 public:
  Trace() = default;

  // Validates 0 < prompt_len < ids.size(), ids in range and non-pad.
  static Trace make(std::vector<TokenId> ids, int prompt_len,
                    const Vocabulary& vocab);
  // Strips trailing pad, then validates as make().
  static Trace from_padded(std::span<const TokenId> ids, int prompt_len,
                           const Vocabulary& vocab);

  std::span<const TokenId> ids() const { return ids_; }
  std::span<const TokenId> prompt() const {
    return std::span(ids_).first(prompt_len_);
  }
  std::span<const TokenId> response() const {
    return std::span(ids_).subspan(prompt_len_);
  }
  TokenId operator[](int pos) const { return ids_[pos]; }
  int prompt_len() const { return prompt_len_; }
  int length() const { return static_cast<int>(ids_.size()); }
  int response_len() const { return length() - prompt_len_; }

  std::vector<TokenId> padded(int max_len, TokenId pad) const;

  bool operator==(const Trace&) const = default;

 private:
  std::vector<TokenId> ids_;
  int prompt_len_ = 0;
};

inline int last_valid_index(const Trace& trace) { return trace.length() - 1; }

struct SegmentMap {
  Span think;
  Span answer;
  bool well_formed = false;
};

// well_formed iff each of the four markers appears exactly once in the
// response, in think/answer order. Malformed traces get empty spans.
SegmentMap segment(const Trace& trace, const Vocabulary& vocab);

// Lenient span lookup: first `open` in the response, then the first `close`
// after it. Used where partial structure is still meaningful.
std::optional<Span> find_span(const Trace& trace, TokenId open, TokenId close);

}  // namespace airl
