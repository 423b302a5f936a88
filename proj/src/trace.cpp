#include "airl/trace.hpp"

#include <algorithm>
#include <sstream>

namespace airl {

Vocabulary::Vocabulary(std::vector<std::string> symbols,
                       const SpecialTokens& specials)
    : symbols_(std::move(symbols)) {
  if (symbols_.empty() || static_cast<int>(symbols_.size()) > kMaxSize) {
    throw std::invalid_argument("vocabulary size must be in [1, 256]");
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto& s = symbols_[i];
    if (s.empty() || s.find_first_of(" \t\n\r") != std::string::npos) {
      throw std::invalid_argument("vocabulary symbol '" + s +
                                  "' is empty or contains whitespace");
    }
    if (!index_.emplace(s, static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary symbol '" + s + "'");
    }
  }
  auto lookup = [&](const std::string& s) {
    auto it = index_.find(s);
    if (it == index_.end()) {
      throw std::invalid_argument("special token '" + s + "' not in symbols");
    }
    return it->second;
  };
  special_.pad = lookup(specials.pad);
  special_.eos = lookup(specials.eos);
  special_.begin_think = lookup(specials.begin_think);
  special_.end_think = lookup(specials.end_think);
  special_.begin_answer = lookup(specials.begin_answer);
  special_.end_answer = lookup(specials.end_answer);
  for (int d = 0; d <= 9; ++d) {
    auto it = index_.find(std::to_string(d));
    if (it == index_.end()) {
      throw std::invalid_argument("vocabulary lacks digit " +
                                  std::to_string(d));
    }
    digit_ids_.push_back(it->second);
  }
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary");
  }
  return symbols_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view symbol) const {
  if (auto found = find(symbol)) return *found;
  throw std::invalid_argument("unknown symbol '" + std::string(symbol) + "'");
}

bool Vocabulary::is_marker(TokenId id) const {
  return id == special_.begin_think || id == special_.end_think ||
         id == special_.begin_answer || id == special_.end_answer;
}

std::optional<int> Vocabulary::digit_value(TokenId id) const {
  for (int d = 0; d <= 9; ++d) {
    if (digit_ids_[d] == id) return d;
  }
  return std::nullopt;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    TokenId t = id(word);
    if (t == special_.pad) {
      throw std::invalid_argument("pad symbol cannot appear in text");
    }
    out.push_back(t);
  }
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += symbol(ids[i]);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return {{"symbols", symbols_},
          {"special_ids",
           {{"pad", special_.pad},
            {"eos", special_.eos},
            {"begin_think", special_.begin_think},
            {"end_think", special_.end_think},
            {"begin_answer", special_.begin_answer},
            {"end_answer", special_.end_answer}}}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  auto symbols = j.at("symbols").get<std::vector<std::string>>();
  const auto& ids = j.at("special_ids");
  auto name = [&](const char* key) {
    return symbols.at(ids.at(key).get<std::size_t>());
  };
  SpecialTokens specials{name("pad"),       name("eos"),
                         name("begin_think"), name("end_think"),
                         name("begin_answer"), name("end_answer")};
  return Vocabulary(std::move(symbols), specials);
}

Vocabulary build_vocabulary(const VocabSpec& spec) {
  const auto& sp = spec.specials;
  std::vector<std::string> symbols = {sp.pad,         sp.eos,
                                      sp.begin_think, sp.end_think,
                                      sp.begin_answer, sp.end_answer};
  for (const auto* group : {&spec.digits, &spec.operators, &spec.keywords}) {
    symbols.insert(symbols.end(), group->begin(), group->end());
  }
  return Vocabulary(std::move(symbols), sp);
}

Trace Trace::make(std::vector<TokenId> ids, int prompt_len,
                  const Vocabulary& vocab) {
  if (prompt_len <= 0 || prompt_len >= static_cast<int>(ids.size())) {
    throw std::invalid_argument(
        "trace needs a nonempty prompt and a nonempty response");
  }
  for (TokenId t : ids) {
    if (t < 0 || t >= vocab.size()) {
      throw std::invalid_argument("token id outside vocabulary");
    }
    if (t == vocab.special().pad) {
      throw std::invalid_argument("pad token inside the valid region");
    }
  }
  Trace trace;
  trace.ids_ = std::move(ids);
  trace.prompt_len_ = prompt_len;
  return trace;
}

Trace Trace::from_padded(std::span<const TokenId> ids, int prompt_len,
                         const Vocabulary& vocab) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == vocab.special().pad) --n;
  return make(std::vector<TokenId>(ids.begin(), ids.begin() + n), prompt_len,
              vocab);
}

std::vector<TokenId> Trace::padded(int max_len, TokenId pad) const {
  if (max_len < length()) {
    throw std::length_error("trace longer than padded length");
  }
  std::vector<TokenId> out(ids_);
  out.resize(max_len, pad);
  return out;
}

SegmentMap segment(const Trace& trace, const Vocabulary& vocab) {
  const auto& sp = vocab.special();
  const TokenId markers[4] = {sp.begin_think, sp.end_think, sp.begin_answer,
                              sp.end_answer};
  int pos[4] = {-1, -1, -1, -1};
  int count[4] = {0, 0, 0, 0};
  for (int i = trace.prompt_len(); i < trace.length(); ++i) {
    for (int m = 0; m < 4; ++m) {
      if (trace[i] == markers[m]) {
        ++count[m];
        pos[m] = i;
      }
    }
  }
  SegmentMap out;
  for (int m = 0; m < 4; ++m) {
    if (count[m] != 1) return out;
  }
  if (!(pos[0] < pos[1] && pos[1] < pos[2] && pos[2] < pos[3])) return out;
  out.think = {pos[0] + 1, pos[1]};
  out.answer = {pos[2] + 1, pos[3]};
  out.well_formed = true;
  return out;
}

std::optional<Span> find_span(const Trace& trace, TokenId open,
                              TokenId close) {
  int begin = -1;
  for (int i = trace.prompt_len(); i < trace.length(); ++i) {
    if (begin < 0) {
      if (trace[i] == open) begin = i + 1;
    } else if (trace[i] == close) {
      return Span{begin, i};
    }
  }
  return std::nullopt;
}

}  // namespace airl
