#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace airl {

using TokenId = std::int32_t;
using Rng = std::mt19937_64;

// Error carrying a short machine-readable category, surfaced by the CLI as
// "error[<code>]: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t state = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

// Seed derivation used everywhere randomness is consumed:
//   seed = splitmix64(master ^ splitmix64(fnv1a64(purpose) + index))
// Each (purpose, index) pair names an independent stream, so work can be
// split across threads without changing results.
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                          std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view purpose,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(master, purpose, index));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// processed exactly once; callers write results into per-index slots.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

std::string hex64(std::uint64_t value);

}  // namespace airl
