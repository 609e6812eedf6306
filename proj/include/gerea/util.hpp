#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gerea {

// Exit-code mapping: UserError -> 1, anything else -> 2.
class UserError : public std::runtime_error {
 public:
  explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---- hashing ---------------------------------------------------------------

inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t v);

// ---- deterministic RNG -----------------------------------------------------

// splitmix64; self-contained so draws do not depend on libstdc++ internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    // Box-Muller, one value per call
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
};

inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  return fnv1a64(tag, seed ^ 0x9e3779b97f4a7c15ULL);
}

// ---- string helpers --------------------------------------------------------

std::string to_lower(std::string s);
std::string trim(const std::string& s);
// collapse runs of whitespace to single spaces, trim ends
std::string collapse_whitespace(const std::string& s);
std::vector<std::string> split_whitespace(const std::string& s);

struct TokenSpan {
  std::string text;
  size_t begin = 0;  // byte offset into the source string
  size_t end = 0;
};
// whitespace tokenization with byte offsets; trailing punctuation is kept in
// the span text (callers strip as needed)
std::vector<TokenSpan> tokenize_with_offsets(const std::string& s);

// token-level F1 overlap of two already-normalized strings
double token_f1(const std::string& a, const std::string& b);

}  // namespace gerea
