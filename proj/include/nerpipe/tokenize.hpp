// Tokenization. The default tokenizer splits on ASCII whitespace, then peels
// leading/trailing ASCII punctuation into separate tokens. Chunks matching a
// protected pattern (numeric dates, clock times, decimal numbers, mixed
// letter/digit codes) are kept whole. Offsets are byte offsets into the raw
// UTF-8 text; since only ASCII bytes are ever split on, every token boundary
// falls on a codepoint boundary.
//
// The interface exists so a word-segmenting tokenizer can be swapped in.

#ifndef NERPIPE_TOKENIZE_HPP
#define NERPIPE_TOKENIZE_HPP

#include <cctype>
#include <string>
#include <string_view>

#include "nerpipe/core.hpp"

namespace nerpipe {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual TokenSequence tokenize(std::string_view raw) const = 0;
};

namespace detail {

inline bool ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool ascii_punct(char c) {
  auto u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u);
}

inline bool ascii_digit(char c) { return c >= '0' && c <= '9'; }
inline bool ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

inline bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!ascii_digit(c)) return false;
  return true;
}

// d{1,2} sep d{1,2} sep d{4} with sep in {/,-}, both separators equal.
inline bool looks_like_date(std::string_view s) {
  for (char sep : {'/', '-'}) {
    std::size_t p1 = s.find(sep);
    if (p1 == std::string_view::npos) continue;
    std::size_t p2 = s.find(sep, p1 + 1);
    if (p2 == std::string_view::npos) continue;
    std::string_view d = s.substr(0, p1);
    std::string_view m = s.substr(p1 + 1, p2 - p1 - 1);
    std::string_view y = s.substr(p2 + 1);
    if (d.size() >= 1 && d.size() <= 2 && m.size() >= 1 && m.size() <= 2 && y.size() == 4 &&
        all_digits(d) && all_digits(m) && all_digits(y))
      return true;
  }
  return false;
}

// d{1,2}:d{2}
inline bool looks_like_time(std::string_view s) {
  std::size_t p = s.find(':');
  if (p == std::string_view::npos) return false;
  std::string_view h = s.substr(0, p), m = s.substr(p + 1);
  return h.size() >= 1 && h.size() <= 2 && m.size() == 2 && all_digits(h) && all_digits(m);
}

// d+ [.,] d+
inline bool looks_like_decimal(std::string_view s) {
  std::size_t p = s.find_first_of(".,");
  if (p == std::string_view::npos || p == 0 || p + 1 >= s.size()) return false;
  return all_digits(s.substr(0, p)) && all_digits(s.substr(p + 1));
}

// Alphanumeric with at least one digit and one letter, e.g. shipment codes.
inline bool looks_like_code(std::string_view s) {
  bool digit = false, alpha = false;
  for (char c : s) {
    if (ascii_digit(c))
      digit = true;
    else if (ascii_alpha(c))
      alpha = true;
    else
      return false;
  }
  return digit && alpha;
}

inline bool protected_pattern(std::string_view s) {
  return looks_like_date(s) || looks_like_time(s) || looks_like_decimal(s) ||
         looks_like_code(s);
}

}  // namespace detail

class DefaultTokenizer : public Tokenizer {
 public:
  TokenSequence tokenize(std::string_view raw) const override {
    TokenSequence out;
    std::size_t i = 0;
    while (i < raw.size()) {
      if (detail::ascii_space(raw[i])) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < raw.size() && !detail::ascii_space(raw[j])) ++j;
      emit_chunk(raw, i, j, out);
      i = j;
    }
    return out;
  }

 private:
  static void emit_chunk(std::string_view raw, std::size_t lo, std::size_t hi,
                         TokenSequence& out) {
    auto push = [&](std::size_t a, std::size_t b) {
      out.push_back({std::string(raw.substr(a, b - a)), a, b});
    };
    // Peel leading punctuation, one token per character.
    while (lo < hi && !detail::protected_pattern(raw.substr(lo, hi - lo)) &&
           detail::ascii_punct(raw[lo]))
      push(lo, lo + 1), ++lo;
    // Peel trailing punctuation; emitted after the middle, in text order.
    std::size_t mid_hi = hi;
    while (mid_hi > lo && !detail::protected_pattern(raw.substr(lo, mid_hi - lo)) &&
           detail::ascii_punct(raw[mid_hi - 1]))
      --mid_hi;
    if (mid_hi > lo) push(lo, mid_hi);
    for (std::size_t k = mid_hi; k < hi; ++k) push(k, k + 1);
  }
};

inline TokenSequence tokenize(std::string_view raw) {
  static const DefaultTokenizer tok;
  return tok.tokenize(raw);
}

// Raw text for a token list when the original text is unavailable (e.g. column
// formats): tokens joined by single spaces, offsets assigned accordingly.
inline std::string join_tokens(const std::vector<std::string>& texts, TokenSequence& tokens) {
  std::string raw;
  tokens.clear();
  for (const auto& t : texts) {
    if (!raw.empty()) raw += ' ';
    std::size_t start = raw.size();
    raw += t;
    tokens.push_back({t, start, raw.size()});
  }
  return raw;
}

}  // namespace nerpipe

#endif  // NERPIPE_TOKENIZE_HPP
