// Hashed sparse features for the sequence tagger. A fixed set of 16 templates
// per token position; every template emits exactly one feature, so the active
// count is constant unless two templates collide in the hash space.

#ifndef NERPIPE_FEATURES_HPP
#define NERPIPE_FEATURES_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "nerpipe/core.hpp"
#include "nerpipe/tokenize.hpp"

namespace nerpipe {

struct Feature {
  std::uint32_t index = 0;
  double value = 0.0;
  bool operator==(const Feature&) const = default;
};

// Indices unique and ascending; colliding templates accumulate their values.
using FeatureVector = std::vector<Feature>;

namespace detail {

inline std::uint64_t fnv1a64(std::uint64_t seed, unsigned char template_id,
                             std::string_view value) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  mix(template_id);
  for (unsigned char c : value) mix(c);
  return h;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
  return out;
}

// Run-compressed byte classes: X upper, x lower, d digit, u non-ascii, o other.
// "Vietcombank" -> "Xx", "12/05" -> "dod".
inline std::string word_shape(std::string_view s) {
  std::string out;
  char prev = 0;
  for (unsigned char c : s) {
    char cls = c >= 0x80                 ? 'u'
               : (c >= 'A' && c <= 'Z') ? 'X'
               : (c >= 'a' && c <= 'z') ? 'x'
               : (c >= '0' && c <= '9') ? 'd'
                                        : 'o';
    if (cls != prev) out.push_back(cls);
    prev = cls;
  }
  return out;
}

inline bool contains_digit(std::string_view s) {
  for (char c : s)
    if (ascii_digit(c)) return true;
  return false;
}

}  // namespace detail

inline constexpr std::size_t kFeatureTemplates = 16;

inline FeatureVector extract_features(const TokenSequence& tokens, std::size_t t,
                                      std::size_t dim, std::uint64_t seed) {
  using detail::ascii_lower;
  const std::string bos = "<s>", eos = "</s>";
  auto word = [&](std::ptrdiff_t i) -> std::string {
    if (i < 0) return bos;
    if (i >= static_cast<std::ptrdiff_t>(tokens.size())) return eos;
    return ascii_lower(tokens[static_cast<std::size_t>(i)].text);
  };
  auto shape = [&](std::ptrdiff_t i) -> std::string {
    if (i < 0) return bos;
    if (i >= static_cast<std::ptrdiff_t>(tokens.size())) return eos;
    return detail::word_shape(tokens[static_cast<std::size_t>(i)].text);
  };
  std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t);
  const std::string& raw = tokens[t].text;
  std::string lower = ascii_lower(raw);

  std::string values[kFeatureTemplates];
  values[0] = lower;
  values[1] = word(p - 1);
  values[2] = word(p - 2);
  values[3] = word(p + 1);
  values[4] = word(p + 2);
  values[5] = detail::word_shape(raw);
  values[6] = shape(p - 1);
  values[7] = shape(p + 1);
  values[8] = lower.substr(0, 1);
  values[9] = lower.substr(0, std::min<std::size_t>(2, lower.size()));
  values[10] = lower.substr(0, std::min<std::size_t>(3, lower.size()));
  values[11] = lower.substr(lower.size() - std::min<std::size_t>(1, lower.size()));
  values[12] = lower.substr(lower.size() - std::min<std::size_t>(2, lower.size()));
  values[13] = lower.substr(lower.size() - std::min<std::size_t>(3, lower.size()));
  values[14] = word(p - 1) + "|" + lower;
  values[15] = std::string(detail::all_digits(raw) ? "D" : "-") +
               (detail::contains_digit(raw) ? "g" : "-") +
               (!raw.empty() && raw[0] >= 'A' && raw[0] <= 'Z' ? "C" : "-") +
               (t == 0 ? "B" : "-") + (t + 1 == tokens.size() ? "E" : "-");

  FeatureVector fv;
  fv.reserve(kFeatureTemplates);
  for (std::size_t i = 0; i < kFeatureTemplates; ++i)
    fv.push_back({static_cast<std::uint32_t>(
                      detail::fnv1a64(seed, static_cast<unsigned char>(i), values[i]) % dim),
                  1.0});
  std::sort(fv.begin(), fv.end(),
            [](const Feature& a, const Feature& b) { return a.index < b.index; });
  FeatureVector merged;
  for (const auto& f : fv) {
    if (!merged.empty() && merged.back().index == f.index)
      merged.back().value += f.value;
    else
      merged.push_back(f);
  }
  return merged;
}

inline std::vector<FeatureVector> extract_sequence_features(const TokenSequence& tokens,
                                                            std::size_t dim,
                                                            std::uint64_t seed) {
  std::vector<FeatureVector> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t)
    out.push_back(extract_features(tokens, t, dim, seed));
  return out;
}

}  // namespace nerpipe

#endif  // NERPIPE_FEATURES_HPP
