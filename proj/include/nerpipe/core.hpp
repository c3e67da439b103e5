// Core data model: tokens, BIO tag sequences, entity spans, records, and the
// conversions between span and tag representations.

#ifndef NERPIPE_CORE_HPP
#define NERPIPE_CORE_HPP

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nerpipe {

struct Token {
  std::string text;
  std::size_t start_char = 0;  // byte offset into the raw UTF-8 text, inclusive
  std::size_t end_char = 0;    // exclusive

  bool operator==(const Token&) const = default;
};

using TokenSequence = std::vector<Token>;

// Per-token tags: "O", "B-<label>" or "I-<label>".
using TagSequence = std::vector<std::string>;

enum class Source { Rule, Model, Post };

inline const char* source_name(Source s) {
  switch (s) {
    case Source::Rule: return "RULE";
    case Source::Model: return "MODEL";
    case Source::Post: return "POST";
  }
  return "?";
}

inline std::optional<Source> source_from_name(std::string_view s) {
  if (s == "RULE") return Source::Rule;
  if (s == "MODEL") return Source::Model;
  if (s == "POST") return Source::Post;
  return std::nullopt;
}

struct EntitySpan {
  std::size_t start_tok = 0;  // inclusive
  std::size_t end_tok = 0;    // exclusive
  std::string label;
  Source source = Source::Model;
  double confidence = 1.0;

  std::size_t length() const { return end_tok - start_tok; }
  bool operator==(const EntitySpan&) const = default;
};

struct Record {
  std::string id;
  std::string raw;
  TokenSequence tokens;
  std::optional<std::vector<EntitySpan>> gold;
  std::optional<std::vector<EntitySpan>> predicted;

  bool operator==(const Record&) const = default;
};

struct OverlappingSpansError : std::runtime_error {
  explicit OverlappingSpansError(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidTagError : std::runtime_error {
  explicit InvalidTagError(const std::string& tag)
      : std::runtime_error("invalid BIO tag: '" + tag + "'") {}
};

struct EmptyRecordGold : std::runtime_error {
  std::string record_id;
  explicit EmptyRecordGold(const std::string& id)
      : std::runtime_error("record '" + id + "' has no gold spans"), record_id(id) {}
};

inline bool spans_overlap(const EntitySpan& a, const EntitySpan& b) {
  return a.start_tok < b.end_tok && b.start_tok < a.end_tok;
}

inline void sort_spans(std::vector<EntitySpan>& spans) {
  std::sort(spans.begin(), spans.end(), [](const EntitySpan& a, const EntitySpan& b) {
    if (a.start_tok != b.start_tok) return a.start_tok < b.start_tok;
    if (a.end_tok != b.end_tok) return a.end_tok < b.end_tok;
    return a.label < b.label;
  });
}

// Checks bounds and pairwise non-overlap; spans need not be sorted.
inline void check_spans(const std::vector<EntitySpan>& spans, std::size_t n,
                        const std::string& context) {
  auto sorted = spans;
  sort_spans(sorted);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& s = sorted[i];
    if (s.start_tok >= s.end_tok || s.end_tok > n)
      throw OverlappingSpansError(context + ": span [" + std::to_string(s.start_tok) + "," +
                                  std::to_string(s.end_tok) + ") out of bounds for length " +
                                  std::to_string(n));
    if (i > 0 && spans_overlap(sorted[i - 1], s))
      throw OverlappingSpansError(context + ": spans [" + std::to_string(sorted[i - 1].start_tok) +
                                  "," + std::to_string(sorted[i - 1].end_tok) + ") and [" +
                                  std::to_string(s.start_tok) + "," + std::to_string(s.end_tok) +
                                  ") overlap");
  }
}

// Splits a tag into prefix ('O', 'B' or 'I') and label part. Throws on anything
// that is not "O", "B-x" or "I-x".
inline std::pair<char, std::string_view> parse_tag(std::string_view tag) {
  if (tag == "O") return {'O', {}};
  if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-')
    return {tag[0], tag.substr(2)};
  throw InvalidTagError(std::string(tag));
}

inline bool is_valid_bio(const TagSequence& tags) {
  std::string_view open;  // label of the currently open entity, empty if none
  for (const auto& tag : tags) {
    auto [prefix, label] = parse_tag(tag);
    if (prefix == 'I' && label != open) return false;
    open = (prefix == 'O') ? std::string_view{} : label;
  }
  return true;
}

inline TagSequence spans_to_bio(const std::vector<EntitySpan>& spans, std::size_t n) {
  check_spans(spans, n, "spans_to_bio");
  TagSequence tags(n, "O");
  for (const auto& s : spans) {
    tags[s.start_tok] = "B-" + s.label;
    for (std::size_t t = s.start_tok + 1; t < s.end_tok; ++t) tags[t] = "I-" + s.label;
  }
  return tags;
}

// Decodes BIO tags to spans, sorted by start. Lenient: an I-x that does not
// continue an open x entity opens a new one, as if it were B-x.
inline std::vector<EntitySpan> bio_to_spans(const TagSequence& tags,
                                            Source source = Source::Model,
                                            double confidence = 1.0) {
  std::vector<EntitySpan> spans;
  std::string open;  // label of the span being built
  std::size_t open_start = 0;
  auto close = [&](std::size_t end) {
    if (!open.empty()) {
      spans.push_back({open_start, end, open, source, confidence});
      open.clear();
    }
  };
  for (std::size_t t = 0; t < tags.size(); ++t) {
    auto [prefix, label] = parse_tag(tags[t]);
    if (prefix == 'O') {
      close(t);
    } else if (prefix == 'B' || label != open) {
      close(t);
      open = std::string(label);
      open_start = t;
    }
  }
  close(tags.size());
  return spans;
}

// Repairs a possibly invalid BIO sequence in place: I-x openings become B-x.
inline void repair_bio(TagSequence& tags) {
  std::string_view open;
  for (auto& tag : tags) {
    auto [prefix, label] = parse_tag(tag);
    if (prefix == 'I' && label != open) tag[0] = 'B';
    open = (prefix == 'O') ? std::string_view{} : parse_tag(tag).second;
  }
}

}  // namespace nerpipe

#endif  // NERPIPE_CORE_HPP
