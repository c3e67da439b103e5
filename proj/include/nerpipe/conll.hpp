// Column corpus format: one "token<TAB>tag" pair per line, blank line between
// sentences, UTF-8. Reading reconstructs raw text by joining tokens with single
// spaces and assigns ids by sentence index.

#ifndef NERPIPE_CONLL_HPP
#define NERPIPE_CONLL_HPP

#include <sstream>
#include <string>
#include <vector>

#include "nerpipe/core.hpp"
#include "nerpipe/tokenize.hpp"

namespace nerpipe {

struct MalformedLineError : std::runtime_error {
  int line_no;
  std::string line;
  MalformedLineError(int line_no_, const std::string& line_, const std::string& why)
      : std::runtime_error("line " + std::to_string(line_no_) + ": " + why + ": '" + line_ + "'"),
        line_no(line_no_),
        line(line_) {}
};

namespace detail {

inline void check_tag_syntax(const std::string& tag, int line_no, const std::string& line) {
  try {
    parse_tag(tag);
  } catch (const InvalidTagError&) {
    throw MalformedLineError(line_no, line, "invalid tag");
  }
}

}  // namespace detail

inline std::vector<Record> read_conll(const std::string& text) {
  std::vector<Record> records;
  std::vector<std::string> texts;
  TagSequence tags;

  auto flush = [&]() {
    if (texts.empty()) return;
    Record r;
    r.id = std::to_string(records.size());
    r.raw = join_tokens(texts, r.tokens);
    r.gold = bio_to_spans(tags);
    records.push_back(std::move(r));
    texts.clear();
    tags.clear();
  };

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw MalformedLineError(line_no, line, "expected 'token<TAB>tag'");
    if (line.find('\t', tab + 1) != std::string::npos)
      throw MalformedLineError(line_no, line, "more than one tab");
    std::string tok = line.substr(0, tab);
    std::string tag = line.substr(tab + 1);
    detail::check_tag_syntax(tag, line_no, line);
    texts.push_back(std::move(tok));
    tags.push_back(std::move(tag));
  }
  flush();
  return records;
}

// Writes gold spans when present, otherwise predicted spans, otherwise all O.
inline std::string write_conll(const std::vector<Record>& records) {
  std::string out;
  for (const auto& r : records) {
    const std::vector<EntitySpan>* spans = nullptr;
    if (r.gold)
      spans = &*r.gold;
    else if (r.predicted)
      spans = &*r.predicted;
    TagSequence tags = spans ? spans_to_bio(*spans, r.tokens.size())
                             : TagSequence(r.tokens.size(), "O");
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      out += r.tokens[t].text;
      out += '\t';
      out += tags[t];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

}  // namespace nerpipe

#endif  // NERPIPE_CONLL_HPP
