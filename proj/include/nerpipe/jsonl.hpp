// Line-delimited record format: one JSON object per line with keys
//   id: string, text: string, entities: [{start_char, end_char, label, ...}]
// Entities are byte offsets into text and must align with token boundaries of
// the active tokenizer. Optional per-entity keys "source" and "confidence"
// carry provenance; unknown keys are ignored on read.

#ifndef NERPIPE_JSONL_HPP
#define NERPIPE_JSONL_HPP

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nerpipe/conll.hpp"
#include "nerpipe/core.hpp"
#include "nerpipe/tokenize.hpp"

namespace nerpipe {

struct MisalignedEntityError : std::runtime_error {
  std::string record_id;
  std::size_t start_char, end_char;
  MisalignedEntityError(const std::string& id, std::size_t s, std::size_t e)
      : std::runtime_error("record '" + id + "': entity [" + std::to_string(s) + "," +
                           std::to_string(e) + ") does not align with token boundaries"),
        record_id(id),
        start_char(s),
        end_char(e) {}
};

namespace detail {

inline EntitySpan char_span_to_token_span(const Record& r, std::size_t start_char,
                                          std::size_t end_char, const std::string& label,
                                          Source source, double confidence) {
  std::size_t start_tok = r.tokens.size(), end_tok = 0;
  bool start_ok = false, end_ok = false;
  for (std::size_t t = 0; t < r.tokens.size(); ++t) {
    if (r.tokens[t].start_char == start_char) {
      start_tok = t;
      start_ok = true;
    }
    if (r.tokens[t].end_char == end_char) {
      end_tok = t + 1;
      end_ok = true;
    }
  }
  if (!start_ok || !end_ok || start_tok >= end_tok)
    throw MisalignedEntityError(r.id, start_char, end_char);
  return {start_tok, end_tok, label, source, confidence};
}

}  // namespace detail

inline Record record_from_json(const nlohmann::json& obj, const Tokenizer& tok,
                               int line_no) {
  if (!obj.is_object() || !obj.contains("id") || !obj.contains("text"))
    throw MalformedLineError(line_no, obj.dump(), "expected object with id and text");
  Record r;
  r.id = obj.at("id").get<std::string>();
  r.raw = obj.at("text").get<std::string>();
  r.tokens = tok.tokenize(r.raw);
  if (obj.contains("entities")) {
    std::vector<EntitySpan> spans;
    for (const auto& e : obj.at("entities")) {
      Source source = Source::Model;
      if (e.contains("source"))
        if (auto s = source_from_name(e.at("source").get<std::string>())) source = *s;
      double conf = e.value("confidence", 1.0);
      spans.push_back(detail::char_span_to_token_span(
          r, e.at("start_char").get<std::size_t>(), e.at("end_char").get<std::size_t>(),
          e.at("label").get<std::string>(), source, conf));
    }
    sort_spans(spans);
    check_spans(spans, r.tokens.size(), "record '" + r.id + "'");
    r.gold = std::move(spans);
  }
  return r;
}

inline std::vector<Record> read_jsonl(const std::string& text,
                                      const Tokenizer& tok = DefaultTokenizer{}) {
  std::vector<Record> records;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded()) throw MalformedLineError(line_no, line, "invalid JSON");
    records.push_back(record_from_json(obj, tok, line_no));
  }
  return records;
}

inline nlohmann::json entity_to_json(const Record& r, const EntitySpan& s,
                                     bool with_provenance) {
  nlohmann::json e{{"start_char", r.tokens[s.start_tok].start_char},
                   {"end_char", r.tokens[s.end_tok - 1].end_char},
                   {"label", s.label}};
  if (with_provenance) {
    e["source"] = source_name(s.source);
    e["confidence"] = s.confidence;
  }
  return e;
}

inline nlohmann::json record_to_json(const Record& r, bool with_provenance = false) {
  nlohmann::json entities = nlohmann::json::array();
  const std::vector<EntitySpan>* spans = nullptr;
  if (r.predicted)
    spans = &*r.predicted;
  else if (r.gold)
    spans = &*r.gold;
  if (spans)
    for (const auto& s : *spans) entities.push_back(entity_to_json(r, s, with_provenance));
  return nlohmann::json{{"id", r.id}, {"text", r.raw}, {"entities", entities}};
}

// Writes predicted spans when present, otherwise gold spans.
inline std::string write_jsonl(const std::vector<Record>& records,
                               bool with_provenance = false) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r, with_provenance).dump();
    out += '\n';
  }
  return out;
}

}  // namespace nerpipe

#endif  // NERPIPE_JSONL_HPP
