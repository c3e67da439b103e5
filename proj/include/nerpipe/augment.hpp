// Phase-2 data augmentation: entity-preserving synonym replacement, entity
// span recombination across records, and back-translation through an external
// adapter. Entity surface forms survive every transform; records where that
// cannot be guaranteed are dropped, never silently altered.

#ifndef NERPIPE_AUGMENT_HPP
#define NERPIPE_AUGMENT_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nerpipe/adapter.hpp"
#include "nerpipe/core.hpp"
#include "nerpipe/features.hpp"
#include "nerpipe/rng.hpp"
#include "nerpipe/tokenize.hpp"

namespace nerpipe {

struct LexiconError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EntityLost : std::runtime_error {
  std::string record_id;
  explicit EntityLost(const std::string& id, const std::string& surface)
      : std::runtime_error("record '" + id + "': entity '" + surface +
                           "' not found after translation"),
        record_id(id) {}
};

struct SynonymLexicon {
  std::map<std::string, std::vector<std::string>> entries;  // lowercase key -> options
};

// File format: key TAB replacement[,replacement...]. Keys are stored
// lowercased; a replacement equal to its key is a config error.
inline SynonymLexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LexiconError("cannot open lexicon file '" + path + "'");
  SynonymLexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw LexiconError("lexicon '" + path + "' line " + std::to_string(line_no) +
                         ": expected 'key<TAB>replacement[,replacement...]'");
    std::string key = detail::ascii_lower(line.substr(0, tab));
    std::vector<std::string> options;
    std::string rest = line.substr(tab + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      std::size_t comma = rest.find(',', pos);
      std::string opt = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                     : comma - pos);
      if (opt.empty() || detail::ascii_lower(opt) == key)
        throw LexiconError("lexicon '" + path + "' line " + std::to_string(line_no) +
                           ": replacement must be non-empty and differ from its key");
      options.push_back(std::move(opt));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    lex.entries[key] = std::move(options);
  }
  return lex;
}

struct AugmentConfig {
  double replace_prob = 0.15;
  std::uint64_t seed = 1;
  std::size_t max_variants = 2;     // synonym variants per record
  std::size_t recombine_pairs = 1;  // swap rounds per corpus pass
};

namespace detail {

inline Record rebuild_record(const std::string& id, const std::vector<std::string>& texts,
                             std::vector<EntitySpan> spans) {
  Record out;
  out.id = id;
  out.raw = join_tokens(texts, out.tokens);
  sort_spans(spans);
  check_spans(spans, out.tokens.size(), "rebuilt record '" + id + "'");
  out.gold = std::move(spans);
  return out;
}

}  // namespace detail

// Each non-entity token is independently replaced with probability p by a
// lexicon option; entity tokens are copied verbatim and spans re-indexed
// (replacements may be multi-token).
inline Record synonym_replace(const Record& record, const SynonymLexicon& lexicon, double p,
                              Rng& rng, const std::string& variant_id) {
  if (!record.gold) throw EmptyRecordGold(record.id);
  std::vector<char> in_entity(record.tokens.size(), 0);
  for (const auto& s : *record.gold)
    for (std::size_t t = s.start_tok; t < s.end_tok; ++t) in_entity[t] = 1;

  std::vector<std::string> texts;
  std::vector<std::size_t> new_pos(record.tokens.size() + 1, 0);
  for (std::size_t t = 0; t < record.tokens.size(); ++t) {
    new_pos[t] = texts.size();
    const std::string& word = record.tokens[t].text;
    if (!in_entity[t] && rng.next_double() < p) {
      auto it = lexicon.entries.find(detail::ascii_lower(word));
      if (it != lexicon.entries.end()) {
        const std::string& repl = it->second[rng.next_below(it->second.size())];
        std::istringstream ws(repl);
        std::string piece;
        while (ws >> piece) texts.push_back(piece);
        continue;
      }
    }
    texts.push_back(word);
  }
  new_pos[record.tokens.size()] = texts.size();

  std::vector<EntitySpan> spans;
  for (const auto& s : *record.gold) {
    EntitySpan ns = s;
    ns.start_tok = new_pos[s.start_tok];
    ns.end_tok = new_pos[s.end_tok];
    spans.push_back(ns);
  }
  return detail::rebuild_record(variant_id, texts, std::move(spans));
}

namespace detail {

inline std::vector<std::string> span_surface(const Record& r, const EntitySpan& s) {
  std::vector<std::string> out;
  for (std::size_t t = s.start_tok; t < s.end_tok; ++t) out.push_back(r.tokens[t].text);
  return out;
}

// Replaces the tokens of span `idx` with `surface`, shifting later spans.
inline Record splice_entity(const Record& r, std::size_t idx,
                            const std::vector<std::string>& surface, const std::string& new_id) {
  const EntitySpan& target = (*r.gold)[idx];
  std::vector<std::string> texts;
  for (std::size_t t = 0; t < target.start_tok; ++t) texts.push_back(r.tokens[t].text);
  texts.insert(texts.end(), surface.begin(), surface.end());
  for (std::size_t t = target.end_tok; t < r.tokens.size(); ++t) texts.push_back(r.tokens[t].text);

  std::ptrdiff_t delta = static_cast<std::ptrdiff_t>(surface.size()) -
                         static_cast<std::ptrdiff_t>(target.length());
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < r.gold->size(); ++i) {
    EntitySpan ns = (*r.gold)[i];
    if (i == idx) {
      ns.end_tok = ns.start_tok + surface.size();
    } else if (ns.start_tok >= target.end_tok) {
      ns.start_tok = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ns.start_tok) + delta);
      ns.end_tok = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ns.end_tok) + delta);
    }
    spans.push_back(ns);
  }
  return rebuild_record(new_id, texts, std::move(spans));
}

}  // namespace detail

// Pairs records sharing an entity label and swaps one entity surface between
// them; per-label entity counts are conserved corpus-wide. Returns the empty
// set when no pair shares a label.
inline std::vector<Record> recombine_entities(const std::vector<Record>& records,
                                              const AugmentConfig& cfg) {
  std::vector<Record> out;
  if (records.size() < 2) return out;
  for (const auto& r : records)
    if (!r.gold) throw EmptyRecordGold(r.id);

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  auto labels_of = [](const Record& r) {
    std::set<std::string> ls;
    for (const auto& s : *r.gold) ls.insert(s.label);
    return ls;
  };

  for (std::size_t round = 0; round < cfg.recombine_pairs; ++round) {
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<char> used(records.size(), 0);
    for (std::size_t a = 0; a < order.size(); ++a) {
      if (used[order[a]]) continue;
      const Record& ra = records[order[a]];
      std::set<std::string> la = labels_of(ra);
      for (std::size_t b = a + 1; b < order.size(); ++b) {
        if (used[order[b]]) continue;
        const Record& rb = records[order[b]];
        std::vector<std::string> common;
        for (const auto& l : labels_of(rb))
          if (la.count(l)) common.push_back(l);
        if (common.empty()) continue;
        used[order[a]] = used[order[b]] = 1;

        std::sort(common.begin(), common.end());
        const std::string& label = common[rng.next_below(common.size())];
        auto pick = [&](const Record& r) {
          std::vector<std::size_t> idx;
          for (std::size_t i = 0; i < r.gold->size(); ++i)
            if ((*r.gold)[i].label == label) idx.push_back(i);
          return idx[rng.next_below(idx.size())];
        };
        std::size_t ia = pick(ra), ib = pick(rb);
        auto sa = detail::span_surface(ra, (*ra.gold)[ia]);
        auto sb = detail::span_surface(rb, (*rb.gold)[ib]);
        std::string suffix = "#rc" + std::to_string(round);
        out.push_back(detail::splice_entity(ra, ia, sb, ra.id + suffix));
        out.push_back(detail::splice_entity(rb, ib, sa, rb.id + suffix));
        break;
      }
    }
  }
  return out;
}

struct BacktranslateResult {
  std::vector<Record> records;
  std::vector<std::string> dropped;  // record ids where an entity was lost
};

// Sends each record's text out for paraphrase with its entity strings marked
// as protected, then re-tokenizes and re-locates every entity. A record whose
// entity cannot be found verbatim in the returned text is dropped.
inline Record backtranslate_record(const Record& record, TranslateAdapter& adapter,
                                   const Tokenizer& tokenizer) {
  if (!record.gold) throw EmptyRecordGold(record.id);
  std::vector<std::string> surfaces;
  for (const auto& s : *record.gold) {
    std::string joined;
    for (std::size_t t = s.start_tok; t < s.end_tok; ++t) {
      if (!joined.empty()) joined += ' ';
      joined += record.tokens[t].text;
    }
    surfaces.push_back(joined);
  }
  std::string text = adapter.translate(record.raw, surfaces);

  Record out;
  out.id = record.id + "#bt";
  out.raw = text;
  out.tokens = tokenizer.tokenize(text);

  std::vector<char> claimed(out.tokens.size(), 0);
  std::vector<EntitySpan> spans;
  for (std::size_t si = 0; si < record.gold->size(); ++si) {
    const EntitySpan& s = (*record.gold)[si];
    std::vector<std::string> want = detail::span_surface(record, s);
    bool placed = false;
    for (std::size_t start = 0; start + want.size() <= out.tokens.size() && !placed; ++start) {
      bool ok = true;
      for (std::size_t k = 0; k < want.size() && ok; ++k)
        ok = !claimed[start + k] && out.tokens[start + k].text == want[k];
      if (ok) {
        for (std::size_t k = 0; k < want.size(); ++k) claimed[start + k] = 1;
        EntitySpan ns = s;
        ns.start_tok = start;
        ns.end_tok = start + want.size();
        spans.push_back(ns);
        placed = true;
      }
    }
    if (!placed) throw EntityLost(record.id, surfaces[si]);
  }
  sort_spans(spans);
  check_spans(spans, out.tokens.size(), "backtranslated record '" + record.id + "'");
  out.gold = std::move(spans);
  return out;
}

inline BacktranslateResult backtranslate(const std::vector<Record>& records,
                                         TranslateAdapter& adapter, const Tokenizer& tokenizer) {
  BacktranslateResult result;
  for (const auto& r : records) {
    try {
      result.records.push_back(backtranslate_record(r, adapter, tokenizer));
    } catch (const EntityLost&) {
      result.dropped.push_back(r.id);
    }
  }
  return result;
}

// Built-in transforms only; back-translation needs an adapter and is invoked
// separately. Output contains variants only, not the originals.
inline std::vector<Record> augment_corpus(const std::vector<Record>& records,
                                          const SynonymLexicon& lexicon,
                                          const AugmentConfig& cfg) {
  std::vector<Record> out;
  Rng rng(cfg.seed);
  for (const auto& r : records)
    for (std::size_t v = 0; v < cfg.max_variants; ++v)
      out.push_back(synonym_replace(r, lexicon, cfg.replace_prob, rng,
                                    r.id + "#s" + std::to_string(v)));
  if (cfg.recombine_pairs > 0) {
    auto rec = recombine_entities(records, cfg);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  return out;
}

}  // namespace nerpipe

#endif  // NERPIPE_AUGMENT_HPP
