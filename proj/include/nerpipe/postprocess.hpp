// Span repair after tagging: gazetteer and shape based reconstruction,
// longest-candidate overlap merging, separator-based list splitting, and
// restoration of fine labels from merged groups via cue words.
//
// Every stage preserves non-overlap and token bounds, and is idempotent on
// its own output.

#ifndef NERPIPE_POSTPROCESS_HPP
#define NERPIPE_POSTPROCESS_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nerpipe/core.hpp"
#include "nerpipe/features.hpp"
#include "nerpipe/schema.hpp"

namespace nerpipe {

struct GazetteerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Gazetteer {
  bool case_fold = false;
  // label -> distinct surface forms, each a token text list (normalized when
  // case_fold is set)
  std::map<std::string, std::vector<std::vector<std::string>>> forms;

  std::string norm(const std::string& s) const {
    return case_fold ? detail::ascii_lower(s) : s;
  }

  void add(const std::string& label, std::vector<std::string> form) {
    if (form.empty()) throw GazetteerError("empty gazetteer form for label '" + label + "'");
    for (auto& t : form) t = norm(t);
    auto& list = forms[label];
    if (std::find(list.begin(), list.end(), form) == list.end()) list.push_back(std::move(form));
  }
};

// File format: label TAB space-separated surface form, one per line.
inline Gazetteer load_gazetteer(const std::string& path, bool case_fold = false) {
  std::ifstream in(path);
  if (!in) throw GazetteerError("cannot open gazetteer file '" + path + "'");
  Gazetteer g;
  g.case_fold = case_fold;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw GazetteerError("gazetteer '" + path + "' line " + std::to_string(line_no) +
                           ": expected 'label<TAB>form'");
    std::vector<std::string> form;
    std::string word;
    std::istringstream ws(line.substr(tab + 1));
    while (ws >> word) form.push_back(word);
    g.add(line.substr(0, tab), std::move(form));
  }
  return g;
}

struct SplitConfig {
  std::set<std::string> separators = {",", ";", "/", "và", "hoặc", "and", "or"};
  std::size_t min_fragment = 1;  // tokens
};

struct PostConfig {
  Gazetteer gazetteer;
  SplitConfig split;
  std::set<std::string> name_like = {"PERSON", "ORGANIZATION", "BANK"};
};

namespace detail {

inline bool ascii_capitalized(const std::string& s) {
  return !s.empty() && s[0] >= 'A' && s[0] <= 'Z';
}

inline int source_rank(Source s) {
  switch (s) {
    case Source::Rule: return 0;
    case Source::Post: return 1;
    default: return 2;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reconstruction. A span contained in an occurrence of a same-label gazetteer
// form grows to cover the full form; failing that, name-like spans whose
// tokens are all capitalized absorb adjacent capitalized tokens. Growth never
// crosses into a neighboring span.

inline std::vector<EntitySpan> reconstruct_spans(std::vector<EntitySpan> spans,
                                                 const TokenSequence& tokens,
                                                 const Gazetteer& gazetteer,
                                                 const std::set<std::string>& name_like = {
                                                     "PERSON", "ORGANIZATION", "BANK"}) {
  sort_spans(spans);
  std::size_t n = tokens.size();
  std::vector<int> owner(n, -1);
  for (std::size_t i = 0; i < spans.size(); ++i)
    for (std::size_t t = spans[i].start_tok; t < spans[i].end_tok; ++t)
      owner[t] = static_cast<int>(i);
  auto free_for = [&](std::size_t t, int self) { return owner[t] < 0 || owner[t] == self; };

  std::vector<std::string> norm_tokens(n);
  for (std::size_t t = 0; t < n; ++t) norm_tokens[t] = gazetteer.norm(tokens[t].text);

  for (std::size_t i = 0; i < spans.size(); ++i) {
    EntitySpan& sp = spans[i];
    int self = static_cast<int>(i);
    std::size_t best_start = sp.start_tok, best_end = sp.end_tok;
    bool covered = false;  // span already coincides with a form occurrence

    auto it = gazetteer.forms.find(sp.label);
    if (it != gazetteer.forms.end()) {
      for (const auto& form : it->second) {
        std::size_t flen = form.size();
        if (flen < sp.end_tok - sp.start_tok) continue;
        std::size_t lo = sp.end_tok > flen ? sp.end_tok - flen : 0;
        for (std::size_t s = lo; s <= sp.start_tok && s + flen <= n; ++s) {
          if (s + flen < sp.end_tok) continue;
          bool ok = true;
          for (std::size_t k = 0; k < flen && ok; ++k)
            ok = free_for(s + k, self) && norm_tokens[s + k] == form[k];
          if (!ok) continue;
          if (s == sp.start_tok && s + flen == sp.end_tok) covered = true;
          // Longest containing occurrence wins; ties go left.
          if (flen > best_end - best_start ||
              (flen == best_end - best_start && s < best_start)) {
            best_start = s;
            best_end = s + flen;
          }
        }
      }
    }

    if (!covered && best_start == sp.start_tok && best_end == sp.end_tok &&
        name_like.count(sp.label)) {
      bool all_caps = true;
      for (std::size_t t = sp.start_tok; t < sp.end_tok && all_caps; ++t)
        all_caps = detail::ascii_capitalized(tokens[t].text);
      if (all_caps) {
        while (best_start > 0 && owner[best_start - 1] < 0 &&
               detail::ascii_capitalized(tokens[best_start - 1].text))
          --best_start;
        while (best_end < n && owner[best_end] < 0 &&
               detail::ascii_capitalized(tokens[best_end].text))
          ++best_end;
      }
    }

    if (best_start != sp.start_tok || best_end != sp.end_tok) {
      for (std::size_t t = best_start; t < best_end; ++t) owner[t] = self;
      sp.start_tok = best_start;
      sp.end_tok = best_end;
      sp.source = Source::Post;
    }
  }
  sort_spans(spans);
  return spans;
}

// ---------------------------------------------------------------------------
// Overlap merging. Two phases: within each label the longest span wins (ties
// leftmost, then source RULE > POST > MODEL); across labels source priority
// wins, then length. Each phase keeps a maximal non-overlapping subset in its
// priority order.

inline std::vector<EntitySpan> merge_overlaps(std::vector<EntitySpan> spans) {
  auto greedy = [](std::vector<EntitySpan> cands, bool same_label_phase) {
    std::sort(cands.begin(), cands.end(), [&](const EntitySpan& a, const EntitySpan& b) {
      int ra = detail::source_rank(a.source), rb = detail::source_rank(b.source);
      if (same_label_phase) {
        if (a.length() != b.length()) return a.length() > b.length();
        if (a.start_tok != b.start_tok) return a.start_tok < b.start_tok;
        if (ra != rb) return ra < rb;
      } else {
        if (ra != rb) return ra < rb;
        if (a.length() != b.length()) return a.length() > b.length();
        if (a.start_tok != b.start_tok) return a.start_tok < b.start_tok;
      }
      return a.label < b.label;
    });
    std::vector<EntitySpan> kept;
    for (const auto& c : cands) {
      bool clash = false;
      for (const auto& k : kept)
        if (spans_overlap(k, c)) {
          clash = true;
          break;
        }
      if (!clash) kept.push_back(c);
    }
    return kept;
  };

  std::map<std::string, std::vector<EntitySpan>> by_label;
  for (auto& s : spans) by_label[s.label].push_back(s);
  std::vector<EntitySpan> survivors;
  for (auto& [label, group] : by_label) {
    auto kept = greedy(std::move(group), true);
    survivors.insert(survivors.end(), kept.begin(), kept.end());
  }
  std::vector<EntitySpan> out = greedy(std::move(survivors), false);
  sort_spans(out);
  return out;
}

// ---------------------------------------------------------------------------
// List splitting. A span containing separator tokens breaks into one span per
// fragment; separators belong to no span; fragments shorter than min_fragment
// are dropped.

inline std::vector<EntitySpan> split_lists(const std::vector<EntitySpan>& spans,
                                           const TokenSequence& tokens, const SplitConfig& cfg) {
  auto is_sep = [&](std::size_t t) {
    return cfg.separators.count(detail::ascii_lower(tokens[t].text)) != 0;
  };
  std::vector<EntitySpan> out;
  for (const auto& sp : spans) {
    bool any_sep = false;
    for (std::size_t t = sp.start_tok; t < sp.end_tok && !any_sep; ++t) any_sep = is_sep(t);
    if (!any_sep) {
      out.push_back(sp);
      continue;
    }
    std::size_t frag_start = sp.start_tok;
    for (std::size_t t = sp.start_tok; t <= sp.end_tok; ++t) {
      if (t == sp.end_tok || is_sep(t)) {
        if (t - frag_start >= cfg.min_fragment)
          out.push_back({frag_start, t, sp.label, Source::Post, sp.confidence});
        frag_start = t + 1;
      }
    }
  }
  sort_spans(out);
  return out;
}

// ---------------------------------------------------------------------------
// Fine-label restoration. Spans labeled with a group id take the member whose
// cue token lies nearest within cue_window tokens of either side; ties prefer
// the preceding side, then schema member order. No cue -> default_member.

inline std::vector<EntitySpan> restore_fine_labels(std::vector<EntitySpan> spans,
                                                   const TokenSequence& tokens,
                                                   const LabelSchema& schema) {
  for (auto& sp : spans) {
    const LabelGroup* g = schema.group(sp.label);
    if (!g) continue;
    std::string chosen = g->default_member;
    bool found = false;
    for (int d = 1; d <= g->cue_window && !found; ++d) {
      for (int side = 0; side < 2 && !found; ++side) {
        std::ptrdiff_t pos = side == 0 ? static_cast<std::ptrdiff_t>(sp.start_tok) - d
                                       : static_cast<std::ptrdiff_t>(sp.end_tok) + d - 1;
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(tokens.size())) continue;
        std::string tok = detail::ascii_lower(tokens[static_cast<std::size_t>(pos)].text);
        for (const auto& member : g->members) {
          auto it = g->cues.find(member);
          if (it == g->cues.end()) continue;
          if (std::find(it->second.begin(), it->second.end(), tok) != it->second.end()) {
            chosen = member;
            found = true;
            break;
          }
        }
      }
    }
    sp.label = chosen;
  }
  sort_spans(spans);
  return spans;
}

// ---------------------------------------------------------------------------

inline std::vector<EntitySpan> postprocess_all(std::vector<EntitySpan> spans,
                                               const TokenSequence& tokens,
                                               const LabelSchema& schema,
                                               const PostConfig& cfg) {
  spans = reconstruct_spans(std::move(spans), tokens, cfg.gazetteer, cfg.name_like);
  spans = merge_overlaps(std::move(spans));
  spans = split_lists(spans, tokens, cfg.split);
  spans = merge_overlaps(std::move(spans));
  spans = restore_fine_labels(std::move(spans), tokens, schema);
  return spans;
}

}  // namespace nerpipe

#endif  // NERPIPE_POSTPROCESS_HPP
