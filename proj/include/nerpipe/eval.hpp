// Entity-level scoring under exact boundary+type match, with per-label
// breakdown and an error taxonomy driven by greedy overlap alignment.

#ifndef NERPIPE_EVAL_HPP
#define NERPIPE_EVAL_HPP

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "nerpipe/core.hpp"

namespace nerpipe {

struct MissingGoldError : std::runtime_error {
  std::string record_id;
  MissingGoldError(const std::string& id, const std::string& what_missing)
      : std::runtime_error("record '" + id + "' has no " + what_missing + " spans"),
        record_id(id) {}
};

struct MatchCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const MatchCounts&) const = default;
};

struct EvalCounts {
  MatchCounts aggregate;
  std::map<std::string, MatchCounts> per_label;
  EvalCounts& operator+=(const EvalCounts& o) {
    aggregate += o.aggregate;
    for (const auto& [label, c] : o.per_label) per_label[label] += c;
    return *this;
  }
};

// A prediction scores iff (start, end, label) equals some gold span.
inline EvalCounts count_matches(const std::vector<EntitySpan>& gold,
                                const std::vector<EntitySpan>& pred) {
  check_spans(gold, std::numeric_limits<std::size_t>::max(), "gold");
  check_spans(pred, std::numeric_limits<std::size_t>::max(), "pred");
  std::set<std::tuple<std::size_t, std::size_t, std::string>> gset;
  EvalCounts out;
  for (const auto& g : gold) {
    gset.insert({g.start_tok, g.end_tok, g.label});
    out.per_label[g.label];
  }
  for (const auto& p : pred) {
    auto& c = out.per_label[p.label];
    if (gset.count({p.start_tok, p.end_tok, p.label}))
      ++c.tp;
    else
      ++c.fp;
  }
  for (auto& [label, c] : out.per_label) {
    std::size_t gold_n = 0;
    for (const auto& g : gold)
      if (g.label == label) ++gold_n;
    c.fn = gold_n - c.tp;
    out.aggregate += c;
  }
  return out;
}

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Zero denominators (including P+R == 0) yield 0.
inline Prf compute_prf(const MatchCounts& c) {
  Prf out;
  double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) out.precision = tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = tp / static_cast<double>(c.tp + c.fn);
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

struct Taxonomy {
  std::size_t exact = 0;
  std::size_t boundary_error = 0;   // same label, different boundaries
  std::size_t type_error = 0;       // same boundaries, different label
  std::size_t boundary_and_type = 0;
  std::size_t missing = 0;          // unaligned gold
  std::size_t spurious = 0;         // unaligned pred
  Taxonomy& operator+=(const Taxonomy& o) {
    exact += o.exact;
    boundary_error += o.boundary_error;
    type_error += o.type_error;
    boundary_and_type += o.boundary_and_type;
    missing += o.missing;
    spurious += o.spurious;
    return *this;
  }
  std::size_t errors() const {
    return boundary_error + type_error + boundary_and_type + missing + spurious;
  }
  std::size_t partial_family() const { return boundary_error + type_error + boundary_and_type; }
};

// Greedy one-to-one alignment by maximal token overlap, ties to the leftmost
// gold span, then leftmost pred.
inline Taxonomy classify_errors(const std::vector<EntitySpan>& gold,
                                const std::vector<EntitySpan>& pred) {
  struct Pair {
    std::size_t overlap, gi, pi;
  };
  std::vector<Pair> pairs;
  for (std::size_t gi = 0; gi < gold.size(); ++gi)
    for (std::size_t pi = 0; pi < pred.size(); ++pi) {
      std::size_t lo = std::max(gold[gi].start_tok, pred[pi].start_tok);
      std::size_t hi = std::min(gold[gi].end_tok, pred[pi].end_tok);
      if (hi > lo) pairs.push_back({hi - lo, gi, pi});
    }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    if (gold[a.gi].start_tok != gold[b.gi].start_tok)
      return gold[a.gi].start_tok < gold[b.gi].start_tok;
    if (pred[a.pi].start_tok != pred[b.pi].start_tok)
      return pred[a.pi].start_tok < pred[b.pi].start_tok;
    return std::tie(a.gi, a.pi) < std::tie(b.gi, b.pi);
  });

  std::vector<char> g_used(gold.size(), 0), p_used(pred.size(), 0);
  Taxonomy t;
  for (const auto& pr : pairs) {
    if (g_used[pr.gi] || p_used[pr.pi]) continue;
    g_used[pr.gi] = p_used[pr.pi] = 1;
    const EntitySpan& g = gold[pr.gi];
    const EntitySpan& p = pred[pr.pi];
    bool same_bounds = g.start_tok == p.start_tok && g.end_tok == p.end_tok;
    bool same_label = g.label == p.label;
    if (same_bounds && same_label)
      ++t.exact;
    else if (same_label)
      ++t.boundary_error;
    else if (same_bounds)
      ++t.type_error;
    else
      ++t.boundary_and_type;
  }
  for (std::size_t gi = 0; gi < gold.size(); ++gi)
    if (!g_used[gi]) ++t.missing;
  for (std::size_t pi = 0; pi < pred.size(); ++pi)
    if (!p_used[pi]) ++t.spurious;
  return t;
}

struct EvalReport {
  EvalCounts counts;
  Prf micro;
  std::map<std::string, Prf> per_label;
  Taxonomy taxonomy;
  std::size_t records = 0;
};

inline EvalReport evaluate_corpus(const std::vector<Record>& records) {
  EvalReport report;
  for (const auto& r : records) {
    if (!r.gold) throw MissingGoldError(r.id, "gold");
    if (!r.predicted) throw MissingGoldError(r.id, "predicted");
    report.counts += count_matches(*r.gold, *r.predicted);
    report.taxonomy += classify_errors(*r.gold, *r.predicted);
    ++report.records;
  }
  report.micro = compute_prf(report.counts.aggregate);
  for (const auto& [label, c] : report.counts.per_label)
    report.per_label[label] = compute_prf(c);
  return report;
}

}  // namespace nerpipe

#endif  // NERPIPE_EVAL_HPP
