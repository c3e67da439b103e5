// Deterministic rule engine: citizen id numbers, order codes, a bounded
// temporal grammar, and user regex rules. All matchers are pure functions of
// token text and immutable config; spans come out with source RULE.

#ifndef NERPIPE_RULES_HPP
#define NERPIPE_RULES_HPP

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nerpipe/core.hpp"
#include "nerpipe/schema.hpp"
#include "nerpipe/tokenize.hpp"

namespace nerpipe {

struct RuleConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Calendar dates. Only what the matchers need; no timezone, no arithmetic.

struct Date {
  int y = 0, m = 0, d = 0;
  bool operator==(const Date&) const = default;
};

inline bool is_leap_year(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int m, int y) {
  static constexpr int base[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m < 1 || m > 12) return 0;
  if (m == 2 && is_leap_year(y)) return 29;
  return base[m - 1];
}

inline bool is_valid_date(int d, int m, int y) {
  return y >= 1 && m >= 1 && m <= 12 && d >= 1 && d <= days_in_month(m, y);
}

// "YYYY-MM-DD", strict.
inline Date parse_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw RuleConfigError("bad date '" + s + "', expected YYYY-MM-DD");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != 4 && i != 7 && !detail::ascii_digit(s[i]))
      throw RuleConfigError("bad date '" + s + "', expected YYYY-MM-DD");
  Date out{std::stoi(s.substr(0, 4)), std::stoi(s.substr(5, 2)), std::stoi(s.substr(8, 2))};
  if (!is_valid_date(out.d, out.m, out.y))
    throw RuleConfigError("'" + s + "' is not a real calendar date");
  return out;
}

namespace detail {

// Parses an all-digit token of bounded length; -1 when it is not one.
inline int parse_number(std::string_view s, std::size_t max_digits = 9) {
  if (s.empty() || s.size() > max_digits || !all_digits(s)) return -1;
  int v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Citizen identification numbers. 12 digits: 3-digit province code, one
// century/sex digit, 2-digit birth year, 6-digit serial.

struct CinConfig {
  std::set<std::string> province_codes;
  Date reference_date;
  int min_age = 0;
  int max_age = 120;
};

inline bool validate_cin(std::string_view digits, const CinConfig& cfg) {
  if (digits.size() != 12 || !detail::all_digits(digits)) return false;
  if (!cfg.province_codes.count(std::string(digits.substr(0, 3)))) return false;
  int d4 = digits[3] - '0';
  if (d4 > 3) return false;
  int yy = detail::parse_number(digits.substr(4, 2));
  if (d4 >= 2 && yy >= 20) return false;
  int birth_year = (d4 <= 1 ? 1900 : 2000) + yy;
  int age = cfg.reference_date.y - birth_year;
  return age >= cfg.min_age && age <= cfg.max_age;
}

// ---------------------------------------------------------------------------
// Order codes: shop segment + routing segment + numeric tail. Tail rules are
// fixed: 9 digits must not start with 0, 10 digits must start with 0 or 1,
// any other length is invalid.

// Character class with a length range, written like "[A-Z0-9]{3}" or
// "[a-z]{2,4}".
struct SegmentPattern {
  std::array<bool, 256> allowed{};
  int min_len = 0;
  int max_len = 0;
  std::string source;

  static SegmentPattern parse(const std::string& text) {
    SegmentPattern p;
    p.source = text;
    std::size_t i = 0;
    auto fail = [&text]() -> SegmentPattern& {
      throw RuleConfigError("bad segment pattern '" + text + "', expected like \"[A-Z]{3}\"");
    };
    if (i >= text.size() || text[i] != '[') fail();
    ++i;
    bool any = false;
    while (i < text.size() && text[i] != ']') {
      unsigned char lo = static_cast<unsigned char>(text[i]);
      unsigned char hi = lo;
      if (i + 2 < text.size() && text[i + 1] == '-' && text[i + 2] != ']') {
        hi = static_cast<unsigned char>(text[i + 2]);
        i += 3;
      } else {
        ++i;
      }
      if (hi < lo) fail();
      for (unsigned c = lo; c <= hi; ++c) p.allowed[c] = true;
      any = true;
    }
    if (!any || i >= text.size()) fail();
    ++i;  // ']'
    if (i >= text.size() || text[i] != '{') fail();
    ++i;
    std::size_t close = text.find('}', i);
    if (close == std::string::npos || close + 1 != text.size()) fail();
    std::string body = text.substr(i, close - i);
    std::size_t comma = body.find(',');
    try {
      if (comma == std::string::npos) {
        p.min_len = p.max_len = std::stoi(body);
      } else {
        p.min_len = std::stoi(body.substr(0, comma));
        p.max_len = std::stoi(body.substr(comma + 1));
      }
    } catch (const std::exception&) {
      fail();
    }
    if (p.min_len < 1 || p.max_len < p.min_len) fail();
    return p;
  }

  bool matches(std::string_view s) const {
    if (s.size() < static_cast<std::size_t>(min_len) ||
        s.size() > static_cast<std::size_t>(max_len))
      return false;
    for (unsigned char c : s)
      if (!allowed[c]) return false;
    return true;
  }

  // Longest allowed-charset run from pos, capped at max_len; -1 if shorter
  // than min_len.
  int greedy(std::string_view s, std::size_t pos) const {
    int n = 0;
    while (pos + n < s.size() && n < max_len &&
           allowed[static_cast<unsigned char>(s[pos + n])])
      ++n;
    return n >= min_len ? n : -1;
  }
};

struct OrderCodeConfig {
  SegmentPattern shop;
  SegmentPattern routing;
  std::string delimiter;  // empty = fixed-width concatenation
};

inline bool valid_numeric_tail(std::string_view tail) {
  if (!detail::all_digits(tail) || tail.empty()) return false;
  if (tail.size() == 9) return tail[0] != '0';
  if (tail.size() == 10) return tail[0] == '0' || tail[0] == '1';
  return false;
}

inline bool validate_order_code(std::string_view s, const OrderCodeConfig& cfg) {
  if (!cfg.delimiter.empty()) {
    std::size_t a = s.find(cfg.delimiter);
    if (a == std::string_view::npos) return false;
    std::size_t b = s.find(cfg.delimiter, a + cfg.delimiter.size());
    if (b == std::string_view::npos) return false;
    if (s.find(cfg.delimiter, b + cfg.delimiter.size()) != std::string_view::npos) return false;
    return cfg.shop.matches(s.substr(0, a)) &&
           cfg.routing.matches(s.substr(a + cfg.delimiter.size(), b - a - cfg.delimiter.size())) &&
           valid_numeric_tail(s.substr(b + cfg.delimiter.size()));
  }
  // No delimiter: shop then routing matched greedily from the left, the
  // remainder is the tail.
  int shop_len = cfg.shop.greedy(s, 0);
  if (shop_len < 0) return false;
  int routing_len = cfg.routing.greedy(s, static_cast<std::size_t>(shop_len));
  if (routing_len < 0) return false;
  return valid_numeric_tail(s.substr(static_cast<std::size_t>(shop_len + routing_len)));
}

// ---------------------------------------------------------------------------
// Temporal expressions. Closed grammar over token sequences:
//   date:     dd/mm/yyyy | dd-mm-yyyy | "ngày" D "tháng" M ["năm" Y]
//   time:     hh:mm | H "giờ" [M "phút"]
//   duration: NUMBER unit, unit in {ngày, giờ, phút, tuần, tháng, năm}
//   range:    "từ" X "đến" Y, labeled by X's kind
// Keywords match exactly (lowercase forms). Longest match at each position;
// equal-length ties prefer date, then time, then duration.

enum class TemporalKind { Date, Time, Duration };

inline const char* temporal_kind_name(TemporalKind k) {
  switch (k) {
    case TemporalKind::Date: return "DATE";
    case TemporalKind::Time: return "TIME";
    default: return "DURATION";
  }
}

struct TemporalMatch {
  std::size_t start = 0, end = 0;
  TemporalKind kind = TemporalKind::Date;
};

namespace detail {

inline bool numeric_date_token(std::string_view s) {
  char sep = 0;
  for (char c : {'/', '-'})
    if (s.find(c) != std::string_view::npos) sep = c;
  if (sep == 0) return false;
  std::size_t a = s.find(sep);
  std::size_t b = s.find(sep, a + 1);
  if (b == std::string_view::npos || s.find(sep, b + 1) != std::string_view::npos) return false;
  int d = parse_number(s.substr(0, a), 2);
  int m = parse_number(s.substr(a + 1, b - a - 1), 2);
  std::string_view ys = s.substr(b + 1);
  int y = ys.size() == 4 ? parse_number(ys) : -1;
  return d > 0 && m > 0 && y > 0 && is_valid_date(d, m, y);
}

inline bool clock_token(std::string_view s) {
  std::size_t c = s.find(':');
  if (c == std::string_view::npos || s.find(':', c + 1) != std::string_view::npos) return false;
  if (s.size() - c - 1 != 2) return false;
  int h = parse_number(s.substr(0, c), 2);
  int m = parse_number(s.substr(c + 1));
  return h >= 0 && h <= 23 && m >= 0 && m <= 59;
}

// Best single (non-range) temporal match starting at i; length 0 = no match.
inline TemporalMatch best_single_temporal(const TokenSequence& toks, std::size_t i) {
  auto text = [&](std::size_t k) -> const std::string& { return toks[k].text; };
  std::size_t n = toks.size();
  TemporalMatch best{i, i, TemporalKind::Date};
  auto offer = [&](std::size_t end, TemporalKind kind) {
    if (end - i > best.end - best.start) best = {i, end, kind};
  };

  // Alternatives are offered longest-first per kind; kinds in tie-break order.
  if (text(i) == "ngày" && i + 3 < n) {
    int d = parse_number(text(i + 1), 2);
    if (d >= 1 && text(i + 2) == "tháng") {
      int m = parse_number(text(i + 3), 2);
      if (m >= 1 && m <= 12) {
        if (i + 5 < n && text(i + 4) == "năm") {
          int y = parse_number(text(i + 5), 4);
          if (y > 0 && text(i + 5).size() == 4 && is_valid_date(d, m, y)) offer(i + 6, TemporalKind::Date);
        }
        // Year unknown: validate the day against a leap year so 29/2 passes.
        if (best.end == best.start && is_valid_date(d, m, 2000)) offer(i + 4, TemporalKind::Date);
      }
    }
  }
  if (numeric_date_token(text(i))) offer(i + 1, TemporalKind::Date);

  if (i + 1 < n && text(i + 1) == "giờ") {
    int h = parse_number(text(i), 2);
    if (h >= 0 && h <= 23) {
      if (i + 3 < n && text(i + 3) == "phút") {
        int m = parse_number(text(i + 2), 2);
        if (m >= 0 && m <= 59) offer(i + 4, TemporalKind::Time);
      }
      offer(i + 2, TemporalKind::Time);
    }
  }
  if (clock_token(text(i))) offer(i + 1, TemporalKind::Time);

  if (i + 1 < n) {
    static const std::set<std::string> units = {"ngày", "giờ", "phút", "tuần", "tháng", "năm"};
    if (parse_number(text(i)) >= 0 && units.count(text(i + 1))) offer(i + 2, TemporalKind::Duration);
  }
  return best;
}

}  // namespace detail

inline std::vector<TemporalMatch> find_temporal_matches(const TokenSequence& tokens) {
  std::vector<TemporalMatch> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    TemporalMatch m{i, i, TemporalKind::Date};
    if (tokens[i].text == "từ" && i + 1 < tokens.size()) {
      TemporalMatch x = detail::best_single_temporal(tokens, i + 1);
      if (x.end > x.start && x.end < tokens.size() && tokens[x.end].text == "đến" &&
          x.end + 1 < tokens.size()) {
        TemporalMatch y = detail::best_single_temporal(tokens, x.end + 1);
        if (y.end > y.start) m = {i, y.end, x.kind};
      }
    }
    if (m.end == m.start) m = detail::best_single_temporal(tokens, i);
    if (m.end > m.start) {
      out.push_back(m);
      i = m.end;
    } else {
      ++i;
    }
  }
  return out;
}

inline std::vector<EntitySpan> find_temporal(const TokenSequence& tokens) {
  std::vector<EntitySpan> out;
  for (const auto& m : find_temporal_matches(tokens))
    out.push_back({m.start, m.end, temporal_kind_name(m.kind), Source::Rule, 1.0});
  return out;
}

// ---------------------------------------------------------------------------
// Rule sets.

enum class RuleKind { Cin, OrderCode, Temporal, Regex };

struct Rule {
  std::string id;
  RuleKind kind = RuleKind::Regex;
  std::string label;                                // CIN / ORDER_CODE / REGEX
  std::map<std::string, std::string> kind_labels;   // TEMPORAL: grammar kind -> label
  int priority = 0;                                 // lower fires first on ties

  CinConfig cin;
  OrderCodeConfig order;
  std::string pattern_text;
  std::regex pattern;
  std::function<bool(const std::string&)> validator;  // optional, regex rules only
};

struct RuleSet {
  std::vector<Rule> rules;  // already in priority order
};

inline std::vector<std::string> validate_rules(const RuleSet& rs, const LabelSchema& schema) {
  std::vector<std::string> errs;
  std::set<std::string> ids;
  auto check_label = [&](const Rule& r, const std::string& label) {
    if (!schema.is_rule_bound(label))
      errs.push_back("rule '" + r.id + "' emits label '" + label +
                     "' which is not rule-bound in the schema");
  };
  for (const auto& r : rs.rules) {
    if (r.id.empty()) errs.push_back("rule with empty id");
    if (!ids.insert(r.id).second) errs.push_back("duplicate rule id '" + r.id + "'");
    if (r.kind == RuleKind::Temporal) {
      if (r.kind_labels.empty())
        errs.push_back("temporal rule '" + r.id + "' maps no grammar kinds to labels");
      for (const auto& [kind, label] : r.kind_labels) {
        if (kind != "DATE" && kind != "TIME" && kind != "DURATION")
          errs.push_back("rule '" + r.id + "': unknown temporal kind '" + kind + "'");
        check_label(r, label);
      }
    } else {
      if (r.label.empty())
        errs.push_back("rule '" + r.id + "' has no emitted label");
      else
        check_label(r, r.label);
    }
    if (r.kind == RuleKind::Cin && r.cin.province_codes.empty())
      errs.push_back("rule '" + r.id + "' has an empty province code set");
  }
  return errs;
}

// Longest match wins; equal length falls back to rule order, then position.
// Exact duplicates from different rules collapse to one span.
inline std::vector<EntitySpan> apply_rules(const TokenSequence& tokens, const RuleSet& rs) {
  struct Candidate {
    EntitySpan span;
    std::size_t rule_idx;
  };
  std::vector<Candidate> cands;

  for (std::size_t ri = 0; ri < rs.rules.size(); ++ri) {
    const Rule& r = rs.rules[ri];
    switch (r.kind) {
      case RuleKind::Cin:
        for (std::size_t i = 0; i < tokens.size(); ++i)
          if (validate_cin(tokens[i].text, r.cin))
            cands.push_back({{i, i + 1, r.label, Source::Rule, 1.0}, ri});
        break;
      case RuleKind::OrderCode:
        for (std::size_t i = 0; i < tokens.size(); ++i)
          if (validate_order_code(tokens[i].text, r.order))
            cands.push_back({{i, i + 1, r.label, Source::Rule, 1.0}, ri});
        break;
      case RuleKind::Regex:
        for (std::size_t i = 0; i < tokens.size(); ++i)
          if (std::regex_match(tokens[i].text, r.pattern) &&
              (!r.validator || r.validator(tokens[i].text)))
            cands.push_back({{i, i + 1, r.label, Source::Rule, 1.0}, ri});
        break;
      case RuleKind::Temporal:
        for (const auto& m : find_temporal_matches(tokens)) {
          auto it = r.kind_labels.find(temporal_kind_name(m.kind));
          if (it != r.kind_labels.end())
            cands.push_back({{m.start, m.end, it->second, Source::Rule, 1.0}, ri});
        }
        break;
    }
  }

  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.span.length() != b.span.length()) return a.span.length() > b.span.length();
    if (a.rule_idx != b.rule_idx) return a.rule_idx < b.rule_idx;
    if (a.span.start_tok != b.span.start_tok) return a.span.start_tok < b.span.start_tok;
    return a.span.label < b.span.label;
  });

  std::vector<EntitySpan> kept;
  for (const auto& c : cands) {
    bool duplicate_or_overlap = false;
    for (const auto& k : kept) {
      if (k.start_tok == c.span.start_tok && k.end_tok == c.span.end_tok &&
          k.label == c.span.label) {
        duplicate_or_overlap = true;
        break;
      }
      if (spans_overlap(k, c.span)) {
        duplicate_or_overlap = true;
        break;
      }
    }
    if (!duplicate_or_overlap) kept.push_back(c.span);
  }
  sort_spans(kept);
  return kept;
}

// ---------------------------------------------------------------------------
// Config loading. Rules file is JSON:
//   {"rules": [
//     {"id":"cin","kind":"CIN","label":"CIN","provinces_file":"provinces.txt",
//      "reference_date":"2025-01-01","age_range":[0,120]},
//     {"id":"orders","kind":"ORDER_CODE","label":"ORDER_CODE",
//      "shop":"[A-Z]{3}","routing":"[0-9]{2}","delimiter":""},
//     {"id":"temporal","kind":"TEMPORAL",
//      "labels":{"DATE":"DATE","TIME":"TIME","DURATION":"DURATION"}},
//     {"id":"phone","kind":"REGEX","pattern":"0[0-9]{9}","label":"PHONE"}
//   ]}
// provinces_file is one 3-digit code per line, resolved against the rules
// file's directory. Optional "priority" overrides list order (stable).

inline std::set<std::string> load_province_codes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuleConfigError("cannot open province code file '" + path + "'");
  std::set<std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.size() != 3 || !detail::all_digits(line))
      throw RuleConfigError("province code file '" + path + "' line " +
                            std::to_string(line_no) + ": '" + line +
                            "' is not a 3-digit code");
    out.insert(line);
  }
  return out;
}

inline RuleSet parse_rules(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object() || !j.contains("rules") || !j["rules"].is_array())
    throw RuleConfigError("rules file must be a JSON object with a 'rules' array");
  RuleSet rs;
  for (const auto& e : j["rules"]) {
    Rule r;
    r.id = e.value("id", "");
    r.priority = e.value("priority", static_cast<int>(rs.rules.size()));
    std::string kind = e.value("kind", "");
    if (kind == "CIN") {
      r.kind = RuleKind::Cin;
      r.label = e.value("label", "");
      std::string pf = e.value("provinces_file", "");
      if (pf.empty()) throw RuleConfigError("rule '" + r.id + "': missing provinces_file");
      r.cin.province_codes = load_province_codes((base_dir / pf).string());
      r.cin.reference_date = parse_iso_date(e.value("reference_date", ""));
      auto range = e.value("age_range", nlohmann::json::array({0, 120}));
      if (!range.is_array() || range.size() != 2)
        throw RuleConfigError("rule '" + r.id + "': age_range must be [min, max]");
      r.cin.min_age = range[0].get<int>();
      r.cin.max_age = range[1].get<int>();
      if (r.cin.min_age < 0 || r.cin.min_age >= r.cin.max_age)
        throw RuleConfigError("rule '" + r.id + "': need 0 <= min_age < max_age");
    } else if (kind == "ORDER_CODE") {
      r.kind = RuleKind::OrderCode;
      r.label = e.value("label", "");
      r.order.shop = SegmentPattern::parse(e.value("shop", ""));
      r.order.routing = SegmentPattern::parse(e.value("routing", ""));
      r.order.delimiter = e.value("delimiter", "");
    } else if (kind == "TEMPORAL") {
      r.kind = RuleKind::Temporal;
      const nlohmann::json kind_labels = e.value("labels", nlohmann::json::object());
      for (const auto& [k, v] : kind_labels.items()) r.kind_labels[k] = v.get<std::string>();
    } else if (kind == "REGEX") {
      r.kind = RuleKind::Regex;
      r.label = e.value("label", "");
      r.pattern_text = e.value("pattern", "");
      try {
        r.pattern = std::regex(r.pattern_text);
      } catch (const std::regex_error& ex) {
        throw RuleConfigError("rule '" + r.id + "': bad pattern '" + r.pattern_text +
                              "': " + ex.what());
      }
    } else {
      throw RuleConfigError("rule '" + r.id + "': unknown kind '" + kind + "'");
    }
    rs.rules.push_back(std::move(r));
  }
  std::stable_sort(rs.rules.begin(), rs.rules.end(),
                   [](const Rule& a, const Rule& b) { return a.priority < b.priority; });
  return rs;
}

inline RuleSet load_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuleConfigError("cannot open rules file '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw RuleConfigError("rules file '" + path + "' is not valid JSON");
  return parse_rules(j, std::filesystem::path(path).parent_path());
}

}  // namespace nerpipe

#endif  // NERPIPE_RULES_HPP
