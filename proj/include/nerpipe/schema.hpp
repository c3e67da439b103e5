// Label schema: the fine label set, groups of related labels that are merged
// for the statistical tagger and restored afterwards by cue words, and the
// labels bound to deterministic rules (excluded from the tagger's classes).
//
// Schema file (JSON, UTF-8):
//   {
//     "version": "v1",
//     "labels": ["BANK", "v1", "v2", "v3", "CIN", ...],
//     "groups": [{"id": "body_measurement", "members": ["v1","v2","v3"],
//                 "cues": {"v1": ["chest","ngực"], ...},
//                 "default": "v1", "window": 3}],
//     "rule_bound": {"CIN": "cin", "DATE": "dates", ...}
//   }

#ifndef NERPIPE_SCHEMA_HPP
#define NERPIPE_SCHEMA_HPP

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nerpipe/core.hpp"

namespace nerpipe {

struct SchemaError : std::runtime_error {
  std::vector<std::string> violations;
  explicit SchemaError(std::vector<std::string> v)
      : std::runtime_error(join(v)), violations(std::move(v)) {}

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "schema invalid (" + std::to_string(v.size()) + " violation(s)):";
    for (const auto& e : v) s += "\n  - " + e;
    return s;
  }
};

struct UnknownLabelError : std::runtime_error {
  std::string label;
  explicit UnknownLabelError(const std::string& l)
      : std::runtime_error("unknown label: '" + l + "'"), label(l) {}
};

struct LabelGroup {
  std::string id;
  std::vector<std::string> members;                        // >= 2, schema order matters
  std::map<std::string, std::vector<std::string>> cues;    // member -> lowercase cue tokens
  std::string default_member;                              // used when no cue is found
  int cue_window = 3;                                      // tokens scanned on each side
};

// Stable bijection between BIO tags over the merged label set and class ids.
// Class 0 is O; merged label i (lexicographic) gets B = 1+2i, I = 2+2i.
struct ClassIndex {
  std::vector<std::string> merged_labels;  // sorted

  std::size_t num_classes() const { return 1 + 2 * merged_labels.size(); }

  int class_of(std::string_view tag) const {
    if (tag == "O") return 0;
    auto [prefix, label] = parse_tag(tag);
    auto it = std::lower_bound(merged_labels.begin(), merged_labels.end(), label);
    if (it == merged_labels.end() || *it != label) return -1;
    std::size_t i = static_cast<std::size_t>(it - merged_labels.begin());
    return static_cast<int>(1 + 2 * i + (prefix == 'I' ? 1 : 0));
  }

  std::string tag_of(std::size_t cls) const {
    if (cls == 0) return "O";
    std::size_t i = (cls - 1) / 2;
    return ((cls - 1) % 2 == 0 ? "B-" : "I-") + merged_labels.at(i);
  }

  bool operator==(const ClassIndex&) const = default;
};

class LabelSchema {
 public:
  std::string version;
  std::vector<std::string> fine_labels;
  std::vector<LabelGroup> groups;
  std::map<std::string, std::string> rule_bound;  // label -> rule id

  // Called by load_schema; collects every violation instead of stopping at the
  // first, then builds the derived indexes.
  std::vector<std::string> validate_and_index() {
    std::vector<std::string> errs;
    std::set<std::string> fine(fine_labels.begin(), fine_labels.end());
    if (fine.size() != fine_labels.size()) errs.push_back("duplicate entries in labels");

    std::map<std::string, std::string> member_group;
    std::set<std::string> group_ids;
    for (const auto& g : groups) {
      if (!group_ids.insert(g.id).second) errs.push_back("duplicate group id '" + g.id + "'");
      if (fine.count(g.id)) errs.push_back("group id '" + g.id + "' collides with a fine label");
      if (g.members.size() < 2) errs.push_back("group '" + g.id + "' needs at least 2 members");
      if (g.cue_window < 1) errs.push_back("group '" + g.id + "': window must be >= 1");
      if (std::find(g.members.begin(), g.members.end(), g.default_member) == g.members.end())
        errs.push_back("group '" + g.id + "': default '" + g.default_member +
                       "' is not a member");
      std::set<std::string> seen_cues;
      for (const auto& m : g.members) {
        if (!fine.count(m))
          errs.push_back("group '" + g.id + "': member '" + m + "' is not a declared label");
        if (member_group.count(m))
          errs.push_back("label '" + m + "' belongs to more than one group");
        else
          member_group[m] = g.id;
      }
      for (const auto& [m, lex] : g.cues) {
        if (std::find(g.members.begin(), g.members.end(), m) == g.members.end())
          errs.push_back("group '" + g.id + "': cue key '" + m + "' is not a member");
        for (const auto& cue : lex)
          if (!seen_cues.insert(cue).second)
            errs.push_back("group '" + g.id + "': cue '" + cue +
                           "' appears for more than one member");
      }
    }

    for (const auto& [label, rule] : rule_bound) {
      if (!fine.count(label))
        errs.push_back("rule-bound label '" + label + "' is not a declared label");
      if (member_group.count(label))
        errs.push_back("rule-bound label '" + label + "' cannot be a group member");
      if (group_ids.count(label))
        errs.push_back("rule-bound label '" + label + "' collides with a group id");
      if (rule.empty()) errs.push_back("rule-bound label '" + label + "' has an empty rule id");
    }

    compress_ = {};
    for (const auto& [m, gid] : member_group) compress_[m] = gid;
    index_.merged_labels.clear();
    for (const auto& g : groups) index_.merged_labels.push_back(g.id);
    for (const auto& l : fine_labels)
      if (!member_group.count(l) && !rule_bound.count(l)) index_.merged_labels.push_back(l);
    std::sort(index_.merged_labels.begin(), index_.merged_labels.end());
    if (index_.merged_labels.empty())
      errs.push_back("no model-predicted labels: every label is rule-bound");
    group_by_id_.clear();
    for (std::size_t i = 0; i < groups.size(); ++i) group_by_id_[groups[i].id] = i;
    return errs;
  }

  const ClassIndex& class_index() const { return index_; }

  bool is_fine_label(const std::string& l) const {
    return std::find(fine_labels.begin(), fine_labels.end(), l) != fine_labels.end();
  }
  bool is_group_id(const std::string& l) const { return group_by_id_.count(l) != 0; }
  bool is_rule_bound(const std::string& l) const { return rule_bound.count(l) != 0; }
  const LabelGroup* group(const std::string& id) const {
    auto it = group_by_id_.find(id);
    return it == group_by_id_.end() ? nullptr : &groups[it->second];
  }

  // Group member -> group id; any other known label (standalone fine label,
  // group id) maps to itself. Idempotent.
  std::string compress(const std::string& label) const {
    auto it = compress_.find(label);
    if (it != compress_.end()) return it->second;
    if (is_fine_label(label) || is_group_id(label)) return label;
    throw UnknownLabelError(label);
  }

  TagSequence compress_tags(const TagSequence& tags) const {
    TagSequence out;
    out.reserve(tags.size());
    for (const auto& tag : tags) {
      auto [prefix, label] = parse_tag(tag);
      if (prefix == 'O')
        out.push_back("O");
      else
        out.push_back(std::string(1, prefix) + "-" + compress(std::string(label)));
    }
    return out;
  }

 private:
  std::map<std::string, std::string> compress_;
  ClassIndex index_;
  std::map<std::string, std::size_t> group_by_id_;  // index into groups
};

inline LabelSchema parse_schema(const nlohmann::json& j) {
  LabelSchema s;
  std::vector<std::string> errs;
  if (!j.is_object()) throw SchemaError({"schema file must contain a JSON object"});
  s.version = j.value("version", "");
  if (s.version.empty()) errs.push_back("missing or empty 'version'");
  for (const auto& l : j.value("labels", nlohmann::json::array()))
    s.fine_labels.push_back(l.get<std::string>());
  if (s.fine_labels.empty()) errs.push_back("missing or empty 'labels'");
  for (const auto& g : j.value("groups", nlohmann::json::array())) {
    LabelGroup lg;
    lg.id = g.value("id", "");
    for (const auto& m : g.value("members", nlohmann::json::array()))
      lg.members.push_back(m.get<std::string>());
    const nlohmann::json cues = g.value("cues", nlohmann::json::object());
    for (const auto& [member, lex] : cues.items())
      for (const auto& cue : lex) lg.cues[member].push_back(cue.get<std::string>());
    lg.default_member = g.value("default", "");
    lg.cue_window = g.value("window", 3);
    s.groups.push_back(std::move(lg));
  }
  const nlohmann::json bound = j.value("rule_bound", nlohmann::json::object());
  for (const auto& [label, rule] : bound.items())
    s.rule_bound[label] = rule.get<std::string>();

  auto more = s.validate_and_index();
  errs.insert(errs.end(), more.begin(), more.end());
  if (!errs.empty()) throw SchemaError(errs);
  return s;
}

inline LabelSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError({"cannot open schema file '" + path + "'"});
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SchemaError({"schema file '" + path + "' is not valid JSON"});
  return parse_schema(j);
}

}  // namespace nerpipe

#endif  // NERPIPE_SCHEMA_HPP
