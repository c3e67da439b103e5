#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include "nerpipe/schema.hpp"
#include "support/synthetic.hpp"

using namespace nerpipe;
using nlohmann::json;

namespace {

json base_schema() {
  return json{
      {"version", "v1"},
      {"labels", {"BANK", "PRODUCT", "LOC", "BUST", "WAIST", "HIP", "CIN"}},
      {"groups",
       {{{"id", "MEASURE"},
         {"members", {"BUST", "WAIST", "HIP"}},
         {"cues", {{"BUST", {"bust"}}, {"WAIST", {"waist", "eo"}}, {"HIP", {"hip"}}}},
         {"default", "BUST"},
         {"window", 3}}}},
      {"rule_bound", {{"CIN", "r_cin"}}}};
}

std::vector<std::string> violations_of(const json& j) {
  try {
    parse_schema(j);
  } catch (const SchemaError& e) {
    return e.violations;
  }
  return {};
}

bool mentions(const std::vector<std::string>& errs, const std::string& needle) {
  for (const auto& e : errs)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("valid schema parses; merged label set and class layout") {
  LabelSchema s = parse_schema(base_schema());
  // merged = groups + standalone fine labels minus members and rule-bound
  CHECK(s.class_index().merged_labels ==
        std::vector<std::string>{"BANK", "LOC", "MEASURE", "PRODUCT"});
  CHECK(s.class_index().num_classes() == 9);

  // O = 0, B of i-th sorted merged = 1+2i, I = 2+2i
  CHECK(s.class_index().class_of("O") == 0);
  CHECK(s.class_index().class_of("B-BANK") == 1);
  CHECK(s.class_index().class_of("I-BANK") == 2);
  CHECK(s.class_index().class_of("B-LOC") == 3);
  CHECK(s.class_index().class_of("B-MEASURE") == 5);
  CHECK(s.class_index().class_of("I-PRODUCT") == 8);
  CHECK(s.class_index().class_of("B-CIN") == -1);
  CHECK(s.class_index().class_of("B-NOPE") == -1);
  for (std::size_t c = 0; c < 9; ++c)
    CHECK(s.class_index().class_of(s.class_index().tag_of(c)) == static_cast<int>(c));
}

TEST_CASE("compress maps members to group, keeps standalone, rejects unknown") {
  LabelSchema s = parse_schema(base_schema());
  CHECK(s.compress("BUST") == "MEASURE");
  CHECK(s.compress("WAIST") == "MEASURE");
  CHECK(s.compress("BANK") == "BANK");
  CHECK(s.compress("CIN") == "CIN");
  CHECK(s.compress("MEASURE") == "MEASURE");
  CHECK_THROWS_AS(s.compress("NOPE"), UnknownLabelError);

  TagSequence tags = {"O", "B-BUST", "I-BUST", "B-BANK", "O"};
  CHECK(s.compress_tags(tags) == TagSequence{"O", "B-MEASURE", "I-MEASURE", "B-BANK", "O"});
}

TEST_CASE("schema violations are all reported at once") {
  json j = base_schema();
  j["labels"].push_back("BANK");                       // duplicate label
  j["groups"][0]["members"] = json::array({"BUST"});   // too few members
  j["groups"][0]["default"] = "WAIST";                 // default no longer a member
  j["groups"][0]["window"] = 0;                        // bad window
  auto errs = violations_of(j);
  CHECK(errs.size() >= 4);
  CHECK(mentions(errs, "duplicate"));
  CHECK(mentions(errs, "at least 2 members"));
  CHECK(mentions(errs, "not a member"));
  CHECK(mentions(errs, "window"));
}

TEST_CASE("group id may not collide with a fine label") {
  json j = base_schema();
  j["groups"][0]["id"] = "BANK";
  CHECK(mentions(violations_of(j), "collides"));
}

TEST_CASE("a label may belong to at most one group") {
  json j = base_schema();
  j["groups"].push_back({{"id", "OTHER"},
                         {"members", {"BUST", "BANK"}},
                         {"cues", json::object()},
                         {"default", "BUST"}});
  CHECK(mentions(violations_of(j), "more than one group"));
}

TEST_CASE("cues must be disjoint within a group and keyed by members") {
  json j = base_schema();
  j["groups"][0]["cues"]["WAIST"].push_back("bust");  // duplicate cue token
  CHECK(mentions(violations_of(j), "more than one member"));

  j = base_schema();
  j["groups"][0]["cues"]["BANK"] = {"x"};  // not a member of the group
  CHECK(mentions(violations_of(j), "not a member"));
}

TEST_CASE("rule-bound labels must be declared, standalone, with a rule id") {
  json j = base_schema();
  j["rule_bound"]["GHOST"] = "r1";
  CHECK(mentions(violations_of(j), "not a declared label"));

  j = base_schema();
  j["rule_bound"]["BUST"] = "r1";
  CHECK(mentions(violations_of(j), "cannot be a group member"));

  j = base_schema();
  j["rule_bound"]["CIN"] = "";
  CHECK(mentions(violations_of(j), "empty rule id"));
}

TEST_CASE("a schema where everything is rule-bound has no model classes") {
  json j = {{"version", "v1"},
            {"labels", {"CIN"}},
            {"rule_bound", {{"CIN", "r_cin"}}}};
  CHECK(mentions(violations_of(j), "no model-predicted labels"));
}

TEST_CASE("missing version or labels is a violation") {
  CHECK(mentions(violations_of(json{{"labels", {"A", "B"}}}), "version"));
  CHECK(mentions(violations_of(json{{"version", "v1"}}), "labels"));
}

TEST_CASE("load_schema propagates file and JSON errors") {
  CHECK_THROWS_AS(load_schema("/nonexistent/schema.json"), SchemaError);
}

TEST_CASE("synthetic schema is internally consistent") {
  LabelSchema s = synth::make_schema(true);
  CHECK(s.is_rule_bound("CIN"));
  CHECK(s.is_group_id("MEASURE"));
  CHECK(s.is_fine_label("BANK"));
  CHECK(s.class_index().merged_labels ==
        std::vector<std::string>{"BANK", "LOC", "MEASURE", "PRODUCT", "SALARY"});
}
