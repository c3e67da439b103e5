#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nerpipe/eval.hpp"
#include "nerpipe/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace nerpipe;
namespace fs = std::filesystem;

namespace {

TokenSequence toks(const std::vector<std::string>& texts) {
  TokenSequence out;
  join_tokens(texts, out);
  return out;
}

EntitySpan sp(std::size_t s, std::size_t e, std::string label,
              Source src = Source::Model) {
  return {s, e, std::move(label), src, 1.0};
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

fs::path fixture_dir() {
  fs::path dir = fs::temp_directory_path() / "nerpipe_pipeline_cfg";
  fs::create_directories(dir);
  write_file(dir / "schema.json", R"({
    "version": "synth-1",
    "labels": ["BANK","PRODUCT","LOC","SALARY","BUST","WAIST","HIP","CIN","ORDER","TDATE"],
    "groups": [{
      "id": "MEASURE",
      "members": ["BUST","WAIST","HIP"],
      "cues": {"BUST": ["bust","nguc"], "WAIST": ["waist","eo"], "HIP": ["hip","mong"]},
      "default": "BUST",
      "window": 3
    }],
    "rule_bound": {"CIN": "r_cin", "ORDER": "r_order", "TDATE": "r_temporal"}
  })");
  write_file(dir / "provinces.txt", "001\n038\n079\n");
  write_file(dir / "rules.json", R"({"rules":[
    {"id":"r_cin","kind":"CIN","label":"CIN","provinces_file":"provinces.txt",
     "reference_date":"2025-06-30","age_range":[16,90]},
    {"id":"r_order","kind":"ORDER_CODE","label":"ORDER","shop":"[A-Z]{3}",
     "routing":"[A-Z]{2}","delimiter":""},
    {"id":"r_temporal","kind":"TEMPORAL",
     "labels":{"DATE":"TDATE","TIME":"TDATE","DURATION":"TDATE"}}
  ]})");
  write_file(dir / "gazetteer.tsv", "BANK\tNgân hàng ACB\nBANK\tVietcombank\n");

  LabelSchema schema = load_schema((dir / "schema.json").string());
  save_model((dir / "model.bin").string(), make_zero_model(1 << 10, 1, schema));

  write_file(dir / "config.json", R"({
    "schema": "schema.json",
    "rules": "rules.json",
    "model": "model.bin",
    "gazetteer": "gazetteer.tsv",
    "split": {"separators": [",", "và", "hoặc"], "min_fragment": 1},
    "name_like_labels": ["BANK"],
    "conflict_policy": "rule_wins"
  })");
  return dir;
}

// Line-delimited JSON tagger stub. Echoes the request id with fixed tags.
std::string adapter_script(const fs::path& dir, const std::string& name,
                           const std::string& body) {
  fs::path p = dir / name;
  write_file(p, body);
  return "sh " + p.string();
}

PipelineConfig memory_config(bool with_rules, TaggerModel model) {
  PipelineConfig cfg;
  cfg.schema = synth::make_schema(true);
  if (with_rules) cfg.rules = synth::make_rules();
  cfg.model = std::move(model);
  return cfg;
}

}  // namespace

TEST_CASE("pipeline config: loads schema, rules, model and post settings") {
  fs::path dir = fixture_dir();
  PipelineConfig cfg = load_pipeline_config((dir / "config.json").string());
  CHECK(cfg.schema.version == "synth-1");
  CHECK(cfg.rules.rules.size() == 3);
  REQUIRE(cfg.model.has_value());
  CHECK(cfg.model->schema_version == "synth-1");
  CHECK(cfg.adapter_command.empty());
  CHECK(cfg.post.gazetteer.forms.at("BANK").size() == 2);
  CHECK(cfg.post.split.separators == std::set<std::string>{",", "và", "hoặc"});
  CHECK(cfg.post.name_like == std::set<std::string>{"BANK"});
  CHECK(cfg.conflict_policy == "rule_wins");
}

TEST_CASE("pipeline config: every malformed variant is rejected") {
  fs::path dir = fixture_dir();
  auto patch = [&](const std::string& name, const std::string& body) {
    write_file(dir / name, body);
    return (dir / name).string();
  };

  CHECK_THROWS_AS(load_pipeline_config((dir / "absent.json").string()), PipelineConfigError);
  CHECK_THROWS_AS(load_pipeline_config(patch("garbage.json", "not json")), PipelineConfigError);
  CHECK_THROWS_AS(load_pipeline_config(patch("arr.json", "[1,2]")), PipelineConfigError);
  CHECK_THROWS_AS(load_pipeline_config(patch("noschema.json", R"({"model":"model.bin"})")),
                  PipelineConfigError);
  CHECK_THROWS_AS(load_pipeline_config(patch(
                      "both.json",
                      R"({"schema":"schema.json","model":"model.bin","adapter":"cat"})")),
                  PipelineConfigError);
  CHECK_THROWS_AS(load_pipeline_config(patch("neither.json", R"({"schema":"schema.json"})")),
                  PipelineConfigError);
  CHECK_THROWS_AS(
      load_pipeline_config(patch(
          "policy.json",
          R"({"schema":"schema.json","model":"model.bin","conflict_policy":"model_wins"})")),
      PipelineConfigError);
  CHECK_THROWS_AS(
      load_pipeline_config(patch("sep.json",
                                 R"({"schema":"schema.json","model":"model.bin",
                                     "split":{"separators":[""]}})")),
      PipelineConfigError);

  // rule referencing a label outside the schema
  patch("badrules.json",
        R"({"rules":[{"id":"x","kind":"REGEX","pattern":"a+","label":"NOPE"}]})");
  CHECK_THROWS_AS(
      load_pipeline_config(patch(
          "cfg_badrules.json",
          R"({"schema":"schema.json","rules":"badrules.json","model":"model.bin"})")),
      PipelineConfigError);

  // model trained against a different schema version
  LabelSchema other = load_schema((dir / "schema.json").string());
  other.version = "other";
  save_model((dir / "stale.bin").string(), make_zero_model(64, 1, other));
  CHECK_THROWS_AS(
      load_pipeline_config(patch("cfg_stale.json",
                                 R"({"schema":"schema.json","model":"stale.bin"})")),
      SchemaMismatchError);
}

TEST_CASE("conflict resolution: rules always win on overlap") {
  auto rule_only = resolve_conflicts({sp(0, 1, "CIN", Source::Rule)}, {sp(0, 2, "PHONE")});
  REQUIRE(rule_only.size() == 1);
  CHECK(rule_only[0] == sp(0, 1, "CIN", Source::Rule));

  auto disjoint = resolve_conflicts({sp(0, 1, "CIN", Source::Rule)}, {sp(2, 3, "BANK")});
  CHECK(disjoint.size() == 2);

  auto model_only = resolve_conflicts({}, {sp(0, 2, "BANK")});
  REQUIRE(model_only.size() == 1);
  CHECK(model_only[0].label == "BANK");

  CHECK(resolve_conflicts({}, {}).empty());
}

TEST_CASE("conflict resolution properties on random streams") {
  Rng rng(808);
  const std::vector<std::string> labels = {"CIN", "BANK", "LOC"};
  auto gen = [&](Source src) {
    std::vector<EntitySpan> out;
    std::size_t pos = 0;
    while (pos < 10) {
      if (rng.next_bool(0.4)) {
        std::size_t end = std::min<std::size_t>(10, pos + 1 + rng.next_below(3));
        out.push_back(sp(pos, end, labels[rng.next_below(3)], src));
        pos = end + rng.next_below(2);
      } else {
        ++pos;
      }
    }
    return out;
  };
  for (int it = 0; it < 300; ++it) {
    auto rules = gen(Source::Rule);
    auto model = gen(Source::Model);
    auto merged = resolve_conflicts(rules, model);
    check_spans(merged, 10, "resolve_conflicts");
    for (const auto& r : rules)
      CHECK(std::find(merged.begin(), merged.end(), r) != merged.end());
    for (const auto& m : merged)
      if (m.source == Source::Model) {
        bool clashes = false;
        for (const auto& r : rules) clashes = clashes || spans_overlap(r, m);
        CHECK_FALSE(clashes);
      }
  }
}

TEST_CASE("rule-bound gold is masked for training, kept for records without gold") {
  LabelSchema schema = synth::make_schema(true);
  Record r;
  r.raw = join_tokens({"001085123456", "tại", "Vietcombank"}, r.tokens);
  r.id = "m0";
  r.gold = std::vector<EntitySpan>{sp(0, 1, "CIN", Source::Rule), sp(2, 3, "BANK")};
  Record blank;
  blank.id = "m1";
  blank.raw = join_tokens({"xin"}, blank.tokens);

  auto masked = mask_rule_bound({r, blank}, schema);
  REQUIRE(masked.size() == 2);
  REQUIRE(masked[0].gold.has_value());
  REQUIRE(masked[0].gold->size() == 1);
  CHECK((*masked[0].gold)[0].label == "BANK");
  CHECK_FALSE(masked[1].gold.has_value());
  // input untouched
  CHECK(r.gold->size() == 2);
}

TEST_CASE("training wiring masks rule-bound labels; direct training rejects them") {
  LabelSchema schema = synth::make_schema(true);
  auto corpus = synth::make_corpus({120, 51, true});
  bool has_rule_gold = false;
  for (const auto& r : corpus)
    for (const auto& s : *r.gold)
      if (schema.is_rule_bound(s.label)) has_rule_gold = true;
  REQUIRE(has_rule_gold);

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.dim = std::size_t(1) << 12;
  CHECK_THROWS_AS(train(corpus, schema, cfg), InvalidTagError);
  auto [model, stats] = run_training(corpus, schema, cfg);
  CHECK(stats.epochs.size() == 1);

  CHECK_THROWS_AS(run_training({}, schema, cfg), EmptyCorpusError);
  Record no_gold;
  no_gold.id = "x";
  no_gold.raw = join_tokens({"xin"}, no_gold.tokens);
  CHECK_THROWS_AS(run_training({no_gold}, schema, cfg), EmptyCorpusError);
}

TEST_CASE("rule-bound-only corpus trains to all-O; rules still extract") {
  LabelSchema schema = synth::make_schema(true);
  std::vector<Record> corpus;
  Rng rng(61);
  for (int i = 0; i < 40; ++i) {
    Record r;
    r.id = "c" + std::to_string(i);
    std::string cin = "0011" + std::to_string(40 + rng.next_below(40)) + "123456";
    r.raw = join_tokens({"giấy", "tờ", cin, "nhé"}, r.tokens);
    r.gold = std::vector<EntitySpan>{sp(2, 3, "CIN", Source::Rule)};
    corpus.push_back(r);
  }
  TrainConfig tc;
  tc.epochs = 2;
  tc.dim = std::size_t(1) << 12;
  auto [model, stats] = run_training(corpus, schema, tc);
  for (const auto& r : corpus) CHECK(tag(model, r.tokens) == TagSequence(r.tokens.size(), "O"));

  Pipeline pipe(memory_config(true, model));
  auto out = pipe.infer(corpus[0]);
  REQUIRE(out.spans.size() == 1);
  CHECK(out.spans[0].label == "CIN");
  CHECK(out.spans[0].source == Source::Rule);
  CHECK(out.spans[0].start_tok == 2);
}

TEST_CASE("inference composes the documented stages and is deterministic") {
  LabelSchema schema = synth::make_schema(true);
  auto corpus = synth::make_corpus({160, 71, true});
  TrainConfig tc;
  tc.epochs = 6;
  tc.dim = std::size_t(1) << 14;
  auto [model, stats] = run_training(corpus, schema, tc);

  Pipeline pipe(memory_config(true, model));
  for (int i = 0; i < 40; ++i) {
    const Record& r = corpus[i];
    PipelineOutput out = pipe.infer(r);
    CHECK(out.id == r.id);
    CHECK(out.rule_ms >= 0.0);
    CHECK(out.model_ms >= 0.0);
    CHECK(out.post_ms >= 0.0);
    check_spans(out.spans, r.tokens.size(), "infer");

    auto rules = pipe.rule_spans(r.tokens);
    auto model_side = bio_to_spans(pipe.model_tags(r.tokens), Source::Model);
    CHECK(out.spans == pipe.merge_and_post(rules, model_side, r.tokens));
    CHECK(pipe.infer(r).spans == out.spans);

    for (const auto& s : out.spans) {
      CHECK(schema.is_fine_label(s.label));
      if (schema.is_rule_bound(s.label)) CHECK(s.source == Source::Rule);
    }
  }
}

TEST_CASE("single rule hit with a silent model yields one RULE span") {
  LabelSchema schema = synth::make_schema(true);
  Pipeline pipe(memory_config(true, make_zero_model(1 << 10, 1, schema)));
  Record r;
  r.id = "cin";
  r.raw = join_tokens({"số", "001085123456", "nhé"}, r.tokens);
  auto out = pipe.infer(r);
  REQUIRE(out.spans.size() == 1);
  CHECK(out.spans[0] == EntitySpan{1, 2, "CIN", Source::Rule, 1.0});
}

TEST_CASE("zero rule hits degrade to the postprocessed model stream") {
  LabelSchema schema = synth::make_schema(true);
  auto corpus = synth::make_corpus({100, 81, false});
  TrainConfig tc;
  tc.epochs = 6;
  tc.dim = std::size_t(1) << 14;
  auto [model, stats] = run_training(corpus, schema, tc);

  Pipeline with_rules(memory_config(true, model));
  Pipeline no_rules(memory_config(false, model));
  for (int i = 0; i < 25; ++i) {
    const Record& r = corpus[i];
    if (!with_rules.rule_spans(r.tokens).empty()) continue;
    CHECK(with_rules.infer(r).spans == no_rules.infer(r).spans);
  }
}

TEST_CASE("hybrid recovers rule-bound entities the model alone cannot") {
  LabelSchema schema = synth::make_schema(true);
  auto corpus = synth::make_corpus({200, 91, true});
  TrainConfig tc;
  tc.epochs = 8;
  tc.dim = std::size_t(1) << 14;
  auto [model, stats] = run_training(corpus, schema, tc);

  Pipeline hybrid(memory_config(true, model));
  Pipeline model_only(memory_config(false, model));

  std::vector<Record> hybrid_records = corpus, model_records = corpus;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    hybrid_records[i].predicted = hybrid.infer(corpus[i]).spans;
    model_records[i].predicted = model_only.infer(corpus[i]).spans;
  }
  auto hybrid_report = evaluate_corpus(hybrid_records);
  auto model_report = evaluate_corpus(model_records);

  CHECK(hybrid_report.micro.f1 >= model_report.micro.f1);
  CHECK(hybrid_report.counts.per_label.at("CIN").tp > 0);
  CHECK(model_report.counts.per_label.at("CIN").tp == 0);
}

TEST_CASE("adapter-backed model stream: coordinated bank list splits") {
  fs::path dir = fixture_dir();
  PipelineConfig cfg;
  cfg.schema = synth::make_schema(true);
  cfg.adapter_command = adapter_script(dir, "banks.sh", R"(
while IFS= read -r line; do
  id=${line#*\"id\":\"}
  id=${id%%\"*}
  printf '{"id":"%s","tags":["B-BANK","I-BANK","I-BANK"]}\n' "$id"
done
)");
  cfg.adapter_timeout_ms = 2000;
  cfg.post.split.separators = {"hoặc"};
  Pipeline pipe(std::move(cfg));

  Record r;
  r.id = "t9r3";
  r.raw = join_tokens({"BIDV", "hoặc", "Vietcombank"}, r.tokens);
  auto out = pipe.infer(r);
  REQUIRE(out.spans.size() == 2);
  CHECK(out.spans[0] == EntitySpan{0, 1, "BANK", Source::Post, 1.0});
  CHECK(out.spans[1] == EntitySpan{2, 3, "BANK", Source::Post, 1.0});

  // the stub answers every request, so repeated calls keep working
  CHECK(pipe.infer(r).spans == out.spans);
}

TEST_CASE("adapter protocol violations surface as typed errors") {
  fs::path dir = fixture_dir();
  LabelSchema schema = synth::make_schema(true);
  TokenSequence ts = toks({"a", "b", "c"});
  auto run = [&](const std::string& name, const std::string& body) {
    TaggerAdapter adapter(adapter_script(dir, name, body), 2000);
    return adapter.tag(ts, schema.class_index());
  };

  const std::string reply_prefix = R"(
while IFS= read -r line; do
  id=${line#*\"id\":\"}
  id=${id%%\"*}
)";
  CHECK_THROWS_AS(run("short.sh", reply_prefix +
                      "  printf '{\"id\":\"%s\",\"tags\":[\"O\",\"O\"]}\\n' \"$id\"\ndone\n"),
                  AdapterProtocolError);
  CHECK_THROWS_AS(run("badtag.sh", reply_prefix +
                      "  printf '{\"id\":\"%s\",\"tags\":[\"Q\",\"O\",\"O\"]}\\n' \"$id\"\ndone\n"),
                  AdapterProtocolError);
  CHECK_THROWS_AS(run("unknown.sh", reply_prefix +
                      "  printf '{\"id\":\"%s\",\"tags\":[\"B-NOPE\",\"O\",\"O\"]}\\n' \"$id\"\ndone\n"),
                  AdapterProtocolError);
  CHECK_THROWS_AS(run("garbage.sh",
                      "while IFS= read -r line; do printf 'not json\\n'; done\n"),
                  AdapterProtocolError);
  CHECK_THROWS_AS(run("wrongid.sh",
                      "while IFS= read -r line; do"
                      " printf '{\"id\":\"999\",\"tags\":[\"O\",\"O\",\"O\"]}\\n'; done\n"),
                  AdapterProtocolError);
  CHECK_THROWS_AS(run("closed.sh", "exit 0\n"), AdapterProtocolError);
}

TEST_CASE("adapter that never answers trips the timeout") {
  fs::path dir = fixture_dir();
  LabelSchema schema = synth::make_schema(true);
  TaggerAdapter adapter(
      adapter_script(dir, "sleeper.sh", "while IFS= read -r line; do sleep 5; done\n"), 200);
  TokenSequence ts = toks({"a"});
  CHECK_THROWS_AS(adapter.tag(ts, schema.class_index()), AdapterTimeout);
}

TEST_CASE("phase-2 resume training does not regress dev f1") {
  LabelSchema schema = synth::make_schema(true);
  auto corpus = synth::make_corpus({200, 101, true});
  TrainConfig tc;
  tc.epochs = 4;
  tc.dim = std::size_t(1) << 14;
  auto [phase1, s1] = run_training(corpus, schema, tc);

  TrainConfig tc2 = tc;
  tc2.resume = &phase1;
  auto [phase2, s2] = run_training(corpus, schema, tc2);
  REQUIRE_FALSE(s1.epochs.empty());
  REQUIRE_FALSE(s2.epochs.empty());
  CHECK(s2.epochs.back().dev_f1 >= s1.epochs.back().dev_f1);
}
