// End-to-end orchestration: rule stream and model stream run independently
// per record, conflicts resolve in the rules' favor, then the postprocess
// stages produce fine-grained spans. Also wires corpus training with
// rule-bound gold masked out.

#ifndef NERPIPE_PIPELINE_HPP
#define NERPIPE_PIPELINE_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nerpipe/adapter.hpp"
#include "nerpipe/core.hpp"
#include "nerpipe/postprocess.hpp"
#include "nerpipe/rules.hpp"
#include "nerpipe/schema.hpp"
#include "nerpipe/tagger.hpp"

namespace nerpipe {

struct PipelineConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  LabelSchema schema;
  RuleSet rules;  // may be empty
  std::optional<TaggerModel> model;
  std::string adapter_command;  // used when no model path is given
  int adapter_timeout_ms = 5000;
  PostConfig post;
  std::string conflict_policy = "rule_wins";
};

// Config file is JSON; all paths resolve against the config file's directory.
// Exactly one of "model" (file) and "adapter" (command line) must be set.
inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineConfigError("cannot open pipeline config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw PipelineConfigError("pipeline config '" + path + "' is not a JSON object");
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return (base / p).string(); };

  PipelineConfig cfg;
  std::string schema_path = j.value("schema", "");
  if (schema_path.empty()) throw PipelineConfigError("pipeline config: missing 'schema'");
  cfg.schema = load_schema(resolve(schema_path));

  if (j.contains("rules")) {
    cfg.rules = load_rules(resolve(j["rules"].get<std::string>()));
    auto errs = validate_rules(cfg.rules, cfg.schema);
    if (!errs.empty()) {
      std::string msg = "rules do not fit the schema:";
      for (const auto& e : errs) msg += "\n  - " + e;
      throw PipelineConfigError(msg);
    }
  }

  bool has_model = j.contains("model");
  bool has_adapter = j.contains("adapter");
  if (has_model == has_adapter)
    throw PipelineConfigError("pipeline config: exactly one of 'model' and 'adapter' required");
  if (has_model) {
    cfg.model = load_model(resolve(j["model"].get<std::string>()));
    if (cfg.model->schema_version != cfg.schema.version ||
        !(cfg.model->class_index == cfg.schema.class_index()))
      throw SchemaMismatchError("model was trained against a different schema (model '" +
                                cfg.model->schema_version + "', schema '" + cfg.schema.version +
                                "')");
  } else {
    cfg.adapter_command = j["adapter"].get<std::string>();
  }
  cfg.adapter_timeout_ms = j.value("adapter_timeout_ms", 5000);

  if (j.contains("gazetteer"))
    cfg.post.gazetteer =
        load_gazetteer(resolve(j["gazetteer"].get<std::string>()),
                       j.value("case_fold_gazetteer", false));
  if (j.contains("split")) {
    const auto& s = j["split"];
    if (s.contains("separators")) {
      cfg.post.split.separators.clear();
      for (const auto& sep : s["separators"]) {
        std::string v = sep.get<std::string>();
        if (v.empty()) throw PipelineConfigError("pipeline config: empty split separator");
        cfg.post.split.separators.insert(v);
      }
    }
    cfg.post.split.min_fragment = s.value("min_fragment", std::size_t(1));
  }
  if (j.contains("name_like_labels")) {
    cfg.post.name_like.clear();
    for (const auto& l : j["name_like_labels"]) cfg.post.name_like.insert(l.get<std::string>());
  }
  cfg.conflict_policy = j.value("conflict_policy", "rule_wins");
  if (cfg.conflict_policy != "rule_wins")
    throw PipelineConfigError("unknown conflict policy '" + cfg.conflict_policy +
                              "' (only rule_wins is built in)");
  return cfg;
}

// Rule spans always survive; model spans overlapping any rule span drop out.
inline std::vector<EntitySpan> resolve_conflicts(const std::vector<EntitySpan>& rule_spans,
                                                 const std::vector<EntitySpan>& model_spans) {
  std::vector<EntitySpan> out = rule_spans;
  for (const auto& m : model_spans) {
    bool clash = false;
    for (const auto& r : rule_spans)
      if (spans_overlap(r, m)) {
        clash = true;
        break;
      }
    if (!clash) out.push_back(m);
  }
  sort_spans(out);
  return out;
}

struct PipelineOutput {
  std::string id;
  std::vector<EntitySpan> spans;
  double rule_ms = 0.0, model_ms = 0.0, post_ms = 0.0;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.model)
      adapter_.emplace(cfg_.adapter_command, cfg_.adapter_timeout_ms);
  }

  const PipelineConfig& config() const { return cfg_; }

  std::vector<EntitySpan> rule_spans(const TokenSequence& tokens) const {
    return apply_rules(tokens, cfg_.rules);
  }

  TagSequence model_tags(const TokenSequence& tokens) {
    if (cfg_.model) return tag(*cfg_.model, tokens);
    return adapter_->tag(tokens, cfg_.schema.class_index());
  }

  std::vector<EntitySpan> merge_and_post(const std::vector<EntitySpan>& rule_side,
                                         const std::vector<EntitySpan>& model_side,
                                         const TokenSequence& tokens) const {
    return postprocess_all(resolve_conflicts(rule_side, model_side), tokens, cfg_.schema,
                           cfg_.post);
  }

  PipelineOutput infer(const Record& record) {
    using clock = std::chrono::steady_clock;
    PipelineOutput out;
    out.id = record.id;

    auto t0 = clock::now();
    std::vector<EntitySpan> rules = rule_spans(record.tokens);
    auto t1 = clock::now();
    std::vector<EntitySpan> model = bio_to_spans(model_tags(record.tokens), Source::Model);
    auto t2 = clock::now();
    out.spans = merge_and_post(rules, model, record.tokens);
    auto t3 = clock::now();

    out.rule_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    out.model_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    out.post_ms = std::chrono::duration<double, std::milli>(t3 - t2).count();
    return out;
  }

 private:
  PipelineConfig cfg_;
  std::optional<TaggerAdapter> adapter_;
};

// Training wiring: rules own their labels at inference, so rule-bound gold
// spans are masked to O before the tagger ever sees them.
inline std::vector<Record> mask_rule_bound(const std::vector<Record>& corpus,
                                           const LabelSchema& schema) {
  std::vector<Record> out = corpus;
  for (auto& r : out) {
    if (!r.gold) continue;
    std::vector<EntitySpan> kept;
    for (const auto& s : *r.gold)
      if (!schema.is_rule_bound(s.label)) kept.push_back(s);
    r.gold = std::move(kept);
  }
  return out;
}

inline std::pair<TaggerModel, TrainStats> run_training(const std::vector<Record>& corpus,
                                                       const LabelSchema& schema,
                                                       const TrainConfig& cfg) {
  return train(mask_rule_bound(corpus, schema), schema, cfg);
}

}  // namespace nerpipe

#endif  // NERPIPE_PIPELINE_HPP
