// Command-line front end. One binary, seven subcommands; exit code 0 on
// success, 1 on domain errors (bad schema, bad corpus, failed threshold),
// 2 on usage errors. All diagnostics go to stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nerpipe/augment.hpp"
#include "nerpipe/conll.hpp"
#include "nerpipe/eval.hpp"
#include "nerpipe/jsonl.hpp"
#include "nerpipe/pipeline.hpp"
#include "nerpipe/server.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Corpus format is picked by extension: .jsonl is line-JSON, anything else
// is token<TAB>tag blocks.
std::vector<nerpipe::Record> read_corpus(const std::string& path) {
  std::string text = slurp(path);
  if (has_suffix(path, ".jsonl")) return nerpipe::read_jsonl(text);
  return nerpipe::read_conll(text);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

std::vector<std::size_t> parse_buckets(const std::string& csv) {
  std::vector<std::size_t> out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoul(item)));
  }
  return out;
}

int cmd_schema_check(const std::string& schema_path) {
  nerpipe::LabelSchema schema = nerpipe::load_schema(schema_path);
  std::cout << "schema v" << schema.version << " OK: " << schema.fine_labels.size()
            << " fine labels, " << schema.groups.size() << " groups, "
            << schema.class_index().merged_labels.size() << " merged labels\n";
  return 0;
}

struct TrainArgs {
  std::string corpus, schema, rules, out, resume;
  int epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t dim = std::size_t(1) << 18;
  double dev_fraction = 0.1;
  bool class_weighting = false;
};

int cmd_train(const TrainArgs& a) {
  auto corpus = read_corpus(a.corpus);
  nerpipe::LabelSchema schema = nerpipe::load_schema(a.schema);
  if (!a.rules.empty()) {
    nerpipe::RuleSet rules = nerpipe::load_rules(a.rules);
    auto errs = nerpipe::validate_rules(rules, schema);
    if (!errs.empty()) {
      std::string msg = "rule validation failed:";
      for (const auto& e : errs) msg += "\n  - " + e;
      throw std::runtime_error(msg);
    }
  }
  nerpipe::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.seed;
  cfg.dim = a.dim;
  cfg.dev_fraction = a.dev_fraction;
  cfg.class_weighting = a.class_weighting;
  nerpipe::TaggerModel warm;
  if (!a.resume.empty()) {
    warm = nerpipe::load_model(a.resume);
    cfg.resume = &warm;
  }
  auto [model, stats] = nerpipe::run_training(corpus, schema, cfg);
  for (std::size_t i = 0; i < stats.epochs.size(); ++i) {
    const auto& e = stats.epochs[i];
    std::cout << "epoch " << (i + 1) << " loss " << e.loss;
    if (e.dev_f1 >= 0) std::cout << " dev_f1 " << e.dev_f1;
    std::cout << " (" << e.seconds << "s)\n";
  }
  nerpipe::save_model(a.out, model);
  std::cout << "model written to " << a.out << "\n";
  return 0;
}

struct TagArgs {
  std::string input, config, out, format = "jsonl";
};

int cmd_tag(const TagArgs& a) {
  auto records = read_corpus(a.input);
  nerpipe::Pipeline pipeline(nerpipe::load_pipeline_config(a.config));
  for (auto& r : records) r.predicted = pipeline.infer(r).spans;
  if (a.format == "conll") {
    for (auto& r : records) r.gold.reset();  // output carries predictions only
    write_file(a.out, nerpipe::write_conll(records));
  } else {
    write_file(a.out, nerpipe::write_jsonl(records, true));
  }
  std::cout << records.size() << " records tagged -> " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string gold, pred;
  double min_f1 = -1.0;
  bool taxonomy = false;
};

int cmd_eval(const EvalArgs& a) {
  auto gold = read_corpus(a.gold);
  auto pred = read_corpus(a.pred);
  if (gold.size() != pred.size())
    throw std::runtime_error("gold has " + std::to_string(gold.size()) + " records but pred has " +
                             std::to_string(pred.size()));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].id != pred[i].id)
      throw std::runtime_error("record " + std::to_string(i) + ": id '" + gold[i].id +
                               "' vs '" + pred[i].id + "'");
    gold[i].predicted = pred[i].gold.value_or(std::vector<nerpipe::EntitySpan>{});
  }
  nerpipe::EvalReport report = nerpipe::evaluate_corpus(gold);

  std::printf("records %zu  tp %zu  fp %zu  fn %zu\n", report.records, report.counts.aggregate.tp,
              report.counts.aggregate.fp, report.counts.aggregate.fn);
  std::printf("micro  P %.4f  R %.4f  F1 %.4f\n", report.micro.precision, report.micro.recall,
              report.micro.f1);
  for (const auto& [label, prf] : report.per_label)
    std::printf("%-24s P %.4f  R %.4f  F1 %.4f\n", label.c_str(), prf.precision, prf.recall,
                prf.f1);
  if (a.taxonomy) {
    const auto& t = report.taxonomy;
    std::printf("taxonomy: exact %zu  boundary %zu  type %zu  boundary+type %zu  missing %zu  "
                "spurious %zu\n",
                t.exact, t.boundary_error, t.type_error, t.boundary_and_type, t.missing,
                t.spurious);
    if (t.errors() > 0) {
      double total = static_cast<double>(t.errors());
      std::printf("error share: partial family %.1f%%  missing %.1f%%  spurious %.1f%%\n",
                  100.0 * static_cast<double>(t.partial_family()) / total,
                  100.0 * static_cast<double>(t.missing) / total,
                  100.0 * static_cast<double>(t.spurious) / total);
    }
  }
  if (a.min_f1 >= 0 && report.micro.f1 < a.min_f1) {
    std::cerr << "F1 " << report.micro.f1 << " below required " << a.min_f1 << "\n";
    return 1;
  }
  return 0;
}

struct AugmentArgs {
  std::string corpus, lexicon, out;
  double p = 0.15;
  std::uint64_t seed = 1;
  std::size_t recombine = 1;
  std::size_t variants = 2;
};

int cmd_augment(const AugmentArgs& a) {
  auto corpus = read_corpus(a.corpus);
  nerpipe::SynonymLexicon lexicon = nerpipe::load_lexicon(a.lexicon);
  nerpipe::AugmentConfig cfg;
  cfg.replace_prob = a.p;
  cfg.seed = a.seed;
  cfg.recombine_pairs = a.recombine;
  cfg.max_variants = a.variants;
  auto variants = nerpipe::augment_corpus(corpus, lexicon, cfg);
  write_file(a.out, nerpipe::write_jsonl(variants));
  std::cout << variants.size() << " variants written to " << a.out << "\n";
  return 0;
}

struct ServeArgs {
  std::string config, policy = "bucketed", buckets = "16,32,64,128,256";
  int port = 0;
  std::size_t max_batch = 32;
  double max_wait_ms = 20.0;
  std::size_t rule_workers = 1, model_workers = 1;
};

int cmd_serve(const ServeArgs& a) {
  nerpipe::Pipeline pipeline(nerpipe::load_pipeline_config(a.config));
  nerpipe::BatchPolicy policy;
  if (a.policy == "fifo")
    policy.strategy = nerpipe::BatchStrategy::Fifo;
  else if (a.policy == "bucketed")
    policy.strategy = nerpipe::BatchStrategy::LengthBucketed;
  else
    throw std::runtime_error("unknown policy '" + a.policy + "' (fifo|bucketed)");
  policy.max_batch = a.max_batch;
  policy.max_wait_ms = a.max_wait_ms;
  policy.buckets = parse_buckets(a.buckets);

  nerpipe::BatchServer server(pipeline, policy, a.port, a.rule_workers, a.model_workers);
  server.start();
  std::cout << "listening on 127.0.0.1:" << server.port() << "\n" << std::flush;
  server.wait_for_shutdown_request();
  server.stop();
  std::cout << "drained and stopped\n";
  return 0;
}

struct LoadgenArgs {
  std::string target = "127.0.0.1:0";
  double rate = 500.0;
  std::size_t n = 100;
  std::uint64_t seed = 1;
  std::size_t len_a = 10, len_b = 100;
  int timeout_ms = 30000;
};

int cmd_loadgen(const LoadgenArgs& a) {
  auto colon = a.target.rfind(':');
  if (colon == std::string::npos) throw std::runtime_error("--target needs host:port");
  nerpipe::LoadgenConfig cfg;
  cfg.host = a.target.substr(0, colon);
  cfg.port = std::stoi(a.target.substr(colon + 1));
  cfg.rate_per_s = a.rate;
  cfg.n_requests = a.n;
  cfg.seed = a.seed;
  cfg.len_a = a.len_a;
  cfg.len_b = a.len_b;
  cfg.drain_timeout_ms = a.timeout_ms;
  nerpipe::LoadgenResult res = nerpipe::run_loadgen(cfg);
  std::printf("sent %zu  received %zu  errors %zu  duplicates %zu\n", res.sent, res.received,
              res.errors, res.duplicates);
  std::printf("latency ms: mean %.2f  p50 %.2f  max %.2f\n", res.mean_ms, res.p50_ms, res.max_ms);
  if (!res.complete()) {
    std::cerr << "accounting incomplete\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid rule + statistical named-entity pipeline"};
  app.require_subcommand(1);

  std::string schema_path;
  auto* sc = app.add_subcommand("schema-check", "Validate a label schema file");
  sc->add_option("schema", schema_path, "schema JSON file")->required();

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "Train the sequence tagger");
  tr->add_option("corpus", train_args.corpus, "training corpus (.conll or .jsonl)")->required();
  tr->add_option("--schema", train_args.schema, "label schema JSON")->required();
  tr->add_option("--rules", train_args.rules, "rule set JSON (validated against the schema)");
  tr->add_option("--out", train_args.out, "output model file")->required();
  tr->add_option("--resume", train_args.resume, "existing model to warm-start from");
  tr->add_option("--epochs", train_args.epochs, "training epochs");
  tr->add_option("--lr", train_args.lr, "learning rate");
  tr->add_option("--batch-size", train_args.batch_size, "minibatch size");
  tr->add_option("--seed", train_args.seed, "RNG seed");
  tr->add_option("--dim", train_args.dim, "hashed feature dimension");
  tr->add_option("--dev-fraction", train_args.dev_fraction, "held-out fraction");
  tr->add_flag("--class-weighting", train_args.class_weighting, "inverse-frequency class weights");

  TagArgs tag_args;
  auto* tg = app.add_subcommand("tag", "Run the full pipeline over a corpus");
  tg->add_option("input", tag_args.input, "input corpus (.conll or .jsonl)")->required();
  tg->add_option("--config", tag_args.config, "pipeline config JSON")->required();
  tg->add_option("--out", tag_args.out, "output file")->required();
  tg->add_option("--format", tag_args.format, "output format")
      ->check(CLI::IsMember({"conll", "jsonl"}));

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Entity-level evaluation of predictions against gold");
  ev->add_option("gold", eval_args.gold, "gold corpus")->required();
  ev->add_option("pred", eval_args.pred, "predicted corpus")->required();
  ev->add_option("--min-f1", eval_args.min_f1, "fail (exit 1) when micro-F1 is below this");
  ev->add_flag("--taxonomy", eval_args.taxonomy, "print the error taxonomy");

  AugmentArgs aug_args;
  auto* au = app.add_subcommand("augment", "Generate augmented corpus variants");
  au->add_option("corpus", aug_args.corpus, "input corpus with gold spans")->required();
  au->add_option("--lexicon", aug_args.lexicon, "synonym lexicon TSV")->required();
  au->add_option("--out", aug_args.out, "output .jsonl of variants")->required();
  au->add_option("--p", aug_args.p, "per-token replacement probability");
  au->add_option("--seed", aug_args.seed, "RNG seed");
  au->add_option("--recombine", aug_args.recombine, "entity recombination rounds");
  au->add_option("--variants", aug_args.variants, "synonym variants per record");

  ServeArgs serve_args;
  auto* sv = app.add_subcommand("serve", "Serve the pipeline over TCP with dynamic batching");
  sv->add_option("--config", serve_args.config, "pipeline config JSON")->required();
  sv->add_option("--policy", serve_args.policy, "batching policy (fifo|bucketed)");
  sv->add_option("--port", serve_args.port, "TCP port (0 picks an ephemeral port)");
  sv->add_option("--max-batch", serve_args.max_batch, "max requests per batch");
  sv->add_option("--max-wait-ms", serve_args.max_wait_ms, "max queueing delay before flush");
  sv->add_option("--buckets", serve_args.buckets, "length bucket bounds, comma separated");
  sv->add_option("--rule-workers", serve_args.rule_workers, "rule/post worker count");
  sv->add_option("--model-workers", serve_args.model_workers, "model worker count");

  LoadgenArgs load_args;
  auto* lg = app.add_subcommand("loadgen", "Poisson load generator with exactly-once accounting");
  lg->add_option("--target", load_args.target, "host:port")->required();
  lg->add_option("--rate", load_args.rate, "requests per second");
  lg->add_option("--n", load_args.n, "number of requests");
  lg->add_option("--seed", load_args.seed, "RNG seed");
  lg->add_option("--len-a", load_args.len_a, "short text length (tokens)");
  lg->add_option("--len-b", load_args.len_b, "long text length (tokens)");
  lg->add_option("--timeout-ms", load_args.timeout_ms, "drain timeout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sc->parsed()) return cmd_schema_check(schema_path);
    if (tr->parsed()) return cmd_train(train_args);
    if (tg->parsed()) return cmd_tag(tag_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    if (au->parsed()) return cmd_augment(aug_args);
    if (sv->parsed()) return cmd_serve(serve_args);
    if (lg->parsed()) return cmd_loadgen(load_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
