// Log-linear sequence tagger over the merged label set. Per-token softmax
// classifier with hashed features, categorical cross-entropy, Adam, greedy
// argmax decoding with BIO repair.
//
// Weights are column-major by feature index: w[d*K + k]. A sparse feature
// touches K contiguous doubles. Adam sweeps only columns a gradient has ever
// touched; untouched columns have m = v = 0 and cannot move, so the sweep is
// exactly the dense update.

#ifndef NERPIPE_TAGGER_HPP
#define NERPIPE_TAGGER_HPP

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nerpipe/core.hpp"
#include "nerpipe/features.hpp"
#include "nerpipe/rng.hpp"
#include "nerpipe/schema.hpp"

namespace nerpipe {

struct EmptyCorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteGradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModelIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TaggerModel {
  std::size_t dim = 0;
  std::uint64_t hasher_seed = 0;
  std::string schema_version;
  ClassIndex class_index;
  std::vector<double> weights;  // dim * K, column-major by feature

  std::size_t num_classes() const { return class_index.num_classes(); }
};

inline TaggerModel make_zero_model(std::size_t dim, std::uint64_t hasher_seed,
                                   const LabelSchema& schema) {
  TaggerModel m;
  m.dim = dim;
  m.hasher_seed = hasher_seed;
  m.schema_version = schema.version;
  m.class_index = schema.class_index();
  m.weights.assign(dim * m.num_classes(), 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// Scoring.

inline std::vector<double> score_classes(const TaggerModel& model, const FeatureVector& fv) {
  std::size_t k_n = model.num_classes();
  std::vector<double> scores(k_n, 0.0);
  for (const auto& f : fv) {
    const double* col = model.weights.data() + static_cast<std::size_t>(f.index) * k_n;
    for (std::size_t k = 0; k < k_n; ++k) scores[k] += col[k] * f.value;
  }
  return scores;
}

// Max-subtracted softmax; sums to 1 within 1e-9 and is shift-invariant.
inline std::vector<double> softmax(const std::vector<double>& scores) {
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    p[k] = std::exp(scores[k] - mx);
    z += p[k];
  }
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<double> predict_distribution(const TaggerModel& model,
                                                const FeatureVector& fv) {
  return softmax(score_classes(model, fv));
}

// ---------------------------------------------------------------------------
// Loss and gradient. Gradient is sparse by feature column.

struct TrainSample {
  FeatureVector features;
  int gold = 0;
};

struct SparseGrad {
  std::map<std::uint32_t, std::vector<double>> cols;  // column -> K partials
};

// Mean cross-entropy -log p(gold) over the batch and its gradient
// (p - onehot(gold)) outer fv, also batch-averaged. Optional per-class loss
// weights scale each sample by weight[gold].
inline std::pair<double, SparseGrad> loss_and_grad(const TaggerModel& model,
                                                   const std::vector<TrainSample>& batch,
                                                   const std::vector<double>* class_weights =
                                                       nullptr) {
  std::size_t k_n = model.num_classes();
  double loss = 0.0;
  SparseGrad grad;
  if (batch.empty()) return {loss, grad};
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<double> p;
  for (const auto& sample : batch) {
    std::vector<double> scores = score_classes(model, sample.features);
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double z = 0.0;
    p.assign(k_n, 0.0);
    for (std::size_t k = 0; k < k_n; ++k) {
      p[k] = std::exp(scores[k] - mx);
      z += p[k];
    }
    double w = class_weights ? (*class_weights)[static_cast<std::size_t>(sample.gold)] : 1.0;
    loss -= w * (scores[static_cast<std::size_t>(sample.gold)] - mx - std::log(z));
    for (const auto& f : sample.features) {
      auto& col = grad.cols[f.index];
      if (col.empty()) col.assign(k_n, 0.0);
      for (std::size_t k = 0; k < k_n; ++k) {
        double coef = p[k] / z - (static_cast<int>(k) == sample.gold ? 1.0 : 0.0);
        col[k] += w * coef * f.value * inv_b;
      }
    }
  }
  return {loss * inv_b, grad};
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  std::vector<double> m, v;  // dim * K, same layout as weights
  std::uint64_t t = 0;
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  std::vector<std::uint32_t> dirty;   // columns ever touched by a gradient
  std::vector<std::uint8_t> touched;  // per-column membership flag

  static AdamState make(std::size_t dim, std::size_t k_n, double lr_) {
    AdamState s;
    s.m.assign(dim * k_n, 0.0);
    s.v.assign(dim * k_n, 0.0);
    s.touched.assign(dim, 0);
    s.lr = lr_;
    return s;
  }
};

inline void adam_step(AdamState& state, TaggerModel& model, const SparseGrad& grad) {
  std::size_t k_n = model.num_classes();
  for (const auto& [col, g] : grad.cols) {
    for (double v : g)
      if (!std::isfinite(v)) throw NonFiniteGradientError("non-finite gradient in column " +
                                                          std::to_string(col));
    if (!state.touched[col]) {
      state.touched[col] = 1;
      state.dirty.push_back(col);
    }
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  std::vector<double> zeros(k_n, 0.0);
  for (std::uint32_t col : state.dirty) {
    auto it = grad.cols.find(col);
    const double* g = it == grad.cols.end() ? zeros.data() : it->second.data();
    double* m = state.m.data() + static_cast<std::size_t>(col) * k_n;
    double* v = state.v.data() + static_cast<std::size_t>(col) * k_n;
    double* w = model.weights.data() + static_cast<std::size_t>(col) * k_n;
    for (std::size_t k = 0; k < k_n; ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      w[k] -= state.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Decoding.

inline TagSequence tag(const TaggerModel& model, const TokenSequence& tokens) {
  TagSequence tags;
  tags.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    FeatureVector fv = extract_features(tokens, t, model.dim, model.hasher_seed);
    std::vector<double> scores = score_classes(model, fv);
    std::size_t best = 0;  // ties go to the lowest class id
    for (std::size_t k = 1; k < scores.size(); ++k)
      if (scores[k] > scores[best]) best = k;
    tags.push_back(model.class_index.tag_of(best));
  }
  repair_bio(tags);
  return tags;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double dev_fraction = 0.1;
  std::size_t dim = std::size_t(1) << 18;
  bool class_weighting = false;
  const TaggerModel* resume = nullptr;  // phase-2 start point; optimizer restarts
};

struct EpochStats {
  double loss = 0.0;
  double dev_f1 = -1.0;  // -1 when there is no dev split
  double seconds = 0.0;
};

struct TrainStats {
  std::vector<EpochStats> epochs;
};

namespace detail {

// Entity-level exact-match F1 between two non-overlapping sorted span lists.
inline void count_exact(const std::vector<EntitySpan>& gold, const std::vector<EntitySpan>& pred,
                        std::size_t& tp, std::size_t& fp, std::size_t& fn) {
  std::set<std::tuple<std::size_t, std::size_t, std::string>> gset;
  for (const auto& g : gold) gset.insert({g.start_tok, g.end_tok, g.label});
  std::size_t hit = 0;
  for (const auto& p : pred)
    if (gset.count({p.start_tok, p.end_tok, p.label})) ++hit;
  tp += hit;
  fp += pred.size() - hit;
  fn += gold.size() - hit;
}

}  // namespace detail

inline std::pair<TaggerModel, TrainStats> train(const std::vector<Record>& corpus,
                                                const LabelSchema& schema,
                                                const TrainConfig& cfg) {
  if (corpus.empty()) throw EmptyCorpusError("training corpus is empty");
  if (cfg.resume) {
    const TaggerModel& r = *cfg.resume;
    if (r.schema_version != schema.version || !(r.class_index == schema.class_index()) ||
        r.dim != cfg.dim || r.hasher_seed != cfg.seed)
      throw SchemaMismatchError("resume model does not match the active schema/config");
  }

  TaggerModel model = cfg.resume ? *cfg.resume : make_zero_model(cfg.dim, cfg.seed, schema);
  const ClassIndex& index = model.class_index;
  std::size_t k_n = model.num_classes();

  // Per-record class targets over compressed tags. Labels outside the merged
  // set (rule-bound gold the caller forgot to mask) are an error here.
  struct Prepared {
    std::vector<FeatureVector> features;
    std::vector<int> gold;
  };
  std::vector<Prepared> prepared(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Record& r = corpus[i];
    if (!r.gold)
      throw EmptyCorpusError("record '" + r.id + "' has no gold spans");
    TagSequence tags = schema.compress_tags(spans_to_bio(*r.gold, r.tokens.size()));
    prepared[i].features = extract_sequence_features(r.tokens, cfg.dim, cfg.seed);
    for (const auto& t : tags) {
      int cls = index.class_of(t);
      if (cls < 0) throw InvalidTagError("tag '" + t + "' is outside the model's class set");
      prepared[i].gold.push_back(cls);
    }
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t n_dev = static_cast<std::size_t>(cfg.dev_fraction * static_cast<double>(order.size()));
  std::vector<std::size_t> dev_idx(order.begin(), order.begin() + n_dev);
  std::vector<std::size_t> train_idx(order.begin() + n_dev, order.end());
  if (train_idx.empty()) throw EmptyCorpusError("dev split leaves no training records");

  std::vector<std::pair<std::size_t, std::size_t>> samples;  // (record, position)
  for (std::size_t ri : train_idx)
    for (std::size_t t = 0; t < prepared[ri].gold.size(); ++t) samples.push_back({ri, t});
  if (samples.empty()) throw EmptyCorpusError("no training tokens");

  std::vector<double> class_weights;
  if (cfg.class_weighting) {
    std::vector<std::size_t> counts(k_n, 0);
    for (const auto& [ri, t] : samples) counts[static_cast<std::size_t>(prepared[ri].gold[t])]++;
    class_weights.resize(k_n);
    for (std::size_t k = 0; k < k_n; ++k)
      class_weights[k] = static_cast<double>(samples.size()) /
                         (static_cast<double>(k_n) * static_cast<double>(std::max<std::size_t>(
                                                         1, counts[k])));
  }

  AdamState adam = AdamState::make(cfg.dim, k_n, cfg.lr);
  TrainStats stats;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(samples);
    double loss_sum = 0.0;
    std::size_t loss_tokens = 0;
    std::vector<TrainSample> batch;
    for (std::size_t s = 0; s < samples.size(); s += cfg.batch_size) {
      batch.clear();
      std::size_t end = std::min(samples.size(), s + cfg.batch_size);
      for (std::size_t j = s; j < end; ++j) {
        auto [ri, t] = samples[j];
        batch.push_back({prepared[ri].features[t], prepared[ri].gold[t]});
      }
      auto [loss, grad] = loss_and_grad(model, batch,
                                        cfg.class_weighting ? &class_weights : nullptr);
      adam_step(adam, model, grad);
      loss_sum += loss * static_cast<double>(batch.size());
      loss_tokens += batch.size();
    }

    EpochStats es;
    es.loss = loss_sum / static_cast<double>(loss_tokens);
    if (!dev_idx.empty()) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t ri : dev_idx) {
        TagSequence pred = tag(model, corpus[ri].tokens);
        TagSequence gold_tags =
            schema.compress_tags(spans_to_bio(*corpus[ri].gold, corpus[ri].tokens.size()));
        detail::count_exact(bio_to_spans(gold_tags), bio_to_spans(pred), tp, fp, fn);
      }
      double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
      es.dev_f1 = denom == 0.0 ? 1.0 : 2.0 * static_cast<double>(tp) / denom;
    }
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stats.epochs.push_back(es);
  }
  return {model, stats};
}

// ---------------------------------------------------------------------------
// Model file. Binary, little-endian, fixed magic; weights stored raw so two
// same-seed runs produce bit-identical files.

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 4);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 8);
}
inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ModelIoError("model file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ModelIoError("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& in) {
  std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw ModelIoError("model file truncated");
  return s;
}

inline constexpr char kModelMagic[8] = {'N', 'P', 'T', 'A', 'G', '0', '0', '1'};

}  // namespace detail

inline void save_model(const std::string& path, const TaggerModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelIoError("cannot open '" + path + "' for writing");
  out.write(detail::kModelMagic, 8);
  detail::write_u64(out, model.dim);
  detail::write_u64(out, model.hasher_seed);
  detail::write_str(out, model.schema_version);
  detail::write_u32(out, static_cast<std::uint32_t>(model.class_index.merged_labels.size()));
  for (const auto& l : model.class_index.merged_labels) detail::write_str(out, l);
  detail::write_u64(out, model.weights.size());
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(model.weights.data()),
            static_cast<std::streamsize>(model.weights.size() * 8));
  if (!out) throw ModelIoError("short write to '" + path + "'");
}

inline TaggerModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError("cannot open model file '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kModelMagic, 8) != 0)
    throw ModelIoError("'" + path + "' is not a model file (bad magic)");
  TaggerModel m;
  m.dim = detail::read_u64(in);
  m.hasher_seed = detail::read_u64(in);
  m.schema_version = detail::read_str(in);
  std::uint32_t n_labels = detail::read_u32(in);
  for (std::uint32_t i = 0; i < n_labels; ++i)
    m.class_index.merged_labels.push_back(detail::read_str(in));
  std::uint64_t n_weights = detail::read_u64(in);
  if (n_weights != m.dim * m.num_classes())
    throw ModelIoError("'" + path + "': weight count does not match dim * classes");
  m.weights.resize(n_weights);
  if (n_weights &&
      !in.read(reinterpret_cast<char*>(m.weights.data()),
               static_cast<std::streamsize>(n_weights * 8)))
    throw ModelIoError("model file truncated");
  for (double w : m.weights)
    if (!std::isfinite(w)) throw ModelIoError("'" + path + "': non-finite weight");
  return m;
}

}  // namespace nerpipe

#endif  // NERPIPE_TAGGER_HPP
