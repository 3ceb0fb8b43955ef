#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/log.hpp"
#include "star/mining.hpp"
#include "star/nn.hpp"
#include "star/path_scorer.hpp"
#include "star/scorer.hpp"

namespace star {

struct TrainingConfig {
  std::size_t k_negatives = 15;  // |N_K|
  double w_plus = 3.0;
  double w_minus = 0.5;
  double learning_rate = 3e-5;
  std::size_t epochs = 50;
  double train_split = 0.9;
  std::uint64_t seed = 42;
  std::size_t batch_size = 16;
  // false gives the unweighted ablation (every weight 1, i.e. the plain contrastive loss)
  bool use_weights = true;
  // Scores enter the loss as exp(s / temperature); 1 is the plain formula.
  double temperature = 1.0;

  void validate() const {
    if (!(temperature > 0)) throw ValidationError("temperature must be positive");
    if (!(w_minus <= w_plus)) throw ValidationError("w- must not exceed w+");
    if (!(w_minus > 0)) throw ValidationError("w- must be positive");
    if (!(train_split > 0 && train_split < 1)) throw ValidationError("train split must lie in (0, 1)");
    if (k_negatives < 1) throw ValidationError("k_negatives must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(learning_rate > 0)) throw ValidationError("learning rate must be positive");
  }
};

inline io::json to_json(const TrainingConfig& c) {
  return {{"k_negatives", c.k_negatives}, {"w_plus", c.w_plus},     {"w_minus", c.w_minus},
          {"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"train_split", c.train_split},
          {"seed", c.seed}, {"temperature", c.temperature}, {"batch_size", c.batch_size}, {"use_weights", c.use_weights}};
}

inline TrainingConfig training_config_from_json(const io::json& j) {
  TrainingConfig c;
  c.k_negatives = j.value("k_negatives", c.k_negatives);
  c.w_plus = j.value("w_plus", c.w_plus);
  c.w_minus = j.value("w_minus", c.w_minus);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.train_split = j.value("train_split", c.train_split);
  c.seed = j.value("seed", c.seed);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.use_weights = j.value("use_weights", c.use_weights);
  c.temperature = j.value("temperature", c.temperature);
  return c;
}

// Relation-signature frequencies of the scored paths, per class.
struct OccurrenceCounts {
  std::map<std::string, std::size_t> positive;
  std::map<std::string, std::size_t> negative;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

inline OccurrenceCounts count_occurrences(std::span<const CorpusRecord> corpus) {
  OccurrenceCounts c;
  for (const auto& r : corpus) {
    ++c.positive[relation_signature(r.target)];
    ++c.n_pos;
    for (const auto& n : r.negatives()) {
      ++c.negative[relation_signature(n)];
      ++c.n_neg;
    }
  }
  return c;
}

inline io::json to_json(const OccurrenceCounts& c) {
  return {{"positive", c.positive}, {"negative", c.negative}, {"N_pos", c.n_pos}, {"N_neg", c.n_neg}};
}

inline OccurrenceCounts occurrence_counts_from_json(const io::json& j) {
  OccurrenceCounts c;
  c.positive = j.at("positive").get<std::map<std::string, std::size_t>>();
  c.negative = j.at("negative").get<std::map<std::string, std::size_t>>();
  c.n_pos = j.at("N_pos").get<std::size_t>();
  c.n_neg = j.at("N_neg").get<std::size_t>();
  return c;
}

struct PathWeights {
  std::map<std::string, double> positive;
  std::map<std::string, double> negative;

  double positive_weight(const std::string& signature) const { return lookup(positive, signature); }
  double negative_weight(const std::string& signature) const { return lookup(negative, signature); }

 private:
  static double lookup(const std::map<std::string, double>& m, const std::string& key) {
    auto it = m.find(key);
    return it == m.end() ? 1.0 : it->second;
  }
};

namespace detail {

// raw_i = N_class / n_i, then min-max onto [w-, w+]; a class without spread maps to 1.
inline std::map<std::string, double> class_weights(const std::map<std::string, std::size_t>& counts,
                                                   std::size_t class_total, double w_minus, double w_plus) {
  std::map<std::string, double> out;
  if (counts.empty() || class_total == 0) return out;
  std::map<std::string, double> raw;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [sig, n] : counts) {
    const double w = static_cast<double>(class_total) / static_cast<double>(n);
    raw[sig] = w;
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  for (const auto& [sig, w] : raw) out[sig] = hi == lo ? 1.0 : w_minus + (w - lo) / (hi - lo) * (w_plus - w_minus);
  return out;
}

}  // namespace detail

inline PathWeights compute_weights(const OccurrenceCounts& counts, const TrainingConfig& cfg) {
  if (!(cfg.w_minus <= cfg.w_plus)) throw ValidationError("w- must not exceed w+");
  return {detail::class_weights(counts.positive, counts.n_pos, cfg.w_minus, cfg.w_plus),
          detail::class_weights(counts.negative, counts.n_neg, cfg.w_minus, cfg.w_plus)};
}

struct WeightedScore {
  double score;
  double weight;
};

struct LossWithGrad {
  double loss = 0;
  double d_pos = 0;
  std::vector<double> d_neg;
};

// -log(w+ e^{s+} / (w+ e^{s+} + sum_j w_j e^{s_j})), evaluated in the log domain.
inline LossWithGrad loss_star_with_grad(double s_pos, double w_pos, std::span<const WeightedScore> negatives) {
  if (!(w_pos > 0)) throw ValidationError("weights must be positive");
  for (const auto& n : negatives)
    if (!(n.weight > 0)) throw ValidationError("weights must be positive");
  LossWithGrad out;
  out.d_neg.resize(negatives.size());
  if (negatives.empty()) return out;
  const double a_pos = std::log(w_pos) + s_pos;
  double m = a_pos;
  std::vector<double> a(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    a[j] = std::log(negatives[j].weight) + negatives[j].score;
    m = std::max(m, a[j]);
  }
  double z = std::exp(a_pos - m);
  for (double v : a) z += std::exp(v - m);
  const double lse = m + std::log(z);
  out.loss = lse - a_pos;
  out.d_pos = std::exp(a_pos - lse) - 1.0;
  for (std::size_t j = 0; j < a.size(); ++j) out.d_neg[j] = std::exp(a[j] - lse);
  return out;
}

inline double loss_star(double s_pos, double w_pos, std::span<const WeightedScore> negatives) {
  return loss_star_with_grad(s_pos, w_pos, negatives).loss;
}

inline double loss_shc(double s_pos, std::span<const double> negatives) {
  if (negatives.empty()) return 0.0;
  double m = s_pos;
  for (double s : negatives) m = std::max(m, s);
  double z = std::exp(s_pos - m);
  for (double s : negatives) z += std::exp(s - m);
  return m + std::log(z) - s_pos;
}

// The k negatives the current model scores highest; ties by path text.
inline std::vector<ScoredText> select_topk_negatives(const PathScorer& model, std::string_view query,
                                                     const CorpusRecord& instance, std::size_t k) {
  auto negatives = instance.negatives();
  auto scores = model.score_batch(query, negatives);
  std::vector<ScoredText> ranked;
  for (std::size_t i = 0; i < negatives.size(); ++i) ranked.push_back({negatives[i], scores[i]});
  std::sort(ranked.begin(), ranked.end(), [](const ScoredText& a, const ScoredText& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.text < b.text;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

// One contrastive term: a target path against its selected negatives, with weights attached.
struct ContrastiveExample {
  std::string question;
  std::string target;
  double target_weight = 1.0;
  std::vector<std::string> negatives;
  std::vector<double> negative_weights;
  double temperature = 1.0;
};

inline ContrastiveExample make_example(const CorpusRecord& r, const std::vector<ScoredText>& selected,
                                       const PathWeights* weights, double temperature = 1.0) {
  ContrastiveExample ex;
  ex.temperature = temperature;
  ex.question = r.question;
  ex.target = r.target;
  ex.target_weight = weights ? weights->positive_weight(relation_signature(r.target)) : 1.0;
  for (const auto& n : selected) {
    ex.negatives.push_back(n.text);
    ex.negative_weights.push_back(weights ? weights->negative_weight(relation_signature(n.text)) : 1.0);
  }
  return ex;
}

// L_STAR for one example; when grad is given, adds scale * dL/dparams into it.
inline double example_loss(const CrossAttentiveScorer& scorer, const ContrastiveExample& ex, nn::Parameters* grad,
                           double scale = 1.0) {
  const std::size_t n = ex.negatives.size();
  std::vector<CrossAttentiveScorer::Cache> caches(grad ? n + 1 : 0);
  auto run = [&](const std::string& path, std::size_t slot) {
    return scorer.forward(scorer.sequence(ex.question, path), grad ? &caches[slot] : nullptr);
  };
  const double inv_t = 1.0 / ex.temperature;
  const double s_pos = run(ex.target, 0) * inv_t;
  std::vector<WeightedScore> negs(n);
  for (std::size_t j = 0; j < n; ++j) negs[j] = {run(ex.negatives[j], j + 1) * inv_t, ex.negative_weights[j]};
  LossWithGrad lg = loss_star_with_grad(s_pos, ex.target_weight, negs);
  if (grad && n > 0) {
    scorer.backward(caches[0], scale * inv_t * lg.d_pos, *grad);
    for (std::size_t j = 0; j < n; ++j) scorer.backward(caches[j + 1], scale * inv_t * lg.d_neg[j], *grad);
  }
  return lg.loss;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double wall_seconds = 0;
};

inline io::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"wall_seconds", e.wall_seconds}};
}

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  std::size_t train_instances = 0;
  std::size_t val_instances = 0;
};

// Splits by qid so no query contributes to both sides.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_query(
    std::span<const CorpusRecord> corpus, double train_split, std::uint64_t seed) {
  std::vector<std::string> qids;
  for (const auto& r : corpus) qids.push_back(r.qid);
  std::sort(qids.begin(), qids.end());
  qids.erase(std::unique(qids.begin(), qids.end()), qids.end());
  std::mt19937_64 rng(splitmix64(seed ^ 0x5eedull));
  std::shuffle(qids.begin(), qids.end(), rng);
  auto n_train = static_cast<std::size_t>(std::ceil(train_split * static_cast<double>(qids.size())));
  n_train = std::min(n_train, qids.size());
  std::set<std::string> train_q(qids.begin(), qids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < corpus.size(); ++i) (train_q.count(corpus[i].qid) ? train_idx : val_idx).push_back(i);
  return {train_idx, val_idx};
}

// Mean L_STAR with N_K selected afresh from the current model.
inline double mean_loss(const CrossAttentiveScorer& scorer, std::span<const CorpusRecord> corpus,
                        std::span<const std::size_t> indices, const PathWeights* weights, std::size_t k,
                        double temperature = 1.0) {
  if (indices.empty()) return 0.0;
  double total = 0;
  for (std::size_t i : indices) {
    const auto& r = corpus[i];
    total += example_loss(scorer, make_example(r, select_topk_negatives(scorer, r.question, r, k), weights, temperature), nullptr);
  }
  return total / static_cast<double>(indices.size());
}

// Adam on mean L_STAR. N_K is re-selected with the current model at the start
// of every epoch; the parameters with the lowest validation loss are kept.
inline TrainResult train(std::span<const CorpusRecord> corpus, const TrainingConfig& cfg,
                         CrossAttentiveScorer& scorer, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const PathWeights weights = compute_weights(count_occurrences(corpus), cfg);
  const PathWeights* w = cfg.use_weights ? &weights : nullptr;
  auto [train_idx, val_idx] = split_by_query(corpus, cfg.train_split, cfg.seed);
  // a single-query corpus has nothing to hold out; select on training loss instead
  const bool has_val = !val_idx.empty();

  TrainResult result;
  result.train_instances = train_idx.size();
  result.val_instances = val_idx.size();

  auto check = [](double v, std::size_t epoch) {
    if (!std::isfinite(v))
      throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + "; lower the learning rate");
  };

  EpochLog initial;
  initial.train_loss = mean_loss(scorer, corpus, train_idx, w, cfg.k_negatives, cfg.temperature);
  initial.val_loss = has_val ? mean_loss(scorer, corpus, val_idx, w, cfg.k_negatives, cfg.temperature) : initial.train_loss;
  check(initial.train_loss, 0);
  check(initial.val_loss, 0);
  initial.wall_seconds = elapsed();
  result.log.push_back(initial);
  if (on_epoch) on_epoch(initial);
  result.best_val_loss = initial.val_loss;
  std::vector<double> best = scorer.params().data();

  nn::Adam adam(scorer.params().size(), {cfg.learning_rate});
  nn::Parameters grad = scorer.params().zeros_like();
  std::mt19937_64 rng(splitmix64(cfg.seed));
  std::vector<std::size_t> order = train_idx;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<ContrastiveExample> examples(corpus.size());
    for (std::size_t i : train_idx) {
      const auto& r = corpus[i];
      examples[i] = make_example(r, select_topk_negatives(scorer, r.question, r, cfg.k_negatives), w, cfg.temperature);
    }
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(e - b);
      grad.zero();
      for (std::size_t i = b; i < e; ++i) epoch_loss += example_loss(scorer, examples[order[i]], &grad, scale);
      if (!grad.all_finite()) throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(epoch));
      adam.step(scorer.params(), grad);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / static_cast<double>(order.size());
    entry.val_loss = has_val ? mean_loss(scorer, corpus, val_idx, w, cfg.k_negatives, cfg.temperature)
                             : mean_loss(scorer, corpus, train_idx, w, cfg.k_negatives, cfg.temperature);
    check(entry.train_loss, epoch);
    check(entry.val_loss, epoch);
    entry.wall_seconds = elapsed();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (entry.val_loss < result.best_val_loss) {
      result.best_val_loss = entry.val_loss;
      result.best_epoch = epoch;
      best = scorer.params().data();
    }
  }
  scorer.params().data() = std::move(best);
  return result;
}

}  // namespace star
