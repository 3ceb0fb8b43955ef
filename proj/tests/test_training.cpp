#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "star/config.hpp"
#include "star/training.hpp"

using namespace star;

namespace {

CorpusRecord record(std::string qid, std::string target, std::vector<std::string> hard,
                    std::vector<std::string> normal = {}) {
  CorpusRecord r;
  r.qid = std::move(qid);
  r.question = "which team does the player play for";
  r.positive = target;
  r.target = std::move(target);
  r.hard_negatives = std::move(hard);
  r.normal_negatives = std::move(normal);
  return r;
}

// Scores read from a table keyed by path text.
class TableScorer final : public PathScorer {
 public:
  explicit TableScorer(std::map<std::string, double> t) : t_(std::move(t)) {}
  std::vector<double> score_batch(std::string_view, std::span<const std::string> paths) const override {
    std::vector<double> out;
    for (const auto& p : paths) out.push_back(t_.count(p) ? t_.at(p) : 0.0);
    return out;
  }

 private:
  std::map<std::string, double> t_;
};

}  // namespace

TEST(LossShc, ClosedForms) {
  EXPECT_EQ(loss_shc(0.3, std::span<const double>()), 0.0);
  const double one[] = {0.7};
  EXPECT_NEAR(loss_shc(0.7, one), std::log(2.0), 1e-9);
  double prev = 1e300;
  for (double s = -5; s <= 30; s += 0.5) {
    const double l = loss_shc(s, one);
    EXPECT_LT(l, prev);
    EXPECT_GE(l, 0.0);
    prev = l;
  }
  EXPECT_LT(prev, 1e-9);
}

TEST(LossStar, UnitWeightsReduceToPlainLoss) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> s(-3, 3);
  for (int i = 0; i < 1000; ++i) {
    const double pos = s(rng);
    std::vector<double> negs(1 + rng() % 15);
    std::vector<WeightedScore> wn;
    for (double& n : negs) wn.push_back({n = s(rng), 1.0});
    EXPECT_NEAR(loss_star(pos, 1.0, wn), loss_shc(pos, negs), 1e-12);
  }
}

TEST(LossStar, BoundWeightsOnEqualScores) {
  const WeightedScore neg[] = {{0.4, 0.5}};
  EXPECT_NEAR(loss_star(0.4, 3.0, neg), -std::log(3.0 / 3.5), 1e-9);
  EXPECT_NEAR(loss_star(0.4, 3.0, neg), 0.15415067982725836, 1e-12);
}

TEST(LossStar, MatchesDirectFormulaAndIsScaleInvariant) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> s(-2, 2), w(0.5, 3.0), c(0.1, 10);
  for (int i = 0; i < 500; ++i) {
    const double pos = s(rng), wp = w(rng), k = c(rng);
    std::vector<std::pair<double, double>> raw;
    std::vector<WeightedScore> negs, scaled;
    for (int j = 0; j < 5; ++j) {
      raw.emplace_back(s(rng), w(rng));
      negs.push_back({raw.back().first, raw.back().second});
      scaled.push_back({raw.back().first, raw.back().second * k});
    }
    const double l = loss_star(pos, wp, negs);
    EXPECT_NEAR(l, oracle::weighted_loss(pos, wp, raw), 1e-12);
    EXPECT_NEAR(loss_star(pos, wp * k, scaled), l, 1e-9);
  }
}

TEST(LossStar, RaisingPositiveWeightLowersLoss) {
  const WeightedScore negs[] = {{0.2, 1.0}, {0.9, 2.0}};
  double prev = 1e300;
  for (double w = 0.5; w <= 3.0; w += 0.125) {
    const double l = loss_star(0.5, w, negs);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(LossStar, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> s(-2, 2), w(0.5, 3.0);
  for (int i = 0; i < 100; ++i) {
    const double pos = s(rng), wp = w(rng);
    std::vector<WeightedScore> negs;
    for (int j = 0; j < 4; ++j) negs.push_back({s(rng), w(rng)});
    auto lg = loss_star_with_grad(pos, wp, negs);
    const double h = 1e-6;
    EXPECT_NEAR(lg.d_pos, (loss_star(pos + h, wp, negs) - loss_star(pos - h, wp, negs)) / (2 * h), 1e-7);
    for (std::size_t j = 0; j < negs.size(); ++j) {
      auto up = negs, down = negs;
      up[j].score += h;
      down[j].score -= h;
      EXPECT_NEAR(lg.d_neg[j], (loss_star(pos, wp, up) - loss_star(pos, wp, down)) / (2 * h), 1e-7);
    }
  }
}

TEST(LossStar, RejectsNonPositiveWeights) {
  const WeightedScore bad[] = {{0.1, 0.0}};
  EXPECT_THROW(loss_star(0.1, 1.0, bad), ValidationError);
  EXPECT_THROW(loss_star(0.1, -1.0, std::span<const WeightedScore>()), ValidationError);
}

TEST(CountOccurrences, TalliesSignaturesPerClass) {
  std::vector<CorpusRecord> corpus = {
      record("a", "t [SEP] r1", {"t [SEP] r2"}, {"t [SEP] r3", "t [SEP] r2"}),
      record("b", "u [SEP] r1", {"u [SEP] r2"}),
      record("c", "v [SEP] r1", {}),
  };
  auto c = count_occurrences(corpus);
  EXPECT_EQ(c.positive, (std::map<std::string, std::size_t>{{"r1", 3}}));
  EXPECT_EQ(c.n_pos, 3u);
  // the duplicate normal negative is counted once per instance
  EXPECT_EQ(c.negative, (std::map<std::string, std::size_t>{{"r2", 2}, {"r3", 1}}));
  EXPECT_EQ(c.n_neg, 3u);
  auto back = occurrence_counts_from_json(to_json(c));
  EXPECT_EQ(back.positive, c.positive);
  EXPECT_EQ(back.n_neg, c.n_neg);
}

TEST(CountOccurrences, MatchesIndependentTally) {
  std::mt19937_64 rng(4);
  std::vector<CorpusRecord> corpus;
  std::map<std::string, std::size_t> pos, neg;
  for (int i = 0; i < 200; ++i) {
    const std::string sig = "r" + std::to_string(rng() % 7);
    std::vector<std::string> hard;
    std::set<std::string> distinct;
    for (int j = 0; j < 3; ++j) {
      std::string n = "r" + std::to_string(rng() % 9) + " [SEP] [EOP]";
      const std::string path = "t [SEP] " + n;
      if (!distinct.insert(path).second) continue;
      hard.push_back(path);
      ++neg[relation_signature(path)];
    }
    ++pos[sig];
    corpus.push_back(record("q" + std::to_string(i), "t [SEP] " + sig, hard));
  }
  auto c = count_occurrences(corpus);
  EXPECT_EQ(c.positive, pos);
  EXPECT_EQ(c.negative, neg);
}

TEST(ComputeWeights, HandDerivedFourSignatureFixture) {
  OccurrenceCounts c;
  c.positive = {{"a", 1}, {"b", 2}, {"c", 4}, {"d", 8}};
  c.n_pos = 15;
  auto w = compute_weights(c, TrainingConfig{});
  // raw 15/n = 15, 7.5, 3.75, 1.875; rescaled 0.5 + 2.5 (raw - 1.875) / 13.125
  EXPECT_DOUBLE_EQ(w.positive_weight("a"), 3.0);
  EXPECT_NEAR(w.positive_weight("b"), 11.0 / 7.0, 1e-15);
  EXPECT_NEAR(w.positive_weight("c"), 6.0 / 7.0, 1e-15);
  EXPECT_DOUBLE_EQ(w.positive_weight("d"), 0.5);
  EXPECT_TRUE(w.negative.empty());
  EXPECT_EQ(w.negative_weight("anything"), 1.0);
}

TEST(ComputeWeights, EqualFrequenciesAreNeutral) {
  OccurrenceCounts c;
  c.positive = {{"a", 3}, {"b", 3}};
  c.n_pos = 6;
  c.negative = {{"x", 1}};
  c.n_neg = 1;
  auto w = compute_weights(c, TrainingConfig{});
  EXPECT_EQ(w.positive_weight("a"), 1.0);
  EXPECT_EQ(w.positive_weight("b"), 1.0);
  EXPECT_EQ(w.negative_weight("x"), 1.0);
}

TEST(ComputeWeights, BoundedMonotoneAndMatchesOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    OccurrenceCounts c;
    const std::size_t n = 1 + rng() % 12;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = 1 + rng() % 50;
      c.positive["s" + std::to_string(i)] = k;
      c.n_pos += k;
    }
    auto w = compute_weights(c, TrainingConfig{});
    auto want = oracle::rescaled_weights(c.positive, 0.5, 3.0);
    for (const auto& [sig, v] : w.positive) {
      EXPECT_GE(v, 0.5);
      EXPECT_LE(v, 3.0);
      EXPECT_NEAR(v, want.at(sig), 1e-12);
      for (const auto& [sig2, v2] : w.positive)
        if (c.positive[sig] < c.positive[sig2]) EXPECT_GE(v, v2);
    }
  }
}

TEST(SelectTopK, ExhaustiveSortAndTies) {
  auto r = record("a", "t [SEP] gold", {"t [SEP] b", "t [SEP] a", "t [SEP] c"}, {"t [SEP] d", "t [SEP] a"});
  TableScorer s({{"t [SEP] a", 0.2}, {"t [SEP] b", 0.9}, {"t [SEP] c", 0.5}, {"t [SEP] d", 0.5}});
  auto top = select_topk_negatives(s, r.question, r, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].text, "t [SEP] b");
  EXPECT_EQ(top[1].text, "t [SEP] c");
  EXPECT_EQ(top[2].text, "t [SEP] d");
  EXPECT_EQ(select_topk_negatives(s, r.question, r, 10).size(), 4u);
  TableScorer flat({});
  auto tied = select_topk_negatives(flat, r.question, r, 2);
  EXPECT_EQ(tied[0].text, "t [SEP] a");
  EXPECT_EQ(tied[1].text, "t [SEP] b");
}

TEST(MakeExample, AttachesWeightsBySignature) {
  auto r = record("a", "t [SEP] gold", {"t [SEP] b"});
  PathWeights w;
  w.positive["gold"] = 2.5;
  w.negative["b"] = 0.75;
  std::vector<ScoredText> sel = {{"t [SEP] b", 0.1}};
  auto ex = make_example(r, sel, &w, 0.5);
  EXPECT_EQ(ex.target_weight, 2.5);
  EXPECT_EQ(ex.negative_weights, std::vector<double>{0.75});
  EXPECT_EQ(ex.temperature, 0.5);
  auto plain = make_example(r, sel, nullptr);
  EXPECT_EQ(plain.target_weight, 1.0);
  EXPECT_EQ(plain.negative_weights, std::vector<double>{1.0});
}

TEST(SplitByQuery, NoQueryOnBothSides) {
  std::vector<CorpusRecord> corpus;
  for (int i = 0; i < 60; ++i) corpus.push_back(record("q" + std::to_string(i % 20), "t [SEP] r", {"t [SEP] x"}));
  auto [tr, va] = split_by_query(corpus, 0.9, 3);
  std::set<std::string> a, b;
  for (auto i : tr) a.insert(corpus[i].qid);
  for (auto i : va) b.insert(corpus[i].qid);
  EXPECT_EQ(a.size(), 18u);
  EXPECT_EQ(b.size(), 2u);
  for (const auto& q : a) EXPECT_FALSE(b.count(q));
  EXPECT_EQ(tr.size() + va.size(), corpus.size());
}

TEST(TrainingConfig, ValidationAndJson) {
  TrainingConfig c;
  c.w_minus = 4;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.train_split = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.temperature = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.epochs = 7;
  c.use_weights = false;
  EXPECT_EQ(to_json(training_config_from_json(to_json(c))), to_json(c));
  auto web = preset("webqsp").training;
  EXPECT_EQ(web.epochs, 50u);
  EXPECT_DOUBLE_EQ(web.learning_rate, 3e-5);
  EXPECT_DOUBLE_EQ(web.train_split, 0.9);
  EXPECT_EQ(web.k_negatives, 15u);
  EXPECT_DOUBLE_EQ(web.w_plus, 3.0);
  EXPECT_DOUBLE_EQ(web.w_minus, 0.5);
}

namespace {

CrossAttentiveScorer tiny_scorer(const std::vector<CorpusRecord>& corpus) {
  std::vector<std::string> texts;
  for (const auto& r : corpus) {
    texts.push_back(r.question);
    texts.push_back(r.target);
    for (const auto& n : r.negatives()) texts.push_back(n);
  }
  ScorerConfig cfg;
  cfg.hidden = 16;
  cfg.key_dim = 8;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.max_len = 32;
  return CrossAttentiveScorer(cfg, Vocabulary::from_texts(texts));
}

std::vector<CorpusRecord> toy_corpus() {
  std::vector<CorpusRecord> corpus;
  for (int i = 0; i < 12; ++i) {
    CorpusRecord r = record("q" + std::to_string(i), "p" + std::to_string(i) + " [SEP] sports.team.roster",
                            {"p" + std::to_string(i) + " [SEP] people.person.nationality"},
                            {"p" + std::to_string(i) + " [SEP] film.film.genre"});
    r.question = i % 2 ? "which team does he play for" : "what team is she on";
    corpus.push_back(r);
  }
  return corpus;
}

}  // namespace

TEST(Train, ZeroEpochsKeepsInitialization) {
  auto corpus = toy_corpus();
  corpus.resize(1);
  auto s = tiny_scorer(corpus);
  const auto before = s.params().data();
  TrainingConfig cfg;
  cfg.epochs = 0;
  auto res = train(corpus, cfg, s);
  EXPECT_EQ(s.params().data(), before);
  EXPECT_EQ(res.log.size(), 1u);
  EXPECT_EQ(res.best_epoch, 0u);
}

TEST(Train, ValidationLossDropsAndRunsAreReproducible) {
  auto corpus = toy_corpus();
  TrainingConfig cfg;
  cfg.epochs = 6;
  cfg.learning_rate = 3e-3;
  cfg.train_split = 0.75;
  cfg.batch_size = 4;
  auto a = tiny_scorer(corpus);
  auto b = tiny_scorer(corpus);
  std::vector<double> seen;
  auto ra = train(corpus, cfg, a, [&](const EpochLog& e) { seen.push_back(e.val_loss); });
  auto rb = train(corpus, cfg, b);
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_LT(ra.best_val_loss, ra.log.front().val_loss);
  EXPECT_EQ(a.params().data(), b.params().data());
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
  EXPECT_EQ(ra.train_instances + ra.val_instances, corpus.size());
}

TEST(Train, DivergenceAndEmptyCorpusAreReported) {
  auto corpus = toy_corpus();
  auto s = tiny_scorer(corpus);
  TrainingConfig cfg;
  EXPECT_THROW(train(std::span<const CorpusRecord>(), cfg, s), ValidationError);
  for (double& v : s.params().data()) v = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train(corpus, cfg, s), TrainingDiverged);
}
