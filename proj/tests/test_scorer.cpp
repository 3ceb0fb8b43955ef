#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "star/scorer.hpp"

using namespace star;

namespace {

CrossAttentiveScorer small_scorer(std::uint64_t seed = 1, std::size_t d = 16) {
  ScorerConfig cfg;
  cfg.hidden = d;
  cfg.key_dim = 8;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.max_len = 24;
  cfg.seed = seed;
  std::vector<std::string> texts = {"which team does he play for", "sports.pro_athlete.teams",
                                    "people.person.nationality"};
  return CrossAttentiveScorer(cfg, Vocabulary::from_texts(texts));
}

nn::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Vocabulary, SpecialTokensAndUnknownWords) {
  std::vector<std::string> texts = {"b a", "c"};
  auto v = Vocabulary::from_texts(texts);
  EXPECT_EQ(v.size(), Vocabulary::kSpecialCount + 3);
  EXPECT_EQ(v.encode("a [SEP] zzz [EOP]"),
            (std::vector<int>{v.id("a"), Vocabulary::kSep, Vocabulary::kUnk, Vocabulary::kEop}));
  EXPECT_THROW(Vocabulary(std::vector<std::string>{"x", "x"}), ValidationError);
}

TEST(InputSequence, LayoutAndTruncation) {
  std::vector<std::string> texts = {"a b c d e f g h"};
  auto v = Vocabulary::from_texts(texts);
  auto seq = build_input_sequence(v, 64, "a b", "c [SEP] d");
  EXPECT_EQ(seq.ids[0], Vocabulary::kCls);
  EXPECT_EQ(seq.ids[1], Vocabulary::kSep);
  EXPECT_EQ(seq.ids[seq.qsp], Vocabulary::kQsp);
  EXPECT_EQ(seq.ids[seq.psp], Vocabulary::kPsp);
  EXPECT_EQ(seq.query_len(), 2u);
  EXPECT_EQ(seq.path_len(), 3u);
  EXPECT_EQ(seq.ids.size(), 10u);

  auto tight = build_input_sequence(v, 9, "a b c d e f", "g h a b c");
  EXPECT_EQ(tight.ids.size(), 9u);
  EXPECT_GE(tight.query_len(), 1u);
  EXPECT_GE(tight.path_len(), 1u);
  auto tiny = build_input_sequence(v, 7, "a b c", "d e");
  EXPECT_EQ(tiny.query_len(), 1u);
  EXPECT_EQ(tiny.path_len(), 1u);
}

TEST(CrossAttention, SingleKeyReturnsThatRow) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto wq = random_matrix(rng, 6, 4), wk = random_matrix(rng, 6, 4);
    nn::RowVector probe = random_matrix(rng, 1, 6);
    auto rows = random_matrix(rng, 1, 6);
    auto r = cross_attention(wq, wk, probe, rows);
    EXPECT_NEAR(r.weights(0), 1.0, 1e-12);
    EXPECT_LT((r.output - rows.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CrossAttention, EqualKeysAverage) {
  std::mt19937_64 rng(2);
  auto wq = random_matrix(rng, 6, 4), wk = random_matrix(rng, 6, 4);
  nn::RowVector probe = random_matrix(rng, 1, 6);
  nn::Matrix rows = random_matrix(rng, 1, 6).replicate(5, 1);
  auto r = cross_attention(wq, wk, probe, rows);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(r.weights(i), 0.2, 1e-12);
  EXPECT_LT((r.output - rows.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossAttention, WeightsFormAProbabilityVector) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 9);
    nn::Matrix wq = random_matrix(rng, 6, 4) * 3.0;
    nn::Matrix wk = random_matrix(rng, 6, 4);
    auto rows = random_matrix(rng, n, 6);
    auto r = cross_attention(wq, wk, random_matrix(rng, 1, 6), rows);
    EXPECT_NEAR(r.weights.sum(), 1.0, 1e-6);
    EXPECT_GE(r.weights.minCoeff(), 0.0);
    EXPECT_LT((r.output - r.weights.transpose() * rows).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(cross_attention(random_matrix(rng, 6, 4), random_matrix(rng, 6, 4), random_matrix(rng, 1, 6),
                               nn::Matrix(0, 6)),
               ValidationError);
}

TEST(Scorer, ZeroProjectionsGiveUniformAttentionPlusResidual) {
  auto s = small_scorer(4);
  for (auto slot : {s.slots().qsp_wq, s.slots().qsp_wk, s.slots().psp_wq, s.slots().psp_wk})
    s.params()[slot].setZero();
  CrossAttentiveScorer::Cache c;
  s.forward(s.sequence("which team does he play for", "David [SEP] sports.pro_athlete.teams"), &c);
  const auto d = static_cast<Eigen::Index>(s.config().hidden);
  auto check = [&](const CrossAttentiveScorer::CrossCache& cc, std::size_t probe, std::size_t b, std::size_t e,
                   Eigen::Index segment) {
    const auto n = static_cast<Eigen::Index>(e - b);
    for (Eigen::Index i = 0; i < n; ++i) EXPECT_NEAR(cc.weights(i), 1.0 / static_cast<double>(n), 1e-12);
    nn::RowVector mean = c.hidden.middleRows(static_cast<Eigen::Index>(b), n).colwise().mean();
    nn::RowVector expected = c.hidden.row(static_cast<Eigen::Index>(probe)) + mean;
    EXPECT_LT((c.concat.segment(segment, d) - expected).cwiseAbs().maxCoeff(), 1e-6);
  };
  check(c.qsp, c.seq.qsp, c.seq.query_begin, c.seq.query_end, d);
  check(c.psp, c.seq.psp, c.seq.path_begin, c.seq.path_end, 2 * d);
  EXPECT_LT((c.concat.segment(0, d) - c.hidden.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Scorer, ZeroHeadScoresOneHalf) {
  auto s = small_scorer(5);
  s.params()[s.slots().head_w2].setZero();
  s.params()[s.slots().head_b2].setZero();
  for (const char* path : {"x [SEP] sports.pro_athlete.teams", "y", "z [SEP] people.person.nationality [SEP] [EOP]"})
    EXPECT_NEAR(s.score_text("which team", path), 0.5, 1e-12);
}

TEST(Scorer, ScoresLieInOpenUnitIntervalAndAreDeterministic) {
  auto a = small_scorer(6);
  auto b = small_scorer(6);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 30; ++i) {
    const std::string q = gradcheck::random_words(rng, 4, " ");
    const std::string p = "t [SEP] " + gradcheck::random_words(rng, 3, ".");
    const double s = a.score_text(q, p);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    EXPECT_EQ(s, b.score_text(q, p));
  }
  EXPECT_EQ(a.encode(a.sequence("q", "p")).rows(), static_cast<Eigen::Index>(a.sequence("q", "p").ids.size()));
}

TEST(Scorer, BatchScoringMatchesSingleScoring) {
  auto s = small_scorer(8);
  std::vector<std::string> paths = {"a [SEP] sports.pro_athlete.teams", "a [SEP] people.person.nationality",
                                    "a [SEP] [EOP]"};
  auto batch = s.score_batch("which team", paths);
  for (std::size_t i = 0; i < paths.size(); ++i) EXPECT_EQ(batch[i], s.score_text("which team", paths[i]));
}

TEST(Scorer, AnalyticGradientMatchesCentralDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto r = gradcheck::run(seed);
    EXPECT_LE(r.coordinate_error, 1e-3) << "seed " << seed;
    EXPECT_LE(r.directional_error, 1e-3) << "seed " << seed;
    EXPECT_GT(r.coordinates, 100u);
  }
}

TEST(Scorer, ConfigValidation) {
  ScorerConfig cfg;
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.max_len = 4;
  EXPECT_THROW(cfg.validate(), ValidationError);
  auto back = scorer_config_from_json(to_json(ScorerConfig{}));
  EXPECT_EQ(to_json(back), to_json(ScorerConfig{}));
}

TEST(Checkpoint, RoundTripPreservesScores) {
  auto s = small_scorer(9);
  fixtures::TempDir dir("ckpt");
  save_checkpoint(dir.path() / "m.star", s, {{"note", "unit"}});
  io::json prov;
  auto back = load_checkpoint(dir.path() / "m.star", &prov);
  EXPECT_EQ(prov["note"], "unit");
  EXPECT_EQ(back.params().data(), s.params().data());
  EXPECT_EQ(back.score_text("which team", "a [SEP] sports.pro_athlete.teams"),
            s.score_text("which team", "a [SEP] sports.pro_athlete.teams"));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  fixtures::TempDir dir("ckpt-bad");
  io::write_text(dir.path() / "a.star", "not a checkpoint\n{}\n");
  EXPECT_THROW(load_checkpoint(dir.path() / "a.star"), IngestError);
  auto s = small_scorer(10);
  save_checkpoint(dir.path() / "b.star", s);
  std::string bytes = io::read_text(dir.path() / "b.star");
  io::write_text(dir.path() / "b.star", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(dir.path() / "b.star"), IngestError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.star"), IoError);
}
