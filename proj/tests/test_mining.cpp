#include <gtest/gtest.h>

#include <map>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "star/io.hpp"
#include "star/mining.hpp"

using namespace star;
using fixtures::footballer_graph;
using fixtures::graph_from;

namespace {

// Similarity looked up from a table keyed by the second argument.
class TableModel final : public SimilarityModel {
 public:
  explicit TableModel(std::map<std::string, double> table) : table_(std::move(table)) {}
  std::string backend_id() const override { return "table"; }
  std::size_t dimension() const override { return 1; }

 protected:
  double similarity(std::string_view, std::string_view b) const override {
    auto it = table_.find(std::string(b));
    return it == table_.end() ? 0.0 : it->second;
  }

 private:
  std::map<std::string, double> table_;
};

QueryRecord footballer_query() {
  return {"q1", "What country does David Luiz play for?", {"David Luiz"}, {"France"}, "train"};
}

std::vector<std::string> relation_names_of(const KnowledgeGraph& g, const std::vector<Path>& paths) {
  std::vector<std::string> out;
  for (const Path& p : paths) out.push_back(g.relation_name(p.hops.back().relation));
  return out;
}


}  // namespace

using oracle::random_query;

TEST(HardPositives, FootballerKeepsOnlyTheClubRoute) {
  auto g = footballer_graph();
  HashedBowModel m;
  auto pos = curate_hard_positives(footballer_query(), g, m, 2);
  ASSERT_EQ(pos.size(), 1u);
  EXPECT_EQ(relation_signature(g, pos[0]), std::string(fixtures::kTeams) + " [SEP] " + fixtures::kTeamCountry);
}

TEST(HardPositives, SingleCandidateSurvivesTheMeanFilter) {
  auto g = graph_from("t\tr\ta\n");
  TableModel m({});
  QueryRecord q{"q", "anything", {"t"}, {"a"}, "train"};
  EXPECT_EQ(curate_hard_positives(q, g, m, 2).size(), 1u);
}

TEST(HardPositives, FilterKeepsPathsAtOrAboveTheMean) {
  auto g = graph_from("t\thigh\ta\nt\tmid\ta\nt\tlow\ta\n");
  TableModel m({{"t [SEP] high", 0.9}, {"t [SEP] mid", 0.5}, {"t [SEP] low", 0.1}});
  QueryRecord q{"q", "question", {"t"}, {"a"}, "train"};
  auto pos = curate_hard_positives(q, g, m, 1);
  // mean (0.9 + 0.5 + 0.1) / 3 = 0.5
  std::set<std::string> kept;
  for (const Path& p : pos) kept.insert(relation_signature(g, p));
  EXPECT_EQ(kept, (std::set<std::string>{"high", "mid"}));
}

TEST(HardPositives, UnreachableQueryIsSkippedAndBadIdsThrow) {
  auto g = footballer_graph();
  HashedBowModel m;
  QueryRecord q{"q", "where", {"Brazil"}, {"France"}, "train"};
  EXPECT_TRUE(curate_hard_positives(q, g, m, 2).empty());
  QueryRecord missing{"q", "where", {"Pele"}, {"France"}, "train"};
  EXPECT_THROW(curate_hard_positives(missing, g, m, 2), LookupError);
  QueryRecord empty{"q", "where", {}, {"France"}, "train"};
  EXPECT_THROW(curate_hard_positives(empty, g, m, 2), ValidationError);
}

TEST(HardPositives, MatchesBruteForceOnRandomFixtures) {
  HashedBowModel m;
  std::mt19937_64 rng(21);
  int compared = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto g = oracle::random_graph(rng, 8 + trial % 8, 4, 30);
    for (int qi = 0; qi < 5; ++qi) {
      const std::size_t h = 1 + (trial + qi) % 3;
      auto q = random_query(g, rng, h, qi);
      auto got = curate_hard_positives(q, g, m, h);
      EXPECT_EQ(got, oracle::hard_positives(q, g, m, h));
      compared += !got.empty();
      // per topic, every kept path has the same length
      std::map<EntityId, std::size_t> len;
      for (const Path& p : got) {
        EXPECT_TRUE(g.is_valid(p));
        auto [it, fresh] = len.emplace(p.topic, p.length());
        EXPECT_EQ(it->second, p.length());
      }
    }
  }
  EXPECT_GT(compared, 50);
}

TEST(HardNegatives, FootballerFirstHopAlternativeIsNationality) {
  auto g = footballer_graph();
  HashedBowModel m;
  auto pos = curate_hard_positives(footballer_query(), g, m, 2);
  std::mt19937_64 rng(1);
  auto inst = curate_hard_negatives(pos, g, m, 1, rng);
  ASSERT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst[0].hop_index, 1u);
  EXPECT_EQ(relation_names_of(g, inst[0].hard_negatives), std::vector<std::string>{fixtures::kNationality});
  // the club has a single outgoing relation, so its hop has no hard alternative
  EXPECT_TRUE(inst[1].hard_negatives.empty());
  EXPECT_EQ(inst[1].normal_negatives.size(), 1u);
}

TEST(HardNegatives, TopThreeOfFiveMatchExhaustiveRanking) {
  auto g = graph_from(
      "h\tpeople.person.place_of_birth\tx\n"
      "h\tpeople.person.place_of_death\tx\n"
      "h\tpeople.person.nationality\tx\n"
      "h\tlocation.place.country\tx\n"
      "h\tsports.team.coach\tx\n"
      "h\tmusic.artist.genre\tx\n");
  HashedBowModel m;
  const std::string gold = "people.person.place_of_birth";
  Path pos{g.entity("h"), {{g.relation(gold), g.entity("x")}}};
  std::mt19937_64 rng(4);
  auto inst = curate_hard_negatives(std::span<const Path>(&pos, 1), g, m, 3, rng);
  ASSERT_EQ(inst.size(), 1u);
  auto want = oracle::hard_negative_relations(g, m, g.entity("h"), gold, 3, false);
  EXPECT_EQ(relation_names_of(g, inst[0].hard_negatives), want);
  EXPECT_EQ(want.front(), "people.person.place_of_death");
}

TEST(HardNegatives, NormalNegativesAvoidGoldAndRespectK) {
  HashedBowModel m;
  std::mt19937_64 g_rng(8);
  auto g = oracle::random_graph(g_rng, 10, 12, 40);
  const Triple t = g.triples().front();
  Path pos{t.head, {{t.relation, t.tail}}};
  std::mt19937_64 rng(2);
  auto inst = curate_hard_negatives(std::span<const Path>(&pos, 1), g, m, 5, rng);
  ASSERT_EQ(inst.size(), 1u);
  std::set<RelationId> seen;
  for (const Path& n : inst[0].normal_negatives) {
    EXPECT_NE(n.hops.back().relation, t.relation);
    seen.insert(n.hops.back().relation);
  }
  EXPECT_EQ(seen.size(), 5u);
  // a pool smaller than k is drawn with replacement and deduplicated
  auto tiny = graph_from("a\tr1\tb\na\tr2\tb\n");
  Path p2{tiny.entity("a"), {{tiny.relation("r1"), tiny.entity("b")}}};
  auto inst2 = curate_hard_negatives(std::span<const Path>(&p2, 1), tiny, m, 5, rng);
  ASSERT_EQ(inst2.size(), 1u);
  EXPECT_EQ(inst2[0].normal_negatives.size(), 1u);
  EXPECT_THROW(curate_hard_negatives(std::span<const Path>(&p2, 1), tiny, m, 0, rng), ValidationError);
}

TEST(HardNegatives, LoneRelationWithNoOtherRelationsDropsTheInstance) {
  auto g = graph_from("a\tr\tb\n");
  HashedBowModel m;
  Path p{g.entity("a"), {{g.relation("r"), g.entity("b")}}};
  std::mt19937_64 rng(0);
  EXPECT_TRUE(curate_hard_negatives(std::span<const Path>(&p, 1), g, m, 3, rng).empty());
  // with termination, [EOP] is always an alternative
  auto with_eop = curate_hard_negatives(std::span<const Path>(&p, 1), g, m, 3, rng, {true});
  ASSERT_EQ(with_eop.size(), 2u);
  EXPECT_EQ(g.relation_name(with_eop[0].hard_negatives[0].hops.back().relation), "[EOP]");
  EXPECT_TRUE(with_eop[1].hard_negatives.empty());
  EXPECT_EQ(g.relation_name(with_eop[1].normal_negatives[0].hops.back().relation), "r");
}

TEST(HardNegatives, RestoringGoldRelationGivesPositivePrefix) {
  HashedBowModel m;
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = oracle::random_graph(rng, 12, 5, 40);
    for (int qi = 0; qi < 3; ++qi) {
      auto q = random_query(g, rng, 3, qi);
      auto pos = curate_hard_positives(q, g, m, 3);
      std::mt19937_64 r2(5);
      for (const auto& inst : curate_hard_negatives(pos, g, m, 3, r2, {true})) {
        const Path target = inst.target();
        EXPECT_EQ(target.hops.size(), inst.hop_index);
        for (const Path& n : inst.hard_negatives) {
          const Path* neg = &n;
          Path fixed = *neg;
          EXPECT_NE(fixed.hops.back().relation, target.hops.back().relation);
          fixed.hops.back() = target.hops.back();
          EXPECT_EQ(fixed, target);
          EXPECT_EQ(fixed, inst.positive.prefix(inst.hop_index));
        }
        for (const Path& n : inst.normal_negatives) {
          EXPECT_EQ(n.prefix(inst.hop_index - 1), inst.positive.prefix(inst.hop_index - 1));
          EXPECT_NE(n.hops.back().relation, target.hops.back().relation);
        }
      }
    }
  }
}

TEST(BuildTrainingSet, EmptyQueryListGivesEmptyCorpusAndManifest) {
  auto g = footballer_graph();
  HashedBowModel m;
  MiningConfig cfg;
  auto set = build_training_set(std::span<const QueryRecord>(), g, m, cfg);
  EXPECT_TRUE(set.instances.empty());
  fixtures::TempDir dir("mine-empty");
  write_training_set(dir.path(), g, set, cfg, 0);
  auto manifest = io::read_json(dir.path() / "manifest.json");
  EXPECT_EQ(manifest["N_pos"], 0);
  EXPECT_EQ(manifest["k"], 15);
  EXPECT_TRUE(read_corpus(dir.path() / "instances.jsonl").empty());
}

TEST(BuildTrainingSet, InstanceCountEqualsHopRecount) {
  HashedBowModel m;
  std::mt19937_64 rng(17);
  auto g = oracle::random_graph(rng, 15, 6, 50);
  std::vector<QueryRecord> qs;
  for (int i = 0; i < 10; ++i) qs.push_back(random_query(g, rng, 2, i));
  for (bool termination : {false, true}) {
    MiningConfig cfg;
    cfg.k = 3;
    cfg.termination = termination;
    auto set = build_training_set(qs, g, m, cfg);
    std::size_t expected = 0, positives = 0;
    for (const auto& q : qs) {
      for (const Path& p : oracle::hard_positives(q, g, m, 2)) {
        ++positives;
        expected += p.hops.size() + (termination ? 1 : 0);
      }
    }
    EXPECT_EQ(set.positive_paths, positives);
    // with plenty of relations every hop has at least one normal negative
    EXPECT_EQ(set.instances.size(), expected);
    EXPECT_EQ(set.n_pos(), set.instances.size());
  }
}

TEST(BuildTrainingSet, CorpusFilesAreByteIdenticalAcrossRuns) {
  HashedBowModel m;
  std::mt19937_64 rng(29);
  auto g = oracle::random_graph(rng, 15, 6, 50);
  std::vector<QueryRecord> qs;
  for (int i = 0; i < 10; ++i) qs.push_back(random_query(g, rng, 2, i));
  MiningConfig cfg;
  cfg.k = 4;
  fixtures::TempDir a("mine-a"), b("mine-b");
  write_training_set(a.path(), g, build_training_set(qs, g, m, cfg), cfg, qs.size());
  write_training_set(b.path(), g, build_training_set(qs, g, m, cfg), cfg, qs.size());
  EXPECT_EQ(io::read_text(a.path() / "instances.jsonl"), io::read_text(b.path() / "instances.jsonl"));
  EXPECT_EQ(io::read_text(a.path() / "manifest.json"), io::read_text(b.path() / "manifest.json"));
  auto back = read_corpus(a.path() / "instances.jsonl");
  auto set = build_training_set(qs, g, m, cfg);
  ASSERT_EQ(back.size(), set.instances.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(to_json(back[i]), to_json(to_record(g, set.instances[i])));
}

TEST(BuildTrainingSet, PerQuerySeedsMakeOrderIrrelevant) {
  HashedBowModel m;
  std::mt19937_64 rng(31);
  auto g = oracle::random_graph(rng, 15, 8, 50);
  std::vector<QueryRecord> qs;
  for (int i = 0; i < 6; ++i) qs.push_back(random_query(g, rng, 2, i));
  MiningConfig cfg;
  cfg.k = 2;
  auto forward = build_training_set(qs, g, m, cfg);
  std::reverse(qs.begin(), qs.end());
  auto backward = build_training_set(qs, g, m, cfg);
  std::map<std::string, std::vector<io::json>> fa, fb;
  for (const auto& i : forward.instances) fa[i.qid].push_back(to_json(to_record(g, i)));
  for (const auto& i : backward.instances) fb[i.qid].push_back(to_json(to_record(g, i)));
  EXPECT_EQ(fa, fb);
}

TEST(QueryRecordJson, RoundTripAndValidation) {
  auto q = footballer_query();
  auto back = query_from_json(to_json(q));
  EXPECT_EQ(back.qid, q.qid);
  EXPECT_EQ(back.topics, q.topics);
  EXPECT_EQ(back.answers, q.answers);
  EXPECT_EQ(back.split, q.split);
  EXPECT_THROW(query_from_json(io::json{{"qid", ""}, {"question", "x"}, {"topics", {"a"}}, {"answers", {"b"}}}),
               IngestError);
  EXPECT_THROW(corpus_record_from_json(io::json{{"qid", "x"}}), IngestError);
}
