#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/log.hpp"
#include "star/similarity.hpp"

namespace star {

struct QueryRecord {
  std::string qid;
  std::string question;
  std::vector<std::string> topics;
  std::vector<std::string> answers;
  std::string split = "train";
};

inline io::json to_json(const QueryRecord& q) {
  return {{"qid", q.qid}, {"question", q.question}, {"topics", q.topics}, {"answers", q.answers}, {"split", q.split}};
}

inline QueryRecord query_from_json(const io::json& j) {
  QueryRecord q;
  try {
    q.qid = j.at("qid").get<std::string>();
    q.question = j.at("question").get<std::string>();
    q.topics = j.at("topics").get<std::vector<std::string>>();
    q.answers = j.at("answers").get<std::vector<std::string>>();
    q.split = j.value("split", std::string("train"));
  } catch (const io::json::exception& e) {
    throw IngestError(std::string("malformed QA record: ") + e.what());
  }
  if (q.qid.empty()) throw IngestError("QA record with empty qid");
  return q;
}

// Positive path plus negatives produced by perturbing one hop of it.
struct TrainingInstance {
  std::string qid;
  std::string question;
  Path positive;
  std::size_t hop_index = 1;  // 1-based index of the perturbed hop
  std::vector<Path> hard_negatives;
  std::vector<Path> normal_negatives;

  // The positive truncated at the perturbed hop; the path scored against the negatives.
  Path target() const { return positive.prefix(hop_index); }
};

struct MiningConfig {
  std::size_t max_hop = 2;
  std::size_t k = 15;
  std::uint64_t seed = 42;
  // Adds a terminal [EOP] hop to every positive and offers [EOP] as an
  // alternative at every hop, so the scorer sees the same candidate sets that
  // beam search scores.
  bool termination = true;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream per query so per-query work can run in any order.
inline std::uint64_t query_seed(std::uint64_t master, std::string_view qid) { return splitmix64(master ^ fnv1a64(qid)); }

inline std::vector<EntityId> resolve_entities(const KnowledgeGraph& g, const std::vector<std::string>& ids,
                                              const std::string& qid, const char* role) {
  std::vector<EntityId> out;
  for (const auto& id : ids) {
    auto e = g.find_entity(id);
    if (!e) throw LookupError("query " + qid + ": " + role + " entity '" + id + "' is not in the graph");
    out.push_back(*e);
  }
  return out;
}

// Shortest topic-to-answer paths whose similarity to the question is at least
// the per-topic mean over that topic's candidates.
inline std::vector<Path> curate_hard_positives(const QueryRecord& q, const KnowledgeGraph& g, const SimilarityModel& m,
                                               std::size_t max_hop) {
  if (q.topics.empty() || q.answers.empty())
    throw ValidationError("query " + q.qid + " needs topic and answer entities");
  auto topics = resolve_entities(g, q.topics, q.qid, "topic");
  auto answers = resolve_entities(g, q.answers, q.qid, "answer");
  std::sort(topics.begin(), topics.end());
  topics.erase(std::unique(topics.begin(), topics.end()), topics.end());

  std::vector<Path> out;
  std::set<std::pair<EntityId, std::string>> seen;
  for (EntityId topic : topics) {
    auto candidates = shortest_paths(g, topic, answers, max_hop);
    if (candidates.empty()) continue;
    std::vector<double> sims;
    sims.reserve(candidates.size());
    double total = 0;
    for (const Path& p : candidates) {
      sims.push_back(m.sim(q.question, serialize_path(g, p)));
      total += sims.back();
    }
    const double mean = total / static_cast<double>(candidates.size());
    // absorbs rounding in the mean when all similarities are equal
    const double slack = 1e-12 * std::max(1.0, std::abs(mean));
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (sims[i] + slack < mean) continue;
      if (seen.emplace(topic, relation_signature(g, candidates[i])).second) out.push_back(std::move(candidates[i]));
    }
  }
  if (out.empty()) log_info("query " + q.qid + ": no path within " + std::to_string(max_hop) + " hops, skipped");
  return out;
}

namespace detail {

// D10: without replacement when the pool is large enough, else k draws with
// replacement, deduplicated.
inline std::vector<RelationId> sample_relations(std::vector<RelationId> pool, std::size_t k, std::mt19937_64& rng) {
  std::vector<RelationId> out;
  if (pool.empty()) return out;
  if (pool.size() >= k) {
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::set<RelationId> seen;
  for (std::size_t i = 0; i < k; ++i) {
    RelationId r = pool[pick(rng)];
    if (seen.insert(r).second) out.push_back(r);
  }
  return out;
}

}  // namespace detail

struct NegativeOptions {
  bool termination = false;
};

// One instance per (positive, hop): the hop's relation is replaced by the k
// most similar alternatives at that entity (hard) and k relations sampled from
// the whole relation set (normal).
inline std::vector<TrainingInstance> curate_hard_negatives(std::span<const Path> positives, const KnowledgeGraph& g,
                                                           const SimilarityModel& m, std::size_t k,
                                                           std::mt19937_64& rng, NegativeOptions opts = {}) {
  if (k < 1) throw ValidationError("k must be >= 1");
  std::vector<RelationId> all_relations(g.relation_count());
  for (RelationId r = 0; r < g.relation_count(); ++r) all_relations[r] = r;

  std::vector<TrainingInstance> out;
  for (const Path& original : positives) {
    Path positive = opts.termination && !original.terminated() ? original.terminated_copy() : original;
    EntityId entity = positive.topic;
    for (std::size_t h = 0; h < positive.hops.size(); ++h) {
      const RelationId gold = positive.hops[h].relation;
      const Path prefix = positive.prefix(h);

      std::vector<RelationId> alternatives = g.relations_of(entity);
      if (opts.termination) alternatives.push_back(kEopRelation);
      std::erase(alternatives, gold);
      std::vector<std::string> names;
      for (RelationId r : alternatives) names.push_back(g.relation_name(r));

      TrainingInstance inst;
      inst.positive = positive;
      inst.hop_index = h + 1;
      if (!names.empty()) {
        for (const auto& name : top_k_similar(m, g.relation_name(gold), names, k))
          inst.hard_negatives.push_back(prefix.extended(*g.find_relation(name)));
      }

      std::vector<RelationId> pool = all_relations;
      std::erase(pool, gold);
      for (RelationId r : detail::sample_relations(std::move(pool), k, rng))
        inst.normal_negatives.push_back(prefix.extended(r));

      if (!inst.hard_negatives.empty() || !inst.normal_negatives.empty()) out.push_back(std::move(inst));
      entity = positive.hops[h].entity;
    }
  }
  return out;
}

struct TrainingSet {
  std::vector<TrainingInstance> instances;
  std::vector<std::string> skipped_qids;
  std::size_t positive_paths = 0;

  std::size_t n_pos() const { return instances.size(); }
  std::size_t n_neg() const {
    std::size_t n = 0;
    for (const auto& i : instances) {
      std::set<Path> distinct(i.hard_negatives.begin(), i.hard_negatives.end());
      distinct.insert(i.normal_negatives.begin(), i.normal_negatives.end());
      n += distinct.size();
    }
    return n;
  }
};

inline TrainingSet build_training_set(std::span<const QueryRecord> queries, const KnowledgeGraph& g,
                                      const SimilarityModel& m, const MiningConfig& cfg) {
  TrainingSet set;
  for (const QueryRecord& q : queries) {
    auto positives = curate_hard_positives(q, g, m, cfg.max_hop);
    if (positives.empty()) {
      set.skipped_qids.push_back(q.qid);
      continue;
    }
    set.positive_paths += positives.size();
    std::mt19937_64 rng(query_seed(cfg.seed, q.qid));
    auto instances = curate_hard_negatives(positives, g, m, cfg.k, rng, {cfg.termination});
    for (auto& inst : instances) {
      inst.qid = q.qid;
      inst.question = q.question;
      set.instances.push_back(std::move(inst));
    }
  }
  return set;
}

// Text-level instance as stored in the corpus file.
struct CorpusRecord {
  std::string qid;
  std::string question;
  std::string positive;
  std::string target;
  std::size_t hop = 1;
  std::vector<std::string> hard_negatives;
  std::vector<std::string> normal_negatives;

  std::vector<std::string> negatives() const {
    std::vector<std::string> all = hard_negatives;
    for (const auto& n : normal_negatives)
      if (std::find(all.begin(), all.end(), n) == all.end()) all.push_back(n);
    return all;
  }
};

inline CorpusRecord to_record(const KnowledgeGraph& g, const TrainingInstance& inst) {
  CorpusRecord r{inst.qid, inst.question, serialize_path(g, inst.positive), serialize_path(g, inst.target()),
                 inst.hop_index, {}, {}};
  for (const Path& p : inst.hard_negatives) r.hard_negatives.push_back(serialize_path(g, p));
  for (const Path& p : inst.normal_negatives) r.normal_negatives.push_back(serialize_path(g, p));
  return r;
}

inline io::json to_json(const CorpusRecord& r) {
  return {{"qid", r.qid},
          {"question", r.question},
          {"positive", r.positive},
          {"target", r.target},
          {"hop", r.hop},
          {"hard_negatives", r.hard_negatives},
          {"normal_negatives", r.normal_negatives}};
}

inline CorpusRecord corpus_record_from_json(const io::json& j) {
  try {
    return {j.at("qid").get<std::string>(),
            j.at("question").get<std::string>(),
            j.at("positive").get<std::string>(),
            j.at("target").get<std::string>(),
            j.at("hop").get<std::size_t>(),
            j.at("hard_negatives").get<std::vector<std::string>>(),
            j.at("normal_negatives").get<std::vector<std::string>>()};
  } catch (const io::json::exception& e) {
    throw IngestError(std::string("malformed corpus record: ") + e.what());
  }
}

inline std::vector<CorpusRecord> to_corpus(const KnowledgeGraph& g, const TrainingSet& set) {
  std::vector<CorpusRecord> out;
  for (const auto& inst : set.instances) out.push_back(to_record(g, inst));
  return out;
}

inline io::json mining_manifest(const TrainingSet& set, const MiningConfig& cfg, std::size_t n_queries) {
  return {{"seed", cfg.seed},
          {"k", cfg.k},
          {"max_hop", cfg.max_hop},
          {"termination", cfg.termination},
          {"n_queries", n_queries},
          {"n_positive_paths", set.positive_paths},
          {"n_instances", set.instances.size()},
          {"N_pos", set.n_pos()},
          {"N_neg", set.n_neg()},
          {"skipped_qids", set.skipped_qids}};
}

// Writes instances.jsonl and manifest.json under dir.
inline void write_training_set(const std::filesystem::path& dir, const KnowledgeGraph& g, const TrainingSet& set,
                               const MiningConfig& cfg, std::size_t n_queries, io::json extra_manifest = {}) {
  std::vector<io::json> lines;
  for (const auto& inst : set.instances) lines.push_back(to_json(to_record(g, inst)));
  io::write_jsonl(dir / "instances.jsonl", lines);
  io::json manifest = mining_manifest(set, cfg, n_queries);
  if (extra_manifest.is_object()) manifest.update(extra_manifest);
  manifest["corpus_digest"] = io::file_digest(dir / "instances.jsonl");
  io::write_json(dir / "manifest.json", manifest);
}

inline std::vector<CorpusRecord> read_corpus(const std::filesystem::path& file) {
  std::vector<CorpusRecord> out;
  for (const auto& j : io::read_jsonl(file)) out.push_back(corpus_record_from_json(j));
  return out;
}

}  // namespace star
