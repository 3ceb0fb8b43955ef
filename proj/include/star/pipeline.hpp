#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "star/beam_search.hpp"
#include "star/config.hpp"
#include "star/errors.hpp"
#include "star/eval.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/log.hpp"
#include "star/mining.hpp"
#include "star/scorer.hpp"
#include "star/similarity.hpp"
#include "star/synth.hpp"
#include "star/training.hpp"

namespace star {

namespace fs = std::filesystem;

// Builds the generator named by the config. Only "mock" is available without
// linking the HTTP client; tools/ registers the HTTP backend.
using GeneratorFactory = std::function<std::unique_ptr<GeneratorClient>(const LlmConfig&)>;

inline std::unique_ptr<GeneratorClient> default_generator(const LlmConfig& cfg) {
  if (cfg.client == "mock") return std::make_unique<MockGenerator>();
  throw ValidationError("llm client '" + cfg.client + "' is not available in this build");
}

namespace detail {

inline io::json stage_manifest(const RunConfig& cfg, std::string_view stage, io::json extra = io::json::object()) {
  io::json m = {{"stage", stage}, {"seed", cfg.seed}, {"config_digest", config_digest(cfg)}, {"config", to_json(cfg)}};
  m.update(extra);
  return m;
}

inline std::vector<QueryRecord> read_queries(const fs::path& file) {
  std::vector<QueryRecord> out;
  std::set<std::string> qids;
  std::size_t line = 0;
  for (const auto& j : io::read_jsonl(file)) {
    ++line;
    QueryRecord q;
    try {
      q = query_from_json(j);
    } catch (const IngestError& e) {
      throw IngestError(file.string() + ": " + e.what(), line);
    }
    if (!qids.insert(q.qid).second) throw IngestError(file.string() + ": duplicate qid " + q.qid, line);
    out.push_back(std::move(q));
  }
  return out;
}

inline void write_queries(const fs::path& file, const std::vector<QueryRecord>& queries) {
  std::vector<io::json> lines;
  for (const auto& q : queries) lines.push_back(to_json(q));
  io::write_jsonl(file, lines);
}

// Triples plus a list of every entity, so isolated topics and answers survive.
inline void write_graph_files(const fs::path& dir, const KnowledgeGraph& g) {
  std::ostringstream os;
  write_graph(g, os);
  io::write_text(dir / "graph.tsv", os.str());
  std::string entities;
  for (EntityId e = 0; e < g.entity_count(); ++e) entities += g.entity_id(e) + "\n";
  io::write_text(dir / "entities.txt", entities);
}

inline KnowledgeGraph read_graph_files(const fs::path& dir) {
  const KnowledgeGraph triples = load_graph_file(dir / "graph.tsv");
  GraphBuilder b;
  for (const auto& t : triples.triples())
    b.add_triple(triples.entity_id(t.head), triples.relation_name(t.relation), triples.entity_id(t.tail));
  std::istringstream in(io::read_text(dir / "entities.txt"));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) b.add_entity(line);
  return std::move(b).build();
}

inline std::vector<QueryRecord> with_split(const std::vector<QueryRecord>& qs, std::string_view split) {
  std::vector<QueryRecord> out;
  for (const auto& q : qs)
    if (q.split == split) out.push_back(q);
  return out;
}

}  // namespace detail

// Ingested artifacts, as later stages see them.
struct Dataset {
  KnowledgeGraph graph;
  std::vector<QueryRecord> queries;
};

inline Dataset load_ingested(const RunConfig& cfg) {
  const fs::path dir = cfg.stage_dir("ingest");
  io::require_file(dir / "graph.tsv", "ingest");
  io::require_file(dir / "entities.txt", "ingest");
  io::require_file(dir / "qa.jsonl", "ingest");
  return {detail::read_graph_files(dir), detail::read_queries(dir / "qa.jsonl")};
}

inline SynthCheck cmd_synth(const RunConfig& cfg) {
  const fs::path dir = cfg.stage_dir("synth");
  const SynthCorpus corpus = generate_synthetic(cfg.synth);
  write_synthetic(dir, corpus);
  const HashedBowModel model;
  const SynthCheck check = check_synthetic(corpus, model);
  if (check.distractor_win_rate() < 0.9)
    log_warn("synthetic distractors outscore the gold path for only " +
             std::to_string(100 * check.distractor_win_rate()) + "% of queries");
  io::json counts = corpus.type_counts;
  io::write_json(dir / "manifest.json",
                 detail::stage_manifest(cfg, "synth",
                                        {{"self_check", to_json(check)},
                                         {"type_counts", counts},
                                         {"graph_digest", io::file_digest(dir / "graph.tsv")},
                                         {"qa_digest", io::file_digest(dir / "qa.jsonl")}}));
  log_info("synth: " + std::to_string(corpus.queries.size()) + " queries, " + std::to_string(corpus.triples.size()) +
           " triples -> " + dir.string());
  return check;
}

struct IngestStats {
  std::map<std::string, std::size_t> split_sizes;
  // shortest topic-to-answer hop count; key max_hop + 1 means "further or unreachable"
  std::map<std::size_t, std::size_t> hop_distribution;
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
};

// Loads the raw graph and QA file, checks entity resolution, and keeps the
// union of every query's max_hop neighbourhood.
inline IngestStats cmd_ingest(const RunConfig& cfg) {
  const fs::path graph_file = cfg.resolved_graph_file();
  const fs::path qa_file = cfg.resolved_qa_file();
  io::require_file(graph_file, cfg.graph_file.empty() ? "synth" : "the graph file");
  io::require_file(qa_file, cfg.qa_file.empty() ? "synth" : "the QA file");
  const KnowledgeGraph full = load_graph_file(graph_file);
  const auto queries = detail::read_queries(qa_file);

  std::vector<std::string> unresolved;
  std::set<std::string> topic_ids;
  for (const auto& q : queries) {
    for (const auto* list : {&q.topics, &q.answers})
      for (const auto& id : *list)
        if (!full.find_entity(id)) unresolved.push_back(q.qid + ":" + id);
    topic_ids.insert(q.topics.begin(), q.topics.end());
  }
  if (!unresolved.empty()) {
    std::string msg = "unresolved entities (qid:entity):";
    for (const auto& u : unresolved) msg += " " + u;
    throw IngestError(msg);
  }

  const std::vector<std::string> topics(topic_ids.begin(), topic_ids.end());
  KnowledgeGraph local = extract_subgraph(full, topics, cfg.mining.max_hop);
  // answers outside every neighbourhood still need to resolve in later stages
  GraphBuilder b;
  for (const auto& t : local.triples())
    b.add_triple(local.entity_id(t.head), local.relation_name(t.relation), local.entity_id(t.tail));
  for (const auto& id : topics) b.add_entity(id);
  for (const auto& q : queries)
    for (const auto& a : q.answers) b.add_entity(a);
  const KnowledgeGraph g = std::move(b).build();

  IngestStats stats;
  stats.entities = g.entity_count();
  stats.relations = g.relation_count();
  stats.triples = g.triples().size();
  for (const auto& q : queries) {
    ++stats.split_sizes[q.split];
    std::size_t best = cfg.mining.max_hop + 1;
    const auto answers = resolve_entities(g, q.answers, q.qid, "answer");
    for (EntityId t : resolve_entities(g, q.topics, q.qid, "topic")) {
      auto paths = shortest_paths(g, t, answers, cfg.mining.max_hop);
      if (!paths.empty()) best = std::min(best, paths.front().length());
    }
    ++stats.hop_distribution[best];
  }

  const fs::path dir = cfg.stage_dir("ingest");
  detail::write_graph_files(dir, g);
  detail::write_queries(dir / "qa.jsonl", queries);
  io::json hops = io::json::object();
  for (const auto& [h, n] : stats.hop_distribution)
    hops[h > cfg.mining.max_hop ? ">" + std::to_string(cfg.mining.max_hop) : std::to_string(h)] = n;
  io::write_json(dir / "manifest.json", detail::stage_manifest(cfg, "ingest",
                                                               {{"max_hop", cfg.mining.max_hop},
                                                                {"split_sizes", stats.split_sizes},
                                                                {"hop_distribution", hops},
                                                                {"entities", stats.entities},
                                                                {"relations", stats.relations},
                                                                {"triples", stats.triples},
                                                                {"source_graph_digest", io::file_digest(graph_file)},
                                                                {"source_qa_digest", io::file_digest(qa_file)},
                                                                {"graph_digest", io::file_digest(dir / "graph.tsv")}}));
  std::string sizes;
  for (const auto& [split, n] : stats.split_sizes) sizes += " " + split + "=" + std::to_string(n);
  log_info("ingest: " + std::to_string(queries.size()) + " queries (" + (sizes.empty() ? " none" : sizes) + " ), " +
           std::to_string(stats.triples) + " triples within " + std::to_string(cfg.mining.max_hop) + " hops");
  return stats;
}

// Relation signatures of the mined positive paths, one count per (query, path).
inline std::map<std::string, std::size_t> training_path_counts(std::span<const CorpusRecord> corpus) {
  std::set<std::pair<std::string, std::string>> seen;
  std::map<std::string, std::size_t> out;
  for (const auto& r : corpus)
    if (seen.emplace(r.qid, r.positive).second) ++out[relation_signature(r.positive)];
  return out;
}

inline TrainingSet cmd_mine(const RunConfig& cfg) {
  const Dataset data = load_ingested(cfg);
  const auto train_q = detail::with_split(data.queries, "train");
  const HashedBowModel model;
  const TrainingSet set = build_training_set(train_q, data.graph, model, cfg.mining);
  const fs::path dir = cfg.stage_dir("mine");
  const auto corpus = to_corpus(data.graph, set);
  io::write_json(dir / "counts.json", {{"occurrences", to_json(count_occurrences(corpus))},
                                       {"training_paths", io::json(training_path_counts(corpus))}});
  write_training_set(dir, data.graph, set, cfg.mining, train_q.size(),
                     detail::stage_manifest(cfg, "mine", {{"similarity_backend", model.backend_id()}}));
  log_info("mine: " + std::to_string(set.instances.size()) + " instances from " + std::to_string(train_q.size()) +
           " training queries");
  return set;
}

inline Vocabulary training_vocabulary(const KnowledgeGraph& g, std::span<const CorpusRecord> corpus) {
  const auto names = g.relation_names();
  std::vector<std::string> texts(names.begin(), names.end());
  for (const auto& r : corpus) texts.push_back(r.question);
  return Vocabulary::from_texts(texts);
}

inline TrainResult cmd_train(const RunConfig& cfg) {
  const fs::path mine_dir = cfg.stage_dir("mine");
  io::require_file(mine_dir / "instances.jsonl", "mine");
  const auto corpus = read_corpus(mine_dir / "instances.jsonl");
  const Dataset data = load_ingested(cfg);
  CrossAttentiveScorer scorer(cfg.scorer, training_vocabulary(data.graph, corpus));

  const fs::path dir = cfg.stage_dir("train");
  fs::create_directories(dir);
  std::vector<io::json> log_lines;
  const TrainResult result = train(corpus, cfg.training, scorer, [&](const EpochLog& e) {
    log_lines.push_back(to_json(e));
    log_info("train: epoch " + std::to_string(e.epoch) + " train " + std::to_string(e.train_loss) + " val " +
             std::to_string(e.val_loss));
  });
  io::write_jsonl(dir / "train_log.jsonl", log_lines);

  const std::string corpus_digest = io::file_digest(mine_dir / "instances.jsonl");
  save_checkpoint(dir / "checkpoint.star", scorer,
                  {{"seed", cfg.seed}, {"corpus_digest", corpus_digest}, {"training", to_json(cfg.training)}});
  io::write_json(dir / "manifest.json",
                 detail::stage_manifest(cfg, "train",
                                        {{"corpus_digest", corpus_digest},
                                         {"best_epoch", result.best_epoch},
                                         {"best_val_loss", result.best_val_loss},
                                         {"train_instances", result.train_instances},
                                         {"val_instances", result.val_instances},
                                         {"checkpoint_digest", io::file_digest(dir / "checkpoint.star")}}));
  return result;
}

inline std::vector<RetrievalOutcome> cmd_retrieve(const RunConfig& cfg,
                                                  const GeneratorFactory& make_generator = default_generator) {
  const Dataset data = load_ingested(cfg);
  const HashedBowModel similarity;
  std::unique_ptr<PathScorer> scorer;
  std::string scorer_id = "similarity:" + similarity.backend_id();
  if (cfg.retriever == "star") {
    const fs::path ckpt = cfg.stage_dir("train") / "checkpoint.star";
    io::require_file(ckpt, "train");
    scorer = std::make_unique<CrossAttentiveScorer>(load_checkpoint(ckpt));
    scorer_id = "star:" + io::file_digest(ckpt);
  } else {
    scorer = std::make_unique<SimilarityPathScorer>(similarity);
  }
  auto llm = make_generator(cfg.llm);

  std::vector<RetrievalOutcome> out;
  std::vector<io::json> lines;
  for (const auto& q : detail::with_split(data.queries, cfg.eval_split)) {
    out.push_back(retrieve_and_answer(data.graph, q, *scorer, *llm, cfg.inference, cfg.llm.decoding));
    lines.push_back(to_json(out.back()));
  }
  const fs::path dir = cfg.stage_dir("retrieve");
  io::write_jsonl(dir / "retrievals.jsonl", lines);
  io::write_json(dir / "manifest.json", detail::stage_manifest(cfg, "retrieve",
                                                               {{"scorer", scorer_id},
                                                                {"llm_client", llm->id()},
                                                                {"prompt_template", kPromptTemplateVersion},
                                                                {"split", cfg.eval_split},
                                                                {"queries", out.size()}}));
  log_info("retrieve: " + std::to_string(out.size()) + " " + cfg.eval_split + " queries with " + scorer_id);
  return out;
}

struct Metrics {
  double hits_at_1 = 0;
  double f1 = 0;
  double rt_seconds = 0;
  std::size_t queries = 0;
};

inline std::vector<EvalRecord> read_eval_records(const fs::path& file) {
  std::vector<EvalRecord> out;
  for (const auto& j : io::read_jsonl(file)) out.push_back(eval_record_from_json(j));
  return out;
}

// Deterministic metrics go to metrics.json; wall-clock timing to timing.json.
inline Metrics cmd_evaluate(const RunConfig& cfg) {
  const fs::path rfile = cfg.stage_dir("retrieve") / "retrievals.jsonl";
  io::require_file(rfile, "retrieve");
  const Dataset data = load_ingested(cfg);
  std::map<std::string, const QueryRecord*> by_qid;
  for (const auto& q : data.queries) by_qid[q.qid] = &q;

  std::vector<EvalRecord> records;
  for (const auto& j : io::read_jsonl(rfile)) {
    const std::string qid = j.at("qid").get<std::string>();
    auto it = by_qid.find(qid);
    if (it == by_qid.end()) throw LookupError("retrieval for unknown qid " + qid);
    const auto paths = j.at("paths").get<std::vector<std::string>>();
    records.push_back(make_eval_record(qid, it->second->question, {j.at("answer").get<std::string>()},
                                       it->second->answers, paths.empty() ? std::string{} : paths.front(),
                                       j.at("rt_seconds").get<double>()));
  }
  if (records.empty()) throw ValidationError("no retrievals to evaluate in " + rfile.string());
  Metrics m{hits_at_1(records), f1(records), retrieval_time(records), records.size()};

  const fs::path dir = cfg.stage_dir("evaluate");
  std::vector<io::json> lines;
  for (const auto& r : records) {
    io::json j = to_json(r);
    j.erase("rt_seconds");
    lines.push_back(j);
  }
  io::write_jsonl(dir / "eval_records.jsonl", lines);
  io::write_json(dir / "metrics.json", {{"hits_at_1", m.hits_at_1}, {"f1", m.f1}, {"queries", m.queries}});
  io::write_json(dir / "timing.json", {{"rt_mean_seconds", m.rt_seconds}, {"queries", m.queries}});
  io::write_json(dir / "manifest.json",
                 detail::stage_manifest(cfg, "evaluate", {{"retrievals_digest", io::file_digest(rfile)}}));
  log_info("evaluate: Hits@1 " + std::to_string(m.hits_at_1) + " F1 " + std::to_string(m.f1) + " RT " +
           std::to_string(m.rt_seconds) + "s");
  return m;
}

inline std::map<std::string, std::size_t> read_training_path_counts(const RunConfig& cfg) {
  const fs::path file = cfg.stage_dir("mine") / "counts.json";
  io::require_file(file, "mine");
  return io::read_json(file).at("training_paths").get<std::map<std::string, std::size_t>>();
}

inline BiasReport cmd_diagnose(const RunConfig& cfg) {
  const fs::path efile = cfg.stage_dir("evaluate") / "eval_records.jsonl";
  io::require_file(efile, "evaluate");
  const auto records = read_eval_records(efile);
  const HashedBowModel model;
  const BiasReport report = bias_report(records, model, read_training_path_counts(cfg), cfg.diagnostics);
  const fs::path dir = cfg.stage_dir("diagnose");
  io::write_text(dir / "bias_report.txt", render_bias_report(report));
  io::write_jsonl(dir / "bias_report.jsonl", bias_report_records(report));
  io::write_json(dir / "manifest.json", detail::stage_manifest(cfg, "diagnose",
                                                               {{"similarity_backend", model.backend_id()},
                                                                {"eval_digest", io::file_digest(efile)}}));
  log_info("diagnose: error " + std::to_string(report.error) + "% -> " + (dir / "bias_report.txt").string());
  return report;
}

// ingest through diagnose; synth first when no dataset files are configured.
inline BiasReport run_pipeline(const RunConfig& cfg, const GeneratorFactory& make_generator = default_generator) {
  cfg.validate();
  if (cfg.graph_file.empty() || cfg.qa_file.empty()) cmd_synth(cfg);
  cmd_ingest(cfg);
  cmd_mine(cfg);
  if (cfg.retriever == "star") cmd_train(cfg);
  cmd_retrieve(cfg, make_generator);
  cmd_evaluate(cfg);
  return cmd_diagnose(cfg);
}

}  // namespace star
