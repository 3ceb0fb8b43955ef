#pragma once

#include <algorithm>
#include <chrono>
#include <exception>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/mining.hpp"
#include "star/path_scorer.hpp"

namespace star {

struct InferenceConfig {
  std::size_t beam_width = 3;  // B: relations kept per expanded item
  std::size_t top_k = 3;       // K: finished paths passed to the generator
  std::size_t max_hop = 2;     // H
  // Items admitted per hop level per topic; 0 disables the cap.
  std::size_t max_frontier = 0;
  std::string llm_client = "mock";

  void validate() const {
    if (beam_width < 1 || top_k < 1 || max_hop < 1) throw ValidationError("beam width, top-k and max hop must be >= 1");
  }
};

inline io::json to_json(const InferenceConfig& c) {
  return {{"beam_width", c.beam_width}, {"top_k", c.top_k}, {"max_hop", c.max_hop},
          {"max_frontier", c.max_frontier}, {"llm_client", c.llm_client}};
}

inline InferenceConfig inference_config_from_json(const io::json& j) {
  InferenceConfig c;
  c.beam_width = j.value("beam_width", c.beam_width);
  c.top_k = j.value("top_k", c.top_k);
  c.max_hop = j.value("max_hop", c.max_hop);
  c.max_frontier = j.value("max_frontier", c.max_frontier);
  c.llm_client = j.value("llm_client", c.llm_client);
  return c;
}

struct ScoredPath {
  Path path;
  double score = 0;
  std::string text;  // serialize_path(path)
};

struct ScoredBeamItem {
  EntityId entity;
  Path path;
  double score;
  std::string text;
};

namespace detail {

// Descending score, then ascending serialization, then entity ids.
inline bool ranks_before(double sa, const std::string& ta, const Path& pa, double sb, const std::string& tb,
                         const Path& pb) {
  if (sa != sb) return sa > sb;
  if (ta != tb) return ta < tb;
  return pa < pb;
}

struct BeamOrder {
  bool operator()(const ScoredBeamItem& a, const ScoredBeamItem& b) const {
    // priority_queue pops the largest; "largest" = ranks first
    return ranks_before(b.score, b.text, b.path, a.score, a.text, a.path);
  }
};

}  // namespace detail

inline void sort_ranked(std::vector<ScoredPath>& paths) {
  std::sort(paths.begin(), paths.end(), [](const ScoredPath& a, const ScoredPath& b) {
    return detail::ranks_before(a.score, a.text, a.path, b.score, b.text, b.path);
  });
}

// Best-first expansion from every topic. Each popped item scores its extensions
// by every outgoing relation plus [EOP] and keeps the top B; [EOP] finishes a
// path, other relations enqueue one item per tail. Items at H hops finish.
inline std::vector<ScoredPath> beam_search(const KnowledgeGraph& g, std::string_view query,
                                           std::span<const EntityId> topics, const PathScorer& scorer,
                                           const InferenceConfig& cfg) {
  cfg.validate();
  std::vector<EntityId> roots(topics.begin(), topics.end());
  for (EntityId t : roots) g.entity_id(t);
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end()), roots.end());

  std::vector<ScoredPath> finished;
  for (EntityId root : roots) {
    std::priority_queue<ScoredBeamItem, std::vector<ScoredBeamItem>, detail::BeamOrder> queue;
    std::vector<std::size_t> admitted(cfg.max_hop + 1, 0);
    Path start{root, {}};
    queue.push({root, start, 1.0, serialize_path(g, start)});
    while (!queue.empty()) {
      ScoredBeamItem item = queue.top();
      queue.pop();
      if (item.path.length() >= cfg.max_hop) {
        finished.push_back({std::move(item.path), item.score, std::move(item.text)});
        continue;
      }
      std::vector<RelationId> candidates = g.relations_of(item.entity);
      candidates.push_back(kEopRelation);
      std::vector<std::string> texts;
      texts.reserve(candidates.size());
      for (RelationId r : candidates) texts.push_back(serialize_path(g, item.path.extended(r)));
      const std::vector<double> scores = scorer.score_batch(query, texts);

      std::vector<std::size_t> order(candidates.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return texts[a] < texts[b];
      });
      order.resize(std::min(order.size(), cfg.beam_width));

      for (std::size_t i : order) {
        const RelationId r = candidates[i];
        if (r == kEopRelation) {
          finished.push_back({item.path.terminated_copy(), scores[i], texts[i]});
          continue;
        }
        for (EntityId tail : g.tails(item.entity, r)) {
          Path child = item.path.extended(r, tail);
          const std::size_t level = child.length();
          if (cfg.max_frontier && admitted[level] >= cfg.max_frontier) continue;
          ++admitted[level];
          queue.push({tail, std::move(child), scores[i], texts[i]});
        }
      }
    }
  }
  sort_ranked(finished);
  return finished;
}

inline std::vector<ScoredPath> beam_search(const KnowledgeGraph& g, const QueryRecord& q, const PathScorer& scorer,
                                           const InferenceConfig& cfg) {
  return beam_search(g, q.question, resolve_entities(g, q.topics, q.qid, "topic"), scorer, cfg);
}

// The k best finished paths; duplicates by (topic, signature, terminal entity)
// keep their best-ranked copy.
inline std::vector<ScoredPath> topk_select(const KnowledgeGraph& g, std::vector<ScoredPath> finished, std::size_t k) {
  if (finished.empty()) throw ValidationError("no finished paths to select from");
  if (k < 1) throw ValidationError("k must be >= 1");
  sort_ranked(finished);
  std::set<std::tuple<EntityId, std::string, EntityId>> seen;
  std::vector<ScoredPath> out;
  for (auto& p : finished) {
    if (out.size() == k) break;
    if (seen.emplace(p.path.topic, relation_signature(g, p.path), p.path.frontier()).second) out.push_back(std::move(p));
  }
  return out;
}

struct DecodingParams {
  double temperature = 0.0;
  std::size_t max_tokens = 64;
  double timeout_seconds = 60.0;
};

// A retrieved path as handed to the generator.
struct PathContext {
  std::string serialization;
  std::string chain;  // topic -> relation -> entity -> ...
  std::string terminal_label;
};

struct GenerationRequest {
  std::string prompt;
  DecodingParams params;
  std::vector<PathContext> paths;
};

struct GenerationResponse {
  std::string text;
  double latency_seconds = 0;
};

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string id() const = 0;
  virtual GenerationResponse generate(const GenerationRequest& request) = 0;
};

// Deterministic stand-in: answers with the terminal entity of the first path.
class MockGenerator final : public GeneratorClient {
 public:
  std::string id() const override { return "mock"; }
  GenerationResponse generate(const GenerationRequest& request) override {
    const auto start = std::chrono::steady_clock::now();
    if (request.paths.empty()) throw GenerationError("mock generator received no paths", 0.0);
    GenerationResponse r;
    r.text = request.paths.front().terminal_label;
    r.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  }
};

inline constexpr std::string_view kPromptTemplateVersion = "star-answer-v1";

inline std::string path_chain(const KnowledgeGraph& g, const Path& p) {
  std::string out = g.entity_label(p.topic);
  for (const Hop& h : p.hops) {
    if (h.relation == kEopRelation) break;
    out += " -> " + g.relation_name(h.relation);
    if (h.entity != kNoEntity) out += " -> " + g.entity_label(h.entity);
  }
  return out;
}

inline PathContext path_context(const KnowledgeGraph& g, const Path& p) {
  return {serialize_path(g, p), path_chain(g, p), g.entity_label(p.frontier())};
}

inline std::string render_prompt(std::string_view question, std::span<const PathContext> paths) {
  std::string out = "Question: ";
  out += question;
  out += "\nReasoning paths:\n";
  for (std::size_t i = 0; i < paths.size(); ++i) out += std::to_string(i + 1) + ". " + paths[i].chain + "\n";
  out += "Answer the question using the most relevant reasoning path above. Reply with the answer entity only.";
  return out;
}

struct GenerationResult {
  std::string answer;
  std::vector<std::string> supporting_paths;
  double latency_seconds = 0;
};

inline GenerationResult generate_answer(GeneratorClient& llm, std::string_view query, const KnowledgeGraph& g,
                                        std::span<const Path> paths, const DecodingParams& params = {}) {
  if (paths.empty()) throw ValidationError("generate_answer needs at least one path");
  GenerationRequest req;
  req.params = params;
  for (const Path& p : paths) req.paths.push_back(path_context(g, p));
  req.prompt = render_prompt(query, req.paths);
  const auto start = std::chrono::steady_clock::now();
  auto since = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  GenerationResponse resp;
  try {
    resp = llm.generate(req);
  } catch (const GenerationError&) {
    throw;
  } catch (const std::exception& e) {
    throw GenerationError(llm.id() + " failed: " + e.what(), since());
  }
  if (resp.text.empty()) throw GenerationError(llm.id() + " returned an empty answer", since());
  GenerationResult out;
  out.answer = std::move(resp.text);
  for (const auto& c : req.paths) out.supporting_paths.push_back(c.serialization);
  out.latency_seconds = resp.latency_seconds;
  return out;
}

struct RetrievalOutcome {
  std::string qid;
  std::vector<ScoredPath> paths;  // top-K, best first
  GenerationResult generation;
  double retrieval_seconds = 0;  // beam search + top-K selection only
};

inline RetrievalOutcome retrieve_and_answer(const KnowledgeGraph& g, const QueryRecord& q, const PathScorer& scorer,
                                            GeneratorClient& llm, const InferenceConfig& cfg,
                                            const DecodingParams& params = {}) {
  RetrievalOutcome out;
  out.qid = q.qid;
  const auto start = std::chrono::steady_clock::now();
  out.paths = topk_select(g, beam_search(g, q, scorer, cfg), cfg.top_k);
  out.retrieval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::vector<Path> paths;
  for (const auto& p : out.paths) paths.push_back(p.path);
  out.generation = generate_answer(llm, q.question, g, paths, params);
  return out;
}

inline io::json to_json(const RetrievalOutcome& r) {
  io::json paths = io::json::array();
  io::json scores = io::json::array();
  for (const auto& p : r.paths) {
    paths.push_back(p.text);
    scores.push_back(p.score);
  }
  return {{"qid", r.qid},
          {"paths", paths},
          {"scores", scores},
          {"answer", r.generation.answer},
          {"rt_seconds", r.retrieval_seconds},
          {"generation_seconds", r.generation.latency_seconds}};
}

}  // namespace star
