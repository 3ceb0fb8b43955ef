#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "star/errors.hpp"

namespace star {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

inline constexpr EntityId kNoEntity = std::numeric_limits<EntityId>::max();
// Reserved "End of Path" relation. Never stored in a graph's triple set.
inline constexpr RelationId kEopRelation = std::numeric_limits<RelationId>::max();

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kQspToken = "[QSP]";
inline constexpr std::string_view kPspToken = "[PSP]";
inline constexpr std::string_view kEopToken = "[EOP]";
inline constexpr std::array<std::string_view, 5> kReservedTokens = {kSepToken, kQspToken, kPspToken,
                                                                    kEopToken, kClsToken};

inline bool contains_reserved_token(std::string_view text) {
  for (auto tok : kReservedTokens)
    if (text.find(tok) != std::string_view::npos) return true;
  return false;
}

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  auto operator<=>(const Triple&) const = default;
};

struct Edge {
  RelationId relation;
  EntityId tail;
  auto operator<=>(const Edge&) const = default;
};

// One step of a path. The terminal [EOP] hop carries kNoEntity; negative paths
// produced by relation perturbation may also leave the last entity unbound.
struct Hop {
  RelationId relation;
  EntityId entity;
  auto operator<=>(const Hop&) const = default;
};

struct Path {
  EntityId topic = kNoEntity;
  std::vector<Hop> hops;

  bool terminated() const { return !hops.empty() && hops.back().relation == kEopRelation; }

  // Hop count, not counting a terminal [EOP].
  std::size_t length() const { return hops.size() - (terminated() ? 1 : 0); }

  // Entity at the end of the path (the topic for zero-hop paths).
  EntityId frontier() const {
    for (auto it = hops.rbegin(); it != hops.rend(); ++it)
      if (it->relation != kEopRelation) return it->entity;
    return topic;
  }

  Path extended(RelationId relation, EntityId entity = kNoEntity) const {
    Path p = *this;
    p.hops.push_back({relation, entity});
    return p;
  }

  Path terminated_copy() const { return extended(kEopRelation, kNoEntity); }

  Path prefix(std::size_t n) const {
    Path p;
    p.topic = topic;
    p.hops.assign(hops.begin(), hops.begin() + static_cast<std::ptrdiff_t>(std::min(n, hops.size())));
    return p;
  }

  auto operator<=>(const Path&) const = default;
};

class KnowledgeGraph;

// Collects string triples and produces an immutable graph whose entity and
// relation ids follow lexicographic order of their names.
class GraphBuilder {
 public:
  void add_triple(std::string head, std::string relation, std::string tail, std::size_t line = 0) {
    check_name(head, "entity", line);
    check_name(relation, "relation", line);
    check_name(tail, "entity", line);
    triples_.push_back({std::move(head), std::move(relation), std::move(tail)});
  }

  // Registers an entity (possibly isolated) with an optional display label.
  void add_entity(std::string id, std::string label = {}) {
    check_name(id, "entity", 0);
    if (!label.empty()) {
      if (contains_reserved_token(label))
        throw IngestError("label '" + label + "' contains a reserved token");
      labels_[id] = std::move(label);
    }
    extra_entities_.push_back(std::move(id));
  }

  KnowledgeGraph build() &&;

 private:
  static void check_name(const std::string& name, const char* kind, std::size_t line) {
    if (name.empty()) throw IngestError(std::string("empty ") + kind + " id", line);
    if (contains_reserved_token(name))
      throw IngestError(std::string(kind) + " '" + name + "' contains a reserved token", line);
  }

  struct StringTriple {
    std::string head, relation, tail;
  };
  std::vector<StringTriple> triples_;
  std::vector<std::string> extra_entities_;
  std::unordered_map<std::string, std::string> labels_;
};

class KnowledgeGraph {
 public:
  std::size_t entity_count() const { return entity_ids_.size(); }
  std::size_t relation_count() const { return relation_ids_.size(); }
  std::size_t triple_count() const { return triples_.size(); }
  std::size_t adjacency_size() const { return edges_.size(); }

  std::optional<EntityId> find_entity(std::string_view id) const {
    auto it = std::lower_bound(entity_ids_.begin(), entity_ids_.end(), id);
    if (it == entity_ids_.end() || *it != id) return std::nullopt;
    return static_cast<EntityId>(it - entity_ids_.begin());
  }

  EntityId entity(std::string_view id) const {
    if (auto e = find_entity(id)) return *e;
    throw LookupError("unknown entity '" + std::string(id) + "'");
  }

  std::optional<RelationId> find_relation(std::string_view id) const {
    if (id == kEopToken) return kEopRelation;
    auto it = std::lower_bound(relation_ids_.begin(), relation_ids_.end(), id);
    if (it == relation_ids_.end() || *it != id) return std::nullopt;
    return static_cast<RelationId>(it - relation_ids_.begin());
  }

  RelationId relation(std::string_view id) const {
    if (auto r = find_relation(id)) return *r;
    throw LookupError("unknown relation '" + std::string(id) + "'");
  }

  const std::string& entity_id(EntityId e) const {
    check_entity(e);
    return entity_ids_[e];
  }

  const std::string& entity_label(EntityId e) const {
    check_entity(e);
    return labels_[e];
  }

  const std::string& relation_name(RelationId r) const {
    static const std::string eop(kEopToken);
    if (r == kEopRelation) return eop;
    if (r >= relation_ids_.size()) throw LookupError("relation id out of range");
    return relation_ids_[r];
  }

  std::span<const std::string> relation_names() const { return relation_ids_; }
  std::span<const std::string> entity_ids() const { return entity_ids_; }
  std::span<const Triple> triples() const { return triples_; }

  // Outgoing (relation, tail) pairs of e, sorted by relation then tail.
  std::span<const Edge> out_edges(EntityId e) const {
    check_entity(e);
    return std::span<const Edge>(edges_).subspan(offsets_[e], offsets_[e + 1] - offsets_[e]);
  }

  // Distinct relations on outgoing triples of e, in lexicographic order.
  std::vector<RelationId> relations_of(EntityId e) const {
    std::vector<RelationId> out;
    for (const Edge& edge : out_edges(e))
      if (out.empty() || out.back() != edge.relation) out.push_back(edge.relation);
    return out;
  }

  std::vector<EntityId> tails(EntityId e, RelationId r) const {
    auto edges = out_edges(e);
    auto lo = std::lower_bound(edges.begin(), edges.end(), Edge{r, 0});
    std::vector<EntityId> out;
    for (auto it = lo; it != edges.end() && it->relation == r; ++it) out.push_back(it->tail);
    return out;
  }

  bool has_triple(EntityId h, RelationId r, EntityId t) const {
    auto edges = out_edges(h);
    return std::binary_search(edges.begin(), edges.end(), Edge{r, t});
  }

  // Checks the path invariant: every hop is a triple, except a final [EOP].
  // Unbound entities are accepted on the last hop only when allow_unbound_tail.
  bool is_valid(const Path& p, bool allow_unbound_tail = false) const {
    if (p.topic >= entity_count()) return false;
    EntityId cur = p.topic;
    for (std::size_t i = 0; i < p.hops.size(); ++i) {
      const Hop& hop = p.hops[i];
      bool last = i + 1 == p.hops.size();
      if (hop.relation == kEopRelation) return last && hop.entity == kNoEntity;
      if (hop.relation >= relation_count()) return false;
      if (hop.entity == kNoEntity) return last && allow_unbound_tail;
      if (!has_triple(cur, hop.relation, hop.entity)) return false;
      cur = hop.entity;
    }
    return true;
  }

 private:
  friend class GraphBuilder;

  void check_entity(EntityId e) const {
    if (e >= entity_ids_.size()) throw LookupError("entity id out of range");
  }

  std::vector<std::string> entity_ids_;
  std::vector<std::string> labels_;
  std::vector<std::string> relation_ids_;
  std::vector<Triple> triples_;
  std::vector<std::size_t> offsets_{0};
  std::vector<Edge> edges_;
};

inline KnowledgeGraph GraphBuilder::build() && {
  KnowledgeGraph g;
  std::vector<std::string> entities = extra_entities_;
  std::vector<std::string> relations;
  for (const auto& t : triples_) {
    entities.push_back(t.head);
    entities.push_back(t.tail);
    relations.push_back(t.relation);
  }
  std::sort(entities.begin(), entities.end());
  entities.erase(std::unique(entities.begin(), entities.end()), entities.end());
  std::sort(relations.begin(), relations.end());
  relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
  g.entity_ids_ = std::move(entities);
  g.relation_ids_ = std::move(relations);

  g.labels_.reserve(g.entity_ids_.size());
  for (const auto& id : g.entity_ids_) {
    auto it = labels_.find(id);
    g.labels_.push_back(it == labels_.end() ? id : it->second);
  }

  g.triples_.reserve(triples_.size());
  for (const auto& t : triples_)
    g.triples_.push_back({*g.find_entity(t.head), *g.find_relation(t.relation), *g.find_entity(t.tail)});
  std::sort(g.triples_.begin(), g.triples_.end());
  g.triples_.erase(std::unique(g.triples_.begin(), g.triples_.end()), g.triples_.end());

  // Triples are sorted by head, so the CSR index falls out of one pass.
  g.offsets_.assign(g.entity_ids_.size() + 1, 0);
  g.edges_.reserve(g.triples_.size());
  for (const Triple& t : g.triples_) {
    ++g.offsets_[t.head + 1];
    g.edges_.push_back({t.relation, t.tail});
  }
  for (std::size_t i = 1; i < g.offsets_.size(); ++i) g.offsets_[i] += g.offsets_[i - 1];

  triples_.clear();
  extra_entities_.clear();
  labels_.clear();
  return g;
}

namespace detail {

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    fields.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace detail

// Reads `head<TAB>relation<TAB>tail` lines. Blank and '#' lines are skipped.
inline KnowledgeGraph load_graph(std::istream& in) {
  GraphBuilder builder;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      throw IngestError("expected 3 tab-separated fields, got " + std::to_string(fields.size()), line_no);
    builder.add_triple(std::move(fields[0]), std::move(fields[1]), std::move(fields[2]), line_no);
  }
  return std::move(builder).build();
}

inline KnowledgeGraph load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open triple file " + path.string());
  try {
    return load_graph(in);
  } catch (const IngestError& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

inline void write_graph(const KnowledgeGraph& g, std::ostream& out) {
  for (const Triple& t : g.triples())
    out << g.entity_id(t.head) << '\t' << g.relation_name(t.relation) << '\t' << g.entity_id(t.tail) << '\n';
}

namespace detail {

// Forward BFS distances from the sources, stopping at max_depth.
inline std::vector<int> bfs_depths(const KnowledgeGraph& g, std::span<const EntityId> sources, std::size_t max_depth) {
  std::vector<int> dist(g.entity_count(), -1);
  std::vector<EntityId> frontier;
  for (EntityId s : sources) {
    if (dist[s] < 0) {
      dist[s] = 0;
      frontier.push_back(s);
    }
  }
  for (std::size_t depth = 0; depth < max_depth && !frontier.empty(); ++depth) {
    std::vector<EntityId> next;
    for (EntityId u : frontier) {
      for (const Edge& e : g.out_edges(u)) {
        if (dist[e.tail] < 0) {
          dist[e.tail] = static_cast<int>(depth + 1);
          next.push_back(e.tail);
        }
      }
    }
    frontier = std::move(next);
  }
  return dist;
}

inline std::vector<std::string_view> signature_names(const KnowledgeGraph& g, const Path& p) {
  std::vector<std::string_view> out;
  for (const Hop& h : p.hops)
    if (h.relation != kEopRelation) out.push_back(g.relation_name(h.relation));
  return out;
}

}  // namespace detail

// All minimal-length paths (<= max_hop) from topic to any answer, ordered by
// relation signature, then by entity ids.
inline std::vector<Path> shortest_paths(const KnowledgeGraph& g, EntityId topic, std::span<const EntityId> answers,
                                        std::size_t max_hop) {
  if (max_hop < 1) throw ValidationError("max_hop must be >= 1");
  g.entity_id(topic);
  std::vector<char> is_answer(g.entity_count(), 0);
  for (EntityId a : answers) {
    g.entity_id(a);
    is_answer[a] = 1;
  }
  if (is_answer[topic]) return {Path{topic, {}}};

  const EntityId src[] = {topic};
  auto dist = detail::bfs_depths(g, src, max_hop);
  int best = -1;
  for (EntityId a : answers)
    if (dist[a] > 0 && (best < 0 || dist[a] < best)) best = dist[a];
  if (best < 0) return {};

  // good[v]: v lies on some layered route that ends at an answer at depth `best`.
  std::vector<char> good(g.entity_count(), 0);
  std::vector<std::vector<EntityId>> levels(static_cast<std::size_t>(best) + 1);
  for (EntityId v = 0; v < g.entity_count(); ++v)
    if (dist[v] >= 0 && dist[v] <= best) levels[static_cast<std::size_t>(dist[v])].push_back(v);
  for (EntityId v : levels[static_cast<std::size_t>(best)]) good[v] = is_answer[v];
  for (int k = best - 1; k >= 0; --k) {
    for (EntityId u : levels[static_cast<std::size_t>(k)]) {
      for (const Edge& e : g.out_edges(u)) {
        if (dist[e.tail] == k + 1 && good[e.tail]) {
          good[u] = 1;
          break;
        }
      }
    }
  }

  std::vector<Path> out;
  Path cur{topic, {}};
  auto dfs = [&](auto&& self, EntityId u) -> void {
    if (static_cast<int>(cur.hops.size()) == best) {
      out.push_back(cur);
      return;
    }
    for (const Edge& e : g.out_edges(u)) {
      if (dist[e.tail] != dist[u] + 1 || !good[e.tail]) continue;
      cur.hops.push_back({e.relation, e.tail});
      self(self, e.tail);
      cur.hops.pop_back();
    }
  };
  dfs(dfs, topic);

  std::sort(out.begin(), out.end(), [](const Path& a, const Path& b) {
    // relation ids are assigned in lexicographic name order
    for (std::size_t i = 0; i < a.hops.size(); ++i)
      if (a.hops[i].relation != b.hops[i].relation) return a.hops[i].relation < b.hops[i].relation;
    for (std::size_t i = 0; i < a.hops.size(); ++i)
      if (a.hops[i].entity != b.hops[i].entity) return a.hops[i].entity < b.hops[i].entity;
    return false;
  });
  return out;
}

// Induced graph of every triple reachable within `hops` forward hops of a topic.
inline KnowledgeGraph extract_subgraph(const KnowledgeGraph& g, std::span<const EntityId> topics, std::size_t hops) {
  if (hops < 1) throw ValidationError("hops must be >= 1");
  if (topics.empty()) throw ValidationError("extract_subgraph needs at least one topic");
  for (EntityId t : topics) g.entity_id(t);
  auto dist = detail::bfs_depths(g, topics, hops);
  GraphBuilder builder;
  for (EntityId t : topics) builder.add_entity(g.entity_id(t), g.entity_label(t));
  for (const Triple& t : g.triples()) {
    if (dist[t.head] >= 0 && static_cast<std::size_t>(dist[t.head]) < hops) {
      builder.add_triple(g.entity_id(t.head), g.relation_name(t.relation), g.entity_id(t.tail));
      builder.add_entity(g.entity_id(t.head), g.entity_label(t.head));
      builder.add_entity(g.entity_id(t.tail), g.entity_label(t.tail));
    }
  }
  return std::move(builder).build();
}

inline KnowledgeGraph extract_subgraph(const KnowledgeGraph& g, std::span<const std::string> topics, std::size_t hops) {
  std::vector<EntityId> ids;
  for (const auto& t : topics) {
    auto e = g.find_entity(t);
    if (!e) throw LookupError("topic entity '" + t + "' is not in the graph");
    ids.push_back(*e);
  }
  return extract_subgraph(g, ids, hops);
}

// "topic [SEP] r1 [SEP] r2 ..." with [EOP] rendered literally.
inline std::string serialize_path(const KnowledgeGraph& g, const Path& p) {
  std::string out = g.entity_label(p.topic);
  for (const Hop& h : p.hops) {
    out += ' ';
    out += kSepToken;
    out += ' ';
    out += g.relation_name(h.relation);
  }
  return out;
}

struct ParsedPath {
  std::string topic;
  std::vector<std::string> relations;  // may end with "[EOP]"
  bool terminated() const { return !relations.empty() && relations.back() == kEopToken; }
  auto operator<=>(const ParsedPath&) const = default;
};

// Inverse of serialize_path at the text level.
inline ParsedPath parse_path(std::string_view text) {
  static const std::string delim = " " + std::string(kSepToken) + " ";
  ParsedPath out;
  std::size_t pos = text.find(delim);
  out.topic = std::string(text.substr(0, pos));
  while (pos != std::string_view::npos) {
    std::size_t start = pos + delim.size();
    pos = text.find(delim, start);
    out.relations.emplace_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
  }
  return out;
}

inline std::string join_signature(std::span<const std::string_view> relations) {
  std::string out;
  for (std::size_t i = 0; i < relations.size(); ++i) {
    if (i) {
      out += ' ';
      out += kSepToken;
      out += ' ';
    }
    out += relations[i];
  }
  return out;
}

// Topic-free relation sequence, [EOP] excluded, joined with " [SEP] ".
inline std::string relation_signature(const KnowledgeGraph& g, const Path& p) {
  auto names = detail::signature_names(g, p);
  return join_signature(names);
}

inline std::string relation_signature(std::string_view serialized) {
  ParsedPath parsed = parse_path(serialized);
  std::vector<std::string_view> names;
  for (const auto& r : parsed.relations)
    if (r != kEopToken) names.push_back(r);
  return join_signature(names);
}

}  // namespace star
