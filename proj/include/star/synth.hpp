#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/mining.hpp"
#include "star/similarity.hpp"

namespace star {

// A question intent: its template, the relation chain that answers it, and a
// distractor relation whose name reuses words of the question.
struct QuestionType {
  std::string name;
  std::string question;  // "{}" marks the topic entity
  std::vector<std::string> chain;
  std::string distractor;
};

// Ordered from most to least frequent. Types sharing a first relation form a
// family; the 1-hop member of a family is always more frequent than the
// 2-hop members that extend it.
inline const std::vector<QuestionType>& question_types() {
  static const std::vector<QuestionType> types = {
      {"team", "what team does {} play for", {"sports.pro_athlete.teams"}, "sports.team.play_role"},
      {"employer", "what company does {} work for", {"people.person.employer"}, "business.company.work"},
      {"citizenship", "what country is {} a citizen of", {"people.person.citizenship"}, "people.citizen.country"},
      {"birthplace", "where was {} born", {"people.person.birth_location"}, "people.person.where_born"},
      {"team_country",
       "what country does {} play for",
       {"sports.pro_athlete.teams", "sports.sports_team.location_nation"},
       "people.person.country"},
      {"spouse", "who is the spouse of {}", {"people.person.married_to"}, "people.marriage.spouse"},
      {"employer_founder",
       "who founded the company {} works for",
       {"people.person.employer", "organization.organization.founder_person"},
       "business.company.founded"},
      {"citizenship_language",
       "what language is spoken in the country of {}",
       {"people.person.citizenship", "location.nation.official_tongue"},
       "language.spoken_language.country"},
      {"team_coach",
       "who coaches the team {} plays for",
       {"sports.pro_athlete.teams", "sports.sports_team.head_manager"},
       "sports.team.coaches"},
      {"citizenship_currency",
       "what currency is used in the country of {}",
       {"people.person.citizenship", "location.nation.monetary_unit"},
       "finance.currency.country_used"},
      {"employer_city",
       "what city is the company of {} based in",
       {"people.person.employer", "organization.organization.hq_location"},
       "location.city.company_based"},
      {"team_stadium",
       "what stadium does the team of {} use",
       {"sports.pro_athlete.teams", "sports.sports_team.arena_venue"},
       "sports.stadium.team_use"},
  };
  return types;
}

struct SynthConfig {
  std::size_t queries = 200;
  std::uint64_t seed = 42;
  std::size_t types = 12;  // leading entries of question_types()
  double zipf_exponent = 1.5;
  std::size_t min_per_type = 5;
  std::size_t test_per_type = 3;
  std::size_t confounders = 3;  // other intents attached to each topic

  void validate() const {
    if (types < 1 || types > question_types().size())
      throw ValidationError("synthetic type count must lie in [1, " + std::to_string(question_types().size()) + "]");
    if (min_per_type <= test_per_type) throw ValidationError("min_per_type must exceed test_per_type");
    if (queries < types * min_per_type) throw ValidationError("too few queries for the per-type minimum");
    if (!(zipf_exponent >= 0)) throw ValidationError("zipf exponent must be non-negative");
  }
};

inline io::json to_json(const SynthConfig& c) {
  return {{"queries", c.queries},
          {"seed", c.seed},
          {"types", c.types},
          {"zipf_exponent", c.zipf_exponent},
          {"min_per_type", c.min_per_type},
          {"test_per_type", c.test_per_type},
          {"confounders", c.confounders}};
}

inline SynthConfig synth_config_from_json(const io::json& j) {
  SynthConfig c;
  c.queries = j.value("queries", c.queries);
  c.seed = j.value("seed", c.seed);
  c.types = j.value("types", c.types);
  c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
  c.min_per_type = j.value("min_per_type", c.min_per_type);
  c.test_per_type = j.value("test_per_type", c.test_per_type);
  c.confounders = j.value("confounders", c.confounders);
  return c;
}

struct SynthQuery {
  QueryRecord record;
  std::string type;
  std::string gold_path;        // serialized correct path
  std::string distractor_path;  // serialized shortcut path
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<std::array<std::string, 3>> triples;
  std::vector<SynthQuery> queries;
  std::map<std::string, std::size_t> type_counts;
};

// Per-type query counts: the minimum for every type plus a Zipf-shaped share
// of the remainder (largest remainder rounding, ties to the earlier type).
inline std::vector<std::size_t> zipf_counts(std::size_t total, std::size_t types, double exponent,
                                            std::size_t minimum) {
  std::vector<double> w(types);
  double sum = 0;
  for (std::size_t i = 0; i < types; ++i) sum += w[i] = std::pow(static_cast<double>(i + 1), -exponent);
  const std::size_t rest = total - types * minimum;
  std::vector<std::size_t> counts(types, minimum);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < types; ++i) {
    const double share = static_cast<double>(rest) * w[i] / sum;
    const auto whole = static_cast<std::size_t>(std::floor(share));
    counts[i] += whole;
    assigned += whole;
    remainders.emplace_back(-(share - static_cast<double>(whole)), i);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t i = 0; assigned < rest; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

namespace detail {

inline std::string fill_template(const std::string& tmpl, const std::string& topic) {
  std::string out = tmpl;
  const auto at = out.find("{}");
  out.replace(at, 2, topic);
  return out;
}

inline std::string join_path(const std::string& topic, const std::vector<std::string>& relations) {
  std::string out = topic;
  for (const auto& r : relations) out += std::string(" ") + std::string(kSepToken) + " " + r;
  return out;
}

}  // namespace detail

// Builds a graph in which every query has one correct relation chain from a
// fresh topic entity, a lexically overlapping distractor edge, and the first
// relations of a few other intents. Intermediate entities of a family carry
// every second-hop relation of that family.
inline SynthCorpus generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto& all = question_types();
  const std::vector<QuestionType> types(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.types));
  const auto counts = zipf_counts(cfg.queries, cfg.types, cfg.zipf_exponent, cfg.min_per_type);

  // second-hop relations available at a family's intermediate entity
  std::map<std::string, std::vector<std::string>> family;
  for (const auto& t : types)
    if (t.chain.size() == 2) family[t.chain[0]].push_back(t.chain[1]);

  SynthCorpus corpus;
  corpus.config = cfg;
  std::mt19937_64 rng(splitmix64(cfg.seed));
  std::size_t next_entity = 0;
  auto fresh = [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "e%05zu", next_entity++);
    return std::string(buf);
  };
  auto add = [&](const std::string& h, const std::string& r, const std::string& t) {
    corpus.triples.push_back({h, r, t});
  };
  // Adds first -> entity (plus its family's second hops) and returns the entity
  // and the map from second relation to tail.
  auto add_first_hop = [&](const std::string& topic, const std::string& first) {
    const std::string mid = fresh();
    add(topic, first, mid);
    std::map<std::string, std::string> seconds;
    if (auto it = family.find(first); it != family.end()) {
      for (const auto& r : it->second) {
        const std::string t = fresh();
        add(mid, r, t);
        seconds[r] = t;
      }
    }
    return std::pair{mid, seconds};
  };

  // interleave types so query ids do not reveal the type
  std::vector<std::size_t> schedule;
  for (std::size_t t = 0; t < types.size(); ++t) schedule.insert(schedule.end(), counts[t], t);
  std::shuffle(schedule.begin(), schedule.end(), rng);
  std::vector<std::size_t> seen(types.size(), 0);

  for (std::size_t qi = 0; qi < schedule.size(); ++qi) {
    const QuestionType& type = types[schedule[qi]];
    const std::size_t ordinal = seen[schedule[qi]]++;
    const std::string topic = fresh();

    std::set<std::string> firsts{type.chain[0]};
    auto [mid, seconds] = add_first_hop(topic, type.chain[0]);
    const std::string answer = type.chain.size() == 1 ? mid : seconds.at(type.chain[1]);
    add(topic, type.distractor, fresh());

    std::vector<std::size_t> others;
    for (std::size_t t = 0; t < types.size(); ++t)
      if (types[t].chain[0] != type.chain[0]) others.push_back(t);
    std::shuffle(others.begin(), others.end(), rng);
    for (std::size_t i = 0, used = 0; i < others.size() && used < cfg.confounders; ++i) {
      const auto& first = types[others[i]].chain[0];
      if (!firsts.insert(first).second) continue;
      add_first_hop(topic, first);
      ++used;
    }

    SynthQuery q;
    q.type = type.name;
    q.record.qid = "q" + std::to_string(qi);
    q.record.question = detail::fill_template(type.question, topic);
    q.record.topics = {topic};
    q.record.answers = {answer};
    // the first test_per_type queries of each type form the test split
    q.record.split = ordinal < cfg.test_per_type ? "test" : "train";
    q.gold_path = detail::join_path(topic, type.chain);
    q.distractor_path = detail::join_path(topic, {type.distractor});
    corpus.queries.push_back(std::move(q));
  }
  for (std::size_t t = 0; t < types.size(); ++t) corpus.type_counts[types[t].name] = counts[t];
  return corpus;
}

inline KnowledgeGraph synthetic_graph(const SynthCorpus& c) {
  GraphBuilder b;
  for (const auto& t : c.triples) b.add_triple(t[0], t[1], t[2]);
  return std::move(b).build();
}

struct SynthCheck {
  std::size_t queries = 0;
  std::size_t distractor_wins = 0;  // sim(q, distractor) > sim(q, gold)
  std::size_t max_type_count = 0;
  std::size_t min_type_count = 0;

  double distractor_win_rate() const {
    return queries ? static_cast<double>(distractor_wins) / static_cast<double>(queries) : 0.0;
  }
  double frequency_ratio() const {
    return min_type_count ? static_cast<double>(max_type_count) / static_cast<double>(min_type_count) : 0.0;
  }
};

inline SynthCheck check_synthetic(const SynthCorpus& c, const SimilarityModel& m) {
  SynthCheck out;
  for (const auto& q : c.queries) {
    ++out.queries;
    if (m.sim(q.record.question, q.distractor_path) > m.sim(q.record.question, q.gold_path)) ++out.distractor_wins;
  }
  if (!c.type_counts.empty()) {
    out.max_type_count = out.min_type_count = c.type_counts.begin()->second;
    for (const auto& [name, n] : c.type_counts) {
      out.max_type_count = std::max(out.max_type_count, n);
      out.min_type_count = std::min(out.min_type_count, n);
    }
  }
  return out;
}

inline io::json to_json(const SynthCheck& s) {
  return {{"queries", s.queries},
          {"distractor_wins", s.distractor_wins},
          {"distractor_win_rate", s.distractor_win_rate()},
          {"max_type_count", s.max_type_count},
          {"min_type_count", s.min_type_count},
          {"frequency_ratio", s.frequency_ratio()}};
}

// graph.tsv, qa.jsonl and gold.jsonl under dir.
inline void write_synthetic(const std::filesystem::path& dir, const SynthCorpus& c) {
  std::string graph;
  for (const auto& t : c.triples) graph += t[0] + "\t" + t[1] + "\t" + t[2] + "\n";
  io::write_text(dir / "graph.tsv", graph);
  std::vector<io::json> qa, gold;
  for (const auto& q : c.queries) {
    qa.push_back(to_json(q.record));
    gold.push_back({{"qid", q.record.qid},
                    {"type", q.type},
                    {"gold_path", q.gold_path},
                    {"distractor_path", q.distractor_path}});
  }
  io::write_jsonl(dir / "qa.jsonl", qa);
  io::write_jsonl(dir / "gold.jsonl", gold);
}

}  // namespace star
