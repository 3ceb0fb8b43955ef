// Retrieval over a three-triple graph about a footballer. A scorer that only
// measures word overlap picks the nationality edge for "which country does
// David Luiz play for"; a scorer that prefers the club route answers France.

#include <iostream>
#include <sstream>
#include <string>

#include "star/beam_search.hpp"
#include "star/kg.hpp"
#include "star/path_scorer.hpp"
#include "star/similarity.hpp"

namespace {

const char* kTriples =
    "David Luiz\tsports.pro_athlete.teams\tParis Saint-Germain\n"
    "Paris Saint-Germain\tsports.sports_team.location\tFrance\n"
    "David Luiz\tpeople.person.nationality\tBrazil\n";

// Hand-written preference for the club route, standing in for a trained scorer.
class ClubRouteScorer final : public star::PathScorer {
 public:
  std::vector<double> score_batch(std::string_view, std::span<const std::string> paths) const override {
    std::vector<double> out;
    for (const auto& p : paths) {
      double s = 0.1;
      if (p.find("sports.pro_athlete.teams") != std::string::npos) s = 0.6;
      if (p.find("sports.sports_team.location") != std::string::npos) s = 0.9;
      out.push_back(s);
    }
    return out;
  }
};

}  // namespace

int main() {
  std::istringstream in(kTriples);
  const star::KnowledgeGraph g = star::load_graph(in);
  star::QueryRecord q{"footballer", "which country does David Luiz play for", {"David Luiz"}, {"France"}, "test"};
  star::InferenceConfig cfg;
  cfg.max_hop = 2;
  star::MockGenerator llm;

  const star::HashedBowModel bow;
  const star::SimilarityPathScorer shortcut(bow);
  const ClubRouteScorer club;
  const auto a = star::retrieve_and_answer(g, q, shortcut, llm, cfg);
  const auto b = star::retrieve_and_answer(g, q, club, llm, cfg);
  std::cout << "similarity-only: " << a.paths.front().text << " -> " << a.generation.answer << "\n";
  std::cout << "club route:      " << b.paths.front().text << " -> " << b.generation.answer << "\n";
  return b.generation.answer == "France" ? 0 : 1;
}
