#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include "star/kg.hpp"

namespace star::fixtures {

inline constexpr const char* kTeams = "sports.pro_athlete.teams";
inline constexpr const char* kTeamCountry = "sports.sports_team.location";
inline constexpr const char* kNationality = "people.person.nationality";

// The footballer example: the club route leads to France, nationality to Brazil.
inline KnowledgeGraph footballer_graph() {
  std::istringstream in(std::string("David Luiz\t") + kTeams + "\tParis Saint-Germain\n" +
                        "Paris Saint-Germain\t" + kTeamCountry + "\tFrance\n" + "David Luiz\t" + kNationality +
                        "\tBrazil\n");
  return load_graph(in);
}

inline KnowledgeGraph graph_from(const std::string& tsv) {
  std::istringstream in(tsv);
  return load_graph(in);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("star-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace star::fixtures
