#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "star/similarity.hpp"

namespace star {

// Anything that assigns a relevance score to (query, serialized path) pairs.
class PathScorer {
 public:
  virtual ~PathScorer() = default;
  virtual std::vector<double> score_batch(std::string_view query, std::span<const std::string> paths) const = 0;

  double score(std::string_view query, const std::string& path) const {
    return score_batch(query, std::span<const std::string>(&path, 1)).front();
  }
};

// Frozen similarity-only retriever: the score is sim(query, path text).
class SimilarityPathScorer final : public PathScorer {
 public:
  explicit SimilarityPathScorer(const SimilarityModel& model) : model_(model) {}

  std::vector<double> score_batch(std::string_view query, std::span<const std::string> paths) const override {
    std::vector<double> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(model_.sim(query, p));
    return out;
  }

 private:
  const SimilarityModel& model_;
};

}  // namespace star
