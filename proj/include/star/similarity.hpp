#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "star/errors.hpp"

namespace star {

// Lowercased maximal alphanumeric runs: "people.person.nationality" -> people, person, nationality.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || uc >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Sentence-pair similarity with cosine semantics: sim(a, a) = 1, symmetric, in [-1, 1].
class SimilarityModel {
 public:
  virtual ~SimilarityModel() = default;
  virtual std::string backend_id() const = 0;
  virtual std::size_t dimension() const = 0;

  double sim(std::string_view a, std::string_view b) const {
    if (a.empty() || b.empty()) throw ValidationError("similarity inputs must be nonempty");
    return similarity(a, b);
  }

 protected:
  virtual double similarity(std::string_view a, std::string_view b) const = 0;
};

// Deterministic reference backend: binary bag of words hashed into `dimension`
// buckets, compared by cosine.
class HashedBowModel final : public SimilarityModel {
 public:
  explicit HashedBowModel(std::size_t dimension = std::size_t{1} << 20) : dimension_(dimension) {
    if (dimension_ == 0) throw ValidationError("embedding dimension must be >= 1");
  }

  std::string backend_id() const override { return "hashed-bow"; }
  std::size_t dimension() const override { return dimension_; }

  // Sorted distinct active buckets.
  std::vector<std::uint64_t> embed(std::string_view text) const {
    std::vector<std::uint64_t> buckets;
    for (const auto& tok : word_tokens(text)) buckets.push_back(fnv1a64(tok) % dimension_);
    std::sort(buckets.begin(), buckets.end());
    buckets.erase(std::unique(buckets.begin(), buckets.end()), buckets.end());
    return buckets;
  }

 protected:
  double similarity(std::string_view a, std::string_view b) const override {
    auto ea = embed(a);
    auto eb = embed(b);
    if (ea.empty() || eb.empty()) return ea.empty() && eb.empty() ? 1.0 : 0.0;
    std::size_t shared = 0;
    for (std::size_t i = 0, j = 0; i < ea.size() && j < eb.size();) {
      if (ea[i] == eb[j]) {
        ++shared;
        ++i;
        ++j;
      } else if (ea[i] < eb[j]) {
        ++i;
      } else {
        ++j;
      }
    }
    return static_cast<double>(shared) / std::sqrt(static_cast<double>(ea.size()) * static_cast<double>(eb.size()));
  }

 private:
  std::size_t dimension_;
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("embedding dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return na == nb ? 1.0 : 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

struct ScoredText {
  std::string text;
  double score;
};

// Candidates ranked by similarity to the anchor, ties broken by candidate text.
inline std::vector<ScoredText> rank_by_similarity(const SimilarityModel& m, std::string_view anchor,
                                                  std::span<const std::string> candidates) {
  std::vector<ScoredText> ranked;
  ranked.reserve(candidates.size());
  for (const auto& c : candidates) ranked.push_back({c, m.sim(anchor, c)});
  std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredText& a, const ScoredText& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.text < b.text;
  });
  return ranked;
}

inline std::vector<std::string> top_k_similar(const SimilarityModel& m, std::string_view anchor,
                                              std::span<const std::string> candidates, std::size_t k) {
  if (k < 1) throw ValidationError("k must be >= 1");
  auto ranked = rank_by_similarity(m, anchor, candidates);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(std::move(ranked[i].text));
  return out;
}

}  // namespace star
