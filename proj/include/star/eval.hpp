#pragma once

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/similarity.hpp"

namespace star {

// Lowercase, then strip leading/trailing whitespace and punctuation.
inline std::string normalize_answer(std::string_view s) {
  auto strip = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
  std::size_t b = 0, e = s.size();
  while (b < e && strip(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && strip(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::set<std::string> normalized_set(std::span<const std::string> xs) {
  std::set<std::string> out;
  for (const auto& x : xs) out.insert(normalize_answer(x));
  return out;
}

struct EvalRecord {
  std::string qid;
  std::string question;
  std::vector<std::string> predicted;  // best first
  std::vector<std::string> gold;
  std::string top1_path;  // serialized
  double retrieval_seconds = 0;
  bool correct = false;
};

inline bool top1_correct(const EvalRecord& r) {
  if (r.predicted.empty()) return false;
  return normalized_set(r.gold).count(normalize_answer(r.predicted.front())) > 0;
}

inline EvalRecord make_eval_record(std::string qid, std::string question, std::vector<std::string> predicted,
                                   std::vector<std::string> gold, std::string top1_path, double seconds) {
  EvalRecord r{std::move(qid), std::move(question), std::move(predicted), std::move(gold), std::move(top1_path),
               seconds, false};
  r.correct = top1_correct(r);
  return r;
}

inline io::json to_json(const EvalRecord& r) {
  return {{"qid", r.qid},         {"question", r.question},           {"predicted", r.predicted}, {"gold", r.gold},
          {"top1_path", r.top1_path}, {"rt_seconds", r.retrieval_seconds}, {"correct", r.correct}};
}

inline EvalRecord eval_record_from_json(const io::json& j) {
  return make_eval_record(j.at("qid").get<std::string>(), j.value("question", std::string{}),
                          j.at("predicted").get<std::vector<std::string>>(),
                          j.at("gold").get<std::vector<std::string>>(), j.value("top1_path", std::string{}),
                          j.value("rt_seconds", 0.0));
}

namespace detail {
inline void require_records(std::span<const EvalRecord> records, const char* what) {
  if (records.empty()) throw ValidationError(std::string(what) + " needs at least one record");
}
}  // namespace detail

inline double hits_at_1(std::span<const EvalRecord> records) {
  detail::require_records(records, "hits_at_1");
  std::size_t hit = 0;
  for (const auto& r : records) hit += top1_correct(r) ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(records.size());
}

inline double answer_f1(std::span<const std::string> predicted, std::span<const std::string> gold) {
  const auto p = normalized_set(predicted);
  const auto g = normalized_set(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::size_t overlap = 0;
  for (const auto& x : p) overlap += g.count(x);
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2 * precision * recall / (precision + recall);
}

inline double f1(std::span<const EvalRecord> records) {
  detail::require_records(records, "f1");
  double total = 0;
  for (const auto& r : records) total += answer_f1(r.predicted, r.gold);
  return 100.0 * total / static_cast<double>(records.size());
}

inline double retrieval_time(std::span<const EvalRecord> records) {
  detail::require_records(records, "retrieval_time");
  double total = 0;
  for (const auto& r : records) {
    if (!(r.retrieval_seconds >= 0)) throw ValidationError("negative retrieval time for " + r.qid);
    total += r.retrieval_seconds;
  }
  return total / static_cast<double>(records.size());
}

// Percentages per correctness subset; an empty subset has no ratio.
struct SubsetRatios {
  std::optional<double> correct;
  std::optional<double> incorrect;
};

namespace detail {
template <class Pred>
SubsetRatios subset_ratios(std::span<const EvalRecord> records, Pred pred) {
  std::size_t n[2] = {0, 0}, hit[2] = {0, 0};
  for (const auto& r : records) {
    const int s = top1_correct(r) ? 0 : 1;
    ++n[s];
    if (pred(r)) ++hit[s];
  }
  auto pct = [](std::size_t h, std::size_t t) -> std::optional<double> {
    if (t == 0) return std::nullopt;
    return 100.0 * static_cast<double>(h) / static_cast<double>(t);
  };
  return {pct(hit[0], n[0]), pct(hit[1], n[1])};
}
}  // namespace detail

inline bool is_shortcut(const EvalRecord& r, const SimilarityModel& m, double threshold) {
  if (r.top1_path.empty()) return false;
  return m.sim(r.question, r.top1_path) > threshold;
}

inline SubsetRatios shortcut_ratio(std::span<const EvalRecord> records, const SimilarityModel& m,
                                   double threshold = 0.95) {
  return detail::subset_ratios(records, [&](const EvalRecord& r) { return is_shortcut(r, m, threshold); });
}

// Signatures forming the least frequent ceil(fraction * distinct) entries.
inline std::set<std::string> tail_signatures(const std::map<std::string, std::size_t>& counts, double fraction) {
  if (counts.empty()) throw ValidationError("tail classification needs nonempty training counts");
  if (!(fraction >= 0 && fraction <= 1)) throw ValidationError("tail fraction must lie in [0, 1]");
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [sig, n] : counts) order.emplace_back(n, sig);
  std::sort(order.begin(), order.end());
  // The epsilon keeps products such as 0.2 * 10 from rounding up past an integer.
  const auto size = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(counts.size()) - 1e-9));
  std::set<std::string> out;
  for (std::size_t i = 0; i < std::min(size, order.size()); ++i) out.insert(order[i].second);
  return out;
}

inline bool is_long_tail(const EvalRecord& r, const std::map<std::string, std::size_t>& counts,
                         const std::set<std::string>& tail) {
  const std::string sig = relation_signature(r.top1_path);
  return tail.count(sig) > 0 || counts.count(sig) == 0;
}

inline SubsetRatios long_tail_ratio(std::span<const EvalRecord> records,
                                    const std::map<std::string, std::size_t>& counts, double fraction = 0.2) {
  const auto tail = tail_signatures(counts, fraction);
  return detail::subset_ratios(records, [&](const EvalRecord& r) { return is_long_tail(r, counts, tail); });
}

struct DiagnosticsConfig {
  double shortcut_threshold = 0.95;
  double tail_fraction = 0.20;
};

inline io::json to_json(const DiagnosticsConfig& c) {
  return {{"shortcut_threshold", c.shortcut_threshold}, {"tail_fraction", c.tail_fraction}};
}

inline DiagnosticsConfig diagnostics_config_from_json(const io::json& j) {
  DiagnosticsConfig c;
  c.shortcut_threshold = j.value("shortcut_threshold", c.shortcut_threshold);
  c.tail_fraction = j.value("tail_fraction", c.tail_fraction);
  return c;
}

struct SubsetBias {
  std::size_t count = 0;
  std::optional<double> shortcut, long_tail, either;  // % of the subset

  bool operator==(const SubsetBias&) const = default;
};

struct BiasReport {
  std::size_t records = 0;
  std::size_t errors = 0;
  double hits_at_1 = 0;
  double error = 0;  // 100 - hits@1
  SubsetBias correct;
  SubsetBias incorrect;
  // Erroneous records showing each bias, as % of all records. The share of
  // errors is incorrect.shortcut / long_tail / either.
  std::optional<double> shortcut_error, long_tail_error, union_error;

  bool operator==(const BiasReport&) const = default;
};

inline BiasReport bias_report(std::span<const EvalRecord> records, const SimilarityModel& m,
                              const std::map<std::string, std::size_t>& counts, const DiagnosticsConfig& cfg = {}) {
  detail::require_records(records, "bias_report");
  const auto tail = tail_signatures(counts, cfg.tail_fraction);
  BiasReport rep;
  rep.records = records.size();
  std::size_t sc[2] = {0, 0}, lt[2] = {0, 0}, un[2] = {0, 0};
  for (const auto& r : records) {
    const int s = top1_correct(r) ? 0 : 1;
    const bool a = is_shortcut(r, m, cfg.shortcut_threshold);
    const bool b = is_long_tail(r, counts, tail);
    (s == 0 ? rep.correct : rep.incorrect).count++;
    sc[s] += a;
    lt[s] += b;
    un[s] += a || b;
  }
  rep.errors = rep.incorrect.count;
  rep.hits_at_1 = hits_at_1(records);
  rep.error = 100.0 - rep.hits_at_1;
  auto pct = [](std::size_t h, std::size_t t) -> std::optional<double> {
    if (t == 0) return std::nullopt;
    return 100.0 * static_cast<double>(h) / static_cast<double>(t);
  };
  rep.correct.shortcut = pct(sc[0], rep.correct.count);
  rep.correct.long_tail = pct(lt[0], rep.correct.count);
  rep.correct.either = pct(un[0], rep.correct.count);
  rep.incorrect.shortcut = pct(sc[1], rep.incorrect.count);
  rep.incorrect.long_tail = pct(lt[1], rep.incorrect.count);
  rep.incorrect.either = pct(un[1], rep.incorrect.count);
  if (rep.errors > 0) {
    rep.shortcut_error = pct(sc[1], rep.records);
    rep.long_tail_error = pct(lt[1], rep.records);
    rep.union_error = pct(un[1], rep.records);
  }
  return rep;
}

namespace detail {

// Shortest round-trip representation.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_opt(const std::optional<double>& v) { return v ? format_double(*v) : "-"; }

inline double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw IngestError("bad number in bias report: " + s);
  return v;
}

inline std::optional<double> parse_opt(const std::string& s) {
  if (s == "-") return std::nullopt;
  return parse_double(s);
}

}  // namespace detail

inline constexpr std::string_view kBiasReportHeader = "STAR bias report v1";

// Human-readable report: summary, per-subset table, and error attribution with
// the share of errors in parentheses. parse_bias_report inverts it exactly.
inline std::string render_bias_report(const BiasReport& r) {
  using detail::format_double, detail::format_opt;
  std::ostringstream os;
  os << kBiasReportHeader << "\n";
  os << "records " << r.records << "\n";
  os << "errors " << r.errors << "\n";
  os << "hits@1 " << format_double(r.hits_at_1) << "\n";
  os << "error " << format_double(r.error) << "\n";
  os << "\n";
  os << "subset count shortcut long-tail union\n";
  for (const auto& [name, s] : {std::pair{"correct", &r.correct}, std::pair{"incorrect", &r.incorrect}}) {
    os << name << " " << s->count << " " << format_opt(s->shortcut) << " " << format_opt(s->long_tail) << " "
       << format_opt(s->either) << "\n";
  }
  os << "\n";
  os << "attribution error (share)\n";
  os << "shortcut " << format_opt(r.shortcut_error) << " (" << format_opt(r.incorrect.shortcut) << ")\n";
  os << "long-tail " << format_opt(r.long_tail_error) << " (" << format_opt(r.incorrect.long_tail) << ")\n";
  os << "union " << format_opt(r.union_error) << " (" << format_opt(r.incorrect.either) << ")\n";
  return os.str();
}

inline BiasReport parse_bias_report(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool header = false;
  while (std::getline(is, line)) {
    if (!header) {
      if (line != kBiasReportHeader) throw IngestError("not a bias report", 1);
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (!fields.empty()) rows.push_back(std::move(fields));
  }
  auto find = [&](std::string_view key, std::size_t arity) -> const std::vector<std::string>& {
    for (const auto& r : rows)
      if (r.front() == key && r.size() == arity) return r;
    throw IngestError("bias report lacks row '" + std::string(key) + "'");
  };
  auto unparen = [](std::string s) {
    if (s.size() < 2 || s.front() != '(' || s.back() != ')') throw IngestError("expected parenthesized share: " + s);
    return s.substr(1, s.size() - 2);
  };
  BiasReport r;
  r.records = std::stoul(find("records", 2)[1]);
  r.errors = std::stoul(find("errors", 2)[1]);
  r.hits_at_1 = detail::parse_double(find("hits@1", 2)[1]);
  r.error = detail::parse_double(find("error", 2)[1]);
  for (auto [name, s] : {std::pair{"correct", &r.correct}, std::pair{"incorrect", &r.incorrect}}) {
    const auto& row = find(name, 5);
    s->count = std::stoul(row[1]);
    s->shortcut = detail::parse_opt(row[2]);
    s->long_tail = detail::parse_opt(row[3]);
    s->either = detail::parse_opt(row[4]);
  }
  const auto& sc = find("shortcut", 3);
  const auto& lt = find("long-tail", 3);
  const auto& un = find("union", 3);
  r.shortcut_error = detail::parse_opt(sc[1]);
  r.long_tail_error = detail::parse_opt(lt[1]);
  r.union_error = detail::parse_opt(un[1]);
  if (detail::parse_opt(unparen(sc[2])) != r.incorrect.shortcut ||
      detail::parse_opt(unparen(lt[2])) != r.incorrect.long_tail ||
      detail::parse_opt(unparen(un[2])) != r.incorrect.either)
    throw IngestError("bias report shares disagree with the incorrect subset row");
  return r;
}

inline io::json opt_json(const std::optional<double>& v) { return v ? io::json(*v) : io::json(nullptr); }

// Machine-readable companion: one record per table row.
inline std::vector<io::json> bias_report_records(const BiasReport& r) {
  std::vector<io::json> out;
  out.push_back({{"kind", "summary"},
                 {"records", r.records},
                 {"errors", r.errors},
                 {"hits_at_1", r.hits_at_1},
                 {"error", r.error}});
  for (const auto& [name, s] : {std::pair{"correct", &r.correct}, std::pair{"incorrect", &r.incorrect}}) {
    out.push_back({{"kind", "subset"},
                   {"subset", name},
                   {"count", s->count},
                   {"shortcut", opt_json(s->shortcut)},
                   {"long_tail", opt_json(s->long_tail)},
                   {"union", opt_json(s->either)}});
  }
  out.push_back({{"kind", "attribution"},
                 {"shortcut", opt_json(r.shortcut_error)},
                 {"long_tail", opt_json(r.long_tail_error)},
                 {"union", opt_json(r.union_error)},
                 {"shortcut_share", opt_json(r.incorrect.shortcut)},
                 {"long_tail_share", opt_json(r.incorrect.long_tail)},
                 {"union_share", opt_json(r.incorrect.either)}});
  return out;
}

}  // namespace star
