#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "star/beam_search.hpp"
#include "star/errors.hpp"
#include "star/eval.hpp"
#include "star/io.hpp"
#include "star/mining.hpp"
#include "star/scorer.hpp"
#include "star/synth.hpp"
#include "star/training.hpp"

namespace star {

struct LlmConfig {
  std::string client = "mock";  // "mock" or "http"
  DecodingParams decoding;
};

struct RunConfig {
  std::string preset = "webqsp";
  std::uint64_t seed = 42;
  std::filesystem::path output_dir = "star-run";
  // Empty paths fall back to the synth stage outputs under output_dir.
  std::filesystem::path graph_file;
  std::filesystem::path qa_file;
  std::string eval_split = "test";
  std::string retriever = "star";  // "star" or "similarity"
  SynthConfig synth;
  MiningConfig mining;
  ScorerConfig scorer;
  TrainingConfig training;
  InferenceConfig inference;
  DiagnosticsConfig diagnostics;
  LlmConfig llm;

  std::filesystem::path stage_dir(std::string_view stage) const { return output_dir / stage; }
  std::filesystem::path resolved_graph_file() const {
    return graph_file.empty() ? stage_dir("synth") / "graph.tsv" : graph_file;
  }
  std::filesystem::path resolved_qa_file() const { return qa_file.empty() ? stage_dir("synth") / "qa.jsonl" : qa_file; }

  void validate() const {
    training.validate();
    inference.validate();
    scorer.validate();
    if (mining.k < 1 || mining.max_hop < 1) throw ValidationError("mining k and max_hop must be >= 1");
    if (retriever != "star" && retriever != "similarity")
      throw ValidationError("retriever must be 'star' or 'similarity', got '" + retriever + "'");
    if (llm.client != "mock" && llm.client != "http")
      throw ValidationError("llm client must be 'mock' or 'http', got '" + llm.client + "'");
  }
};

// The synthetic preset trains a small backbone from random weights, so it uses
// a larger step than the fine-tuning presets and sharpens the sigmoid scores
// with a loss temperature below 1.
inline RunConfig preset(std::string_view name) {
  RunConfig c;
  c.preset = std::string(name);
  if (name == "webqsp") {
    c.mining.max_hop = c.inference.max_hop = 2;
    c.training.epochs = 50;
    c.training.learning_rate = 3e-5;
    c.training.train_split = 0.9;
  } else if (name == "cwq") {
    c.mining.max_hop = c.inference.max_hop = 4;
    c.training.epochs = 100;
    c.training.learning_rate = 1e-5;
    c.training.train_split = 0.95;
  } else if (name == "grailqa") {
    c.mining.max_hop = c.inference.max_hop = 4;
    c.training.epochs = 50;
    c.training.learning_rate = 3e-5;
    c.training.train_split = 0.9;
  } else if (name == "synthetic") {
    c.mining.max_hop = c.inference.max_hop = 2;
    c.mining.k = 8;
    c.training.k_negatives = 8;
    c.training.epochs = 10;
    c.training.learning_rate = 1e-3;
    c.training.temperature = 0.1;
    c.training.train_split = 0.9;
  } else {
    throw ValidationError("unknown preset '" + std::string(name) + "' (webqsp, cwq, grailqa, synthetic)");
  }
  c.inference.beam_width = 3;
  c.inference.top_k = 3;
  return c;
}

inline io::json to_json(const RunConfig& c) {
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"data", {{"graph", c.graph_file.string()}, {"qa", c.qa_file.string()}, {"eval_split", c.eval_split}}},
          {"retriever", c.retriever},
          {"synth", to_json(c.synth)},
          {"mining", {{"max_hop", c.mining.max_hop}, {"k", c.mining.k}, {"termination", c.mining.termination}}},
          {"scorer", to_json(c.scorer)},
          {"training", to_json(c.training)},
          {"inference", to_json(c.inference)},
          {"diagnostics", to_json(c.diagnostics)},
          {"llm",
           {{"client", c.llm.client},
            {"temperature", c.llm.decoding.temperature},
            {"max_tokens", c.llm.decoding.max_tokens},
            {"timeout_seconds", c.llm.decoding.timeout_seconds}}}};
}

namespace detail {
inline void check_keys(const io::json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
  }
}
}  // namespace detail

// Applies the keys present in j on top of base. The top-level seed, when
// given, reseeds every stage.
inline RunConfig apply_config(RunConfig c, const io::json& j) {
  try {
    detail::check_keys(j,
                       {"preset", "seed", "output_dir", "data", "retriever", "synth", "mining", "scorer", "training",
                        "inference", "diagnostics", "llm"},
                       "");
    if (j.contains("preset")) c.preset = j["preset"].get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("retriever")) c.retriever = j["retriever"].get<std::string>();
    if (j.contains("data")) {
      const auto& d = j["data"];
      detail::check_keys(d, {"graph", "qa", "eval_split"}, "data");
      if (d.contains("graph")) c.graph_file = d["graph"].get<std::string>();
      if (d.contains("qa")) c.qa_file = d["qa"].get<std::string>();
      if (d.contains("eval_split")) c.eval_split = d["eval_split"].get<std::string>();
    }
    auto merged = [](io::json base, const io::json& patch, std::string_view where) {
      if (!patch.is_object()) throw ValidationError("config section '" + std::string(where) + "' must be an object");
      for (const auto& [key, value] : patch.items()) {
        if (!base.contains(key)) throw ValidationError("unknown config key '" + std::string(where) + "." + key + "'");
        base[key] = value;
      }
      return base;
    };
    if (j.contains("synth")) c.synth = synth_config_from_json(merged(to_json(c.synth), j["synth"], "synth"));
    if (j.contains("mining")) {
      io::json m = merged(to_json(c)["mining"], j["mining"], "mining");
      c.mining.max_hop = m["max_hop"].get<std::size_t>();
      c.mining.k = m["k"].get<std::size_t>();
      c.mining.termination = m["termination"].get<bool>();
    }
    if (j.contains("scorer")) c.scorer = scorer_config_from_json(merged(to_json(c.scorer), j["scorer"], "scorer"));
    if (j.contains("training"))
      c.training = training_config_from_json(merged(to_json(c.training), j["training"], "training"));
    if (j.contains("inference"))
      c.inference = inference_config_from_json(merged(to_json(c.inference), j["inference"], "inference"));
    if (j.contains("diagnostics"))
      c.diagnostics = diagnostics_config_from_json(merged(to_json(c.diagnostics), j["diagnostics"], "diagnostics"));
    if (j.contains("llm")) {
      io::json l = merged(to_json(c)["llm"], j["llm"], "llm");
      c.llm.client = l["client"].get<std::string>();
      c.llm.decoding.temperature = l["temperature"].get<double>();
      c.llm.decoding.max_tokens = l["max_tokens"].get<std::size_t>();
      c.llm.decoding.timeout_seconds = l["timeout_seconds"].get<double>();
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const io::json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  c.synth.seed = c.mining.seed = c.scorer.seed = c.training.seed = c.seed;
  return c;
}

// A config document selects its preset first, then overrides it.
inline RunConfig config_from_json(const io::json& j) {
  const std::string name = j.is_object() ? j.value("preset", std::string("webqsp")) : "webqsp";
  return apply_config(preset(name), j);
}

inline RunConfig load_config(const std::filesystem::path& file) { return config_from_json(io::read_json(file)); }

// "training.epochs=3" -> {"training": {"epochs": 3}}; the value is parsed as
// JSON when possible and taken as a string otherwise.
inline io::json override_patch(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ValidationError("override must look like key.path=value");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  io::json value = io::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  io::json patch = io::json::object();
  io::json* node = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("empty component in override key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  return patch;
}

inline std::string config_digest(const RunConfig& c) { return io::digest(to_json(c).dump()); }

}  // namespace star
