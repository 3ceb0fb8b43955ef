#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "star/config.hpp"
#include "star/http_clients.hpp"
#include "star/log.hpp"
#include "star/pipeline.hpp"

namespace {

struct Options {
  std::string config_file;
  std::string preset;
  std::string output_dir;
  std::string graph_file;
  std::string qa_file;
  std::string retriever;
  std::string llm;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

star::RunConfig resolve(const Options& o) {
  star::io::json doc = o.config_file.empty() ? star::io::json::object() : star::io::read_json(o.config_file);
  if (!o.preset.empty()) doc["preset"] = o.preset;
  star::RunConfig cfg = star::config_from_json(doc);
  star::io::json patch = star::io::json::object();
  if (!o.output_dir.empty()) patch["output_dir"] = o.output_dir;
  if (!o.graph_file.empty()) patch["data"]["graph"] = o.graph_file;
  if (!o.qa_file.empty()) patch["data"]["qa"] = o.qa_file;
  if (!o.retriever.empty()) patch["retriever"] = o.retriever;
  if (!o.llm.empty()) patch["llm"]["client"] = o.llm;
  if (o.seed) patch["seed"] = *o.seed;
  for (const auto& a : o.overrides) patch.merge_patch(star::override_patch(a));
  // reseed stages even when only sub-keys changed
  if (!patch.contains("seed")) patch["seed"] = cfg.seed;
  cfg = star::apply_config(cfg, patch);
  cfg.validate();
  return cfg;
}

std::unique_ptr<star::GeneratorClient> make_generator(const star::LlmConfig& cfg) {
  if (cfg.client == "http") return std::make_unique<star::HttpChatGenerator>(star::HttpChatGenerator::from_env());
  return star::default_generator(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Path retriever for knowledge-graph question answering"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("-c,--config", o.config_file, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("-p,--preset", o.preset, "webqsp, cwq, grailqa or synthetic");
  app.add_option("-o,--out", o.output_dir, "output directory (one subdirectory per stage)");
  app.add_option("--graph", o.graph_file, "tab-separated triple file");
  app.add_option("--qa", o.qa_file, "line-delimited QA records");
  app.add_option("--retriever", o.retriever, "star or similarity");
  app.add_option("--llm", o.llm, "mock or http");
  app.add_option("--seed", o.seed, "seed for every stage");
  app.add_option("-s,--set", o.overrides, "override, e.g. training.epochs=3");
  app.add_flag("-q,--quiet", o.quiet, "only print warnings");

  struct Stage {
    const char* name;
    const char* help;
    std::function<void(const star::RunConfig&)> run;
  };
  const std::vector<Stage> stages = {
      {"synth", "generate the synthetic shortcut corpus", [](const auto& c) { star::cmd_synth(c); }},
      {"ingest", "load and index the graph and QA records", [](const auto& c) { star::cmd_ingest(c); }},
      {"mine", "mine hard positives and negatives", [](const auto& c) { star::cmd_mine(c); }},
      {"train", "train the path scorer", [](const auto& c) { star::cmd_train(c); }},
      {"retrieve", "beam-search retrieval and answer generation",
       [](const auto& c) { star::cmd_retrieve(c, make_generator); }},
      {"evaluate", "Hits@1, F1 and retrieval time", [](const auto& c) { star::cmd_evaluate(c); }},
      {"diagnose", "shortcut and long-tail bias report", [](const auto& c) { star::cmd_diagnose(c); }},
      {"run", "every stage in order", [](const auto& c) { star::run_pipeline(c, make_generator); }},
      {"show-config", "print the resolved configuration",
       [](const auto& c) { std::cout << star::to_json(c).dump(2) << "\n"; }},
  };
  for (const auto& s : stages) app.add_subcommand(s.name, s.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (o.quiet) star::set_log_level(star::LogLevel::Warn);
  try {
    const star::RunConfig cfg = resolve(o);
    for (const auto& s : stages)
      if (app.got_subcommand(s.name)) s.run(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
