#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "star/config.hpp"

using namespace star;

TEST(Presets, DatasetHyperparameters) {
  auto w = preset("webqsp");
  EXPECT_EQ(w.inference.max_hop, 2u);
  EXPECT_EQ(w.mining.k, 15u);
  EXPECT_EQ(w.inference.beam_width, 3u);
  EXPECT_EQ(w.inference.top_k, 3u);
  EXPECT_DOUBLE_EQ(w.training.learning_rate, 3e-5);
  auto c = preset("cwq");
  EXPECT_EQ(c.inference.max_hop, 4u);
  EXPECT_EQ(c.training.epochs, 100u);
  EXPECT_DOUBLE_EQ(c.training.train_split, 0.95);
  EXPECT_EQ(preset("grailqa").mining.max_hop, 4u);
  EXPECT_EQ(preset("synthetic").mining.k, 8u);
  EXPECT_THROW(preset("freebase"), ValidationError);
  for (const char* name : {"webqsp", "cwq", "grailqa", "synthetic"}) EXPECT_NO_THROW(preset(name).validate());
}

TEST(ApplyConfig, OverridesKnownKeysAndRejectsUnknownOnes) {
  io::json j = {{"preset", "synthetic"},
                {"seed", 9},
                {"training", {{"epochs", 2}}},
                {"inference", {{"beam_width", 5}}},
                {"data", {{"eval_split", "dev"}}}};
  auto c = config_from_json(j);
  EXPECT_EQ(c.preset, "synthetic");
  EXPECT_EQ(c.training.epochs, 2u);
  EXPECT_DOUBLE_EQ(c.training.learning_rate, 1e-3);
  EXPECT_EQ(c.inference.beam_width, 5u);
  EXPECT_EQ(c.eval_split, "dev");
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_EQ(c.mining.seed, 9u);
  EXPECT_EQ(c.scorer.seed, 9u);
  EXPECT_EQ(c.training.seed, 9u);

  EXPECT_THROW(config_from_json({{"bogus", 1}}), ValidationError);
  EXPECT_THROW(config_from_json({{"training", {{"epoch", 1}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"training", {{"epochs", "many"}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"retriever", "bm25"}}).validate(), ValidationError);
}

TEST(OverridePatch, DottedKeysAndValueParsing) {
  EXPECT_EQ(override_patch("training.epochs=3"), io::json({{"training", {{"epochs", 3}}}}));
  EXPECT_EQ(override_patch("retriever=similarity"), io::json({{"retriever", "similarity"}}));
  EXPECT_EQ(override_patch("training.use_weights=false"), io::json({{"training", {{"use_weights", false}}}}));
  EXPECT_THROW(override_patch("noequals"), ValidationError);
  EXPECT_THROW(override_patch("a..b=1"), ValidationError);
  auto c = apply_config(preset("synthetic"), override_patch("training.use_weights=false"));
  EXPECT_FALSE(c.training.use_weights);
}

TEST(ConfigFile, RoundTripAndDigest) {
  fixtures::TempDir dir("cfg");
  auto c = apply_config(preset("cwq"), {{"seed", 5}, {"output_dir", (dir.path() / "out").string()}});
  io::write_json(dir.path() / "c.json", to_json(c));
  auto back = load_config(dir.path() / "c.json");
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_digest(back), config_digest(c));
  back.inference.top_k = 7;
  EXPECT_NE(config_digest(back), config_digest(c));
  EXPECT_THROW(load_config(dir.path() / "missing.json"), IoError);
}
