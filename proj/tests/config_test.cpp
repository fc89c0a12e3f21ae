#include <gtest/gtest.h>

#include <filesystem>

#include "spa/config.hpp"
#include "spa/error.hpp"
#include "spa/run.hpp"

namespace spa {
namespace {

using nlohmann::json;

TEST(RunConfig, DefaultsAreTheReferenceHyperparameters) {
  const RunConfig c = config_from_json(json::object());
  EXPECT_EQ(c.model.d, 512u);
  EXPECT_EQ(c.model.layers, 6u);
  EXPECT_EQ(c.model.heads, 8u);
  EXPECT_EQ(c.model.n_max, 20u);
  EXPECT_EQ(c.model.generator, GeneratorKind::kParallel);
  EXPECT_TRUE(c.encodings.oenc && c.encodings.renc && c.encodings.senc);
  EXPECT_DOUBLE_EQ(c.train.lr, 1.5e-4);
  EXPECT_DOUBLE_EQ(c.train.decay, 0.8);
  EXPECT_EQ(c.train.decay_every, 80);
  EXPECT_DOUBLE_EQ(c.train.loss.translation, 1.0);
  EXPECT_DOUBLE_EQ(c.train.loss.rotation, 10.0);
  EXPECT_DOUBLE_EQ(c.train.loss.shape, 1.0);
  EXPECT_DOUBLE_EQ(c.metrics.epsilon, 0.01);
  EXPECT_DOUBLE_EQ(c.metrics.tau, 0.01);
  EXPECT_DOUBLE_EQ(c.metrics.delta, 0.025);
  EXPECT_EQ(c.pattern, SequencePattern::kDiagonal);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = RunConfig::Desk();
  c.encodings.renc = false;
  c.pattern = SequencePattern::kRandom;
  c.model.generator = GeneratorKind::kAutoregressive;
  c.train.rotation_mode = RotationLoss::kFullPose;
  c.Resolve();
  const RunConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_FALSE(back.train.flags.renc);
}

TEST(RunConfig, PartialSectionsKeepDefaults) {
  const RunConfig c = config_from_json(json::parse(R"({"train": {"epochs": 7}})"));
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_DOUBLE_EQ(c.train.lr, 1.5e-4);
}

TEST(RunConfig, StrictParsing) {
  const char* bad[] = {
      R"({"modle": {}})",
      R"({"model": {"dim": 64}})",
      R"({"model": {"encoder": {"pts": 3}}})",
      R"({"train": {"epochs": "ten"}})",
      R"({"train": {"batch": -1}})",
      R"({"train": {"lr": -1.0}})",
      R"({"encodings": {"oenc": 1}})",
      R"({"model": {"d": 30, "heads": 4}})",
      R"({"model": {"generator": "diffusion"}})",
      R"({"loss": {"rotation_mode": "both"}})",
      R"({"metrics": {"tau": 0}})",
      R"({"pattern": "spiral"})",
      R"({"model": {"encoder": {"hidden": [8, 0]}}})",
      R"([1, 2])",
  };
  for (const char* text : bad) {
    EXPECT_THROW(config_from_json(json::parse(text)), ConfigError) << text;
  }
}

TEST(RunConfig, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "spa_config_test.json";
  save_config(RunConfig::Desk(), path);
  EXPECT_EQ(to_json(load_config(path)), to_json(RunConfig::Desk()));
  EXPECT_THROW(load_config(path.string() + ".missing"), ConfigError);
}

TEST(Ablation, GridNames) {
  auto names = [](const std::string& axis) {
    std::vector<std::string> out;
    for (const auto& [name, c] : ablation_grid(RunConfig::Desk(), axis)) out.push_back(name);
    return out;
  };
  EXPECT_EQ(names("pattern"), (std::vector<std::string>{"diagonal", "top-to-bottom", "bottom-to-top",
                                                        "descending-size", "random"}));
  EXPECT_EQ(names("generator"), (std::vector<std::string>{"parallel", "autoregressive"}));
  EXPECT_EQ(names("encodings").size(), 7u);
  const auto grid = ablation_grid(RunConfig::Desk(), "encodings");
  EXPECT_EQ(grid.front().second.train.flags, (EncodingFlags{false, false, false}));
  EXPECT_EQ(grid.back().second.train.flags, (EncodingFlags{true, true, true}));
  EXPECT_THROW(ablation_grid(RunConfig::Desk(), "losses"), ConfigError);
}

TEST(Run, GroundTruthEvaluationIsPerfect) {
  SynthOptions o;
  o.points = 200;
  const auto tasks = synth_dataset("mixed", 9, 4, o);
  std::vector<const AssemblyTask*> ptrs;
  for (const auto& t : tasks) ptrs.push_back(&t);
  const MetricReport r = evaluate_tasks(nullptr, ptrs, RunConfig::Desk(), 2);
  EXPECT_EQ(r.overall.scd, 0.0);
  EXPECT_EQ(r.overall.pa, 1.0);
  EXPECT_EQ(r.overall.ca, 1.0);
  EXPECT_EQ(r.overall.sr, 1.0);
  EXPECT_EQ(r.per_category.size(), 3u);
}

TEST(Run, PredictionsReturnInOriginalOrder) {
  SynthOptions o;
  o.points = 64;
  const AssemblyTask t = synth_object(ObjectKind::kTable, 2, o);
  RunConfig c = RunConfig::Desk();
  c.model.d = 16;
  c.model.layers = 1;
  c.model.encoder.hidden = {8};
  c.model.encoder.width = 16;
  c.pattern = SequencePattern::kTopToBottom;
  c.Resolve();
  const Model m(c.model, 1);
  const std::vector<Pose> pred = predict_task(m, t, c);
  const AssemblyTask ordered = with_pattern(t, c.pattern);
  const TrainSample s = to_sample(ordered, 64);
  const std::vector<Pose> chain = m.predict(s.input, c.encodings);
  for (std::size_t k = 0; k < chain.size(); ++k) {
    EXPECT_EQ(pred[ordered.chain[k]].translation, chain[k].translation);
  }
}

}  // namespace
}  // namespace spa
