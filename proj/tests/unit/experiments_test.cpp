#include <gtest/gtest.h>

#include <fstream>

#include "dbias/decoding.hpp"
#include "dbias/experiments.hpp"

namespace dbias {
namespace {

TEST(Experiments, ShippedDefinitionsParse) {
  int n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(DBIAS_EXPERIMENTS_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const auto spec = load_experiment(entry.path());
    EXPECT_EQ(spec.name, entry.path().stem().string());
    EXPECT_TRUE(spec.self_check || !spec.assertions.empty()) << spec.name;
    ++n;
  }
  EXPECT_EQ(n, 11);
}

std::string tiny_experiment(const std::string& extra_eval = "", const std::string& assertion = "") {
  return R"({
  "name": "tiny",
  "seeds": [3],
  "corpus": {"n_common_words": 20, "n_rare_words": 40, "n_homophone_pairs": 10, "n_train": 60, "n_dev": 2,
             "n_test": 12, "n_text_sentences": 5, "seed": 3},
  "vocab_size": 30,
  "models": [
    {"name": "base", "recipe": {"mode": "scratch", "epochs": 1, "rare_common_k": 20,
      "model": {"d_hidden": 8, "d_word_embed": 8, "shared_layers": 1, "heads": 2, "lookahead_frames": [1],
                "conv_channels": 8, "ff_dim": 8, "predictor_embed": 8, "joint_dim": 8}}},
    {"name": "fresh", "init": "base", "recipe": {"mode": "finetune-bias", "epochs": 0, "rare_common_k": 20,
      "biasing_config": {"heads": 2, "attention_dim": 8, "word_dim": 8}}}
  ],
  "evals": [
    {"name": "base", "model": "base", "max_utterances": 6},
    {"name": "fresh", "model": "fresh", "max_utterances": 6, "count_attention": true})" +
         extra_eval + R"(
  ],
  "assertions": [
    {"kind": "same_outputs", "evals": ["fresh", "base"]},
    {"kind": "attention_linear", "evals": ["fresh"]})" +
         assertion + R"(
  ]
})";
}

TEST(Experiments, RejectsUnknownKeysAndNames) {
  EXPECT_NO_THROW(experiment_from_json(tiny_experiment()));
  EXPECT_THROW(experiment_from_json(R"({"name": "x", "seeds": [1], "models": [], "evals": [],
                                        "assertions": [], "colour": 1})"),
               ConfigError);
  EXPECT_THROW(experiment_from_json(tiny_experiment(R"(, {"name": "x", "model": "nope"})")), ConfigError);
  EXPECT_THROW(experiment_from_json(tiny_experiment("", R"(, {"kind": "less", "evals": ["base", "ghost"]})")),
               ConfigError);
  EXPECT_THROW(experiment_from_json(tiny_experiment("", R"(, {"kind": "bigger", "evals": ["base", "fresh"]})")),
               ConfigError);
  EXPECT_THROW(experiment_from_json("{not json"), ConfigError);
}

TEST(Experiments, TinyRunIsNeutralAndCached) {
  const auto spec = experiment_from_json(tiny_experiment());
  const auto cache = std::filesystem::temp_directory_path() / "dbias_experiment_test";
  std::filesystem::remove_all(cache);
  ExperimentOptions opts;
  opts.cache_dir = cache;
  const auto first = run_experiment(spec, opts);
  EXPECT_TRUE(first.passed()) << first.report();
  ASSERT_EQ(first.evals.at(3).size(), 2u);
  EXPECT_EQ(first.evals.at(3).at("base").utterances.size(), 6u);
  EXPECT_GT(std::distance(std::filesystem::directory_iterator(cache), std::filesystem::directory_iterator()), 0);

  std::vector<std::string> lines;
  opts.log = [&](const std::string& s) { lines.push_back(s); };
  const auto second = run_experiment(spec, opts);
  EXPECT_TRUE(second.passed());
  EXPECT_EQ(second.evals.at(3).at("fresh").report.cell(), first.evals.at(3).at("fresh").report.cell());
  EXPECT_TRUE(std::any_of(lines.begin(), lines.end(), [](const std::string& s) { return s.find("cached") != std::string::npos; }));
  std::filesystem::remove_all(cache);
}

TEST(Experiments, FailingAssertionIsReported) {
  // A model never beats itself strictly.
  const auto spec = experiment_from_json(tiny_experiment("", R"(, {"kind": "less", "evals": ["base", "base"]})"));
  const auto r = run_experiment(spec);
  EXPECT_FALSE(r.passed());
  ASSERT_EQ(r.assertions.size(), 3u);
  EXPECT_TRUE(r.assertions[0].passed);
  EXPECT_FALSE(r.assertions[2].passed);
  EXPECT_NE(r.report().find("FAIL"), std::string::npos);
}

TEST(TranscriptIo, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "dbias_io_test";
  std::filesystem::create_directories(dir);
  const std::vector<std::pair<std::string, std::vector<std::string>>> rows{{"u1", {"play", "abut"}}, {"u2", {}}};
  save_transcripts(dir / "t.txt", rows);
  const auto back = load_transcripts(dir / "t.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("u1"), rows[0].second);
  EXPECT_TRUE(back.at("u2").empty());

  std::ofstream(dir / "dup.txt") << "u1\tA B\nu1\tc\n";
  EXPECT_THROW(load_transcripts(dir / "dup.txt"), InputError);
  std::ofstream(dir / "case.txt") << "u1\tPlay,  ABUT\n";
  EXPECT_EQ(load_transcripts(dir / "case.txt").at("u1"), rows[0].second);
  EXPECT_THROW(load_transcripts(dir / "missing.txt"), InputError);

  const std::map<std::string, std::vector<std::string>> lists{{"u1", {"abut", "zonk"}}, {"u2", {}}};
  save_bias_lists(dir / "b.json", lists);
  EXPECT_EQ(load_bias_lists(dir / "b.json"), lists);
  std::ofstream(dir / "bad.json") << "{\"u1\": 3}";
  EXPECT_THROW(load_bias_lists(dir / "bad.json"), InputError);
  std::filesystem::remove_all(dir);
}

TEST(DecodeRecord, JsonLine) {
  DecodeRecord r{"u7", {3, 4}, {"ab"}, -1.5, {}};
  EXPECT_EQ(to_json_line(r), R"({"log_score":-1.5,"tokens":[3,4],"utt_id":"u7","words":["ab"]})");
  r.n_best = {{{"ac"}, -2.0}};
  EXPECT_NE(to_json_line(r).find(R"("n_best":[{"log_score":-2.0,"words":["ac"]}])"), std::string::npos);
}

}  // namespace
}  // namespace dbias
