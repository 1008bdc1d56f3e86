#include <gtest/gtest.h>

#include <fstream>

#include "dbias/checkpoint.hpp"
#include "dbias/corpus.hpp"
#include "dbias/training.hpp"
#include "fixtures.hpp"

namespace dbias {
namespace {

RareWordSet rare_set() {
  std::map<std::string, int64_t> counts{{"the", 50}, {"a", 40}, {"of", 30}};
  for (int i = 0; i < 30; ++i) counts["r" + std::to_string(i)] = 1;
  return RareWordSet(3, counts);
}

TEST(TrainingBiasList, BatchRareWordsPlusDistractors) {
  const auto rare = rare_set();
  const std::vector<std::vector<std::string>> batch{{"the", "r1", "r2"}, {"R1", "a", "r3"}};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto list = sample_training_bias_list(batch, rare, 5, rng);
    EXPECT_EQ(list.size(), 8u);
    std::set<std::string> s(list.begin(), list.end());
    EXPECT_EQ(s.size(), list.size());
    for (const char* w : {"r1", "r2", "r3"}) EXPECT_TRUE(s.contains(w));
    for (const auto& w : list) EXPECT_TRUE(rare.contains(w));
    EXPECT_FALSE(s.contains("the"));
  }
  Rng rng(1);
  auto exact = sample_training_bias_list(batch, rare, 0, rng);
  std::sort(exact.begin(), exact.end());
  EXPECT_EQ(exact, (std::vector<std::string>{"r1", "r2", "r3"}));
  Rng big(2);
  EXPECT_EQ(sample_training_bias_list(batch, rare, 1000, big).size(), 30u);
}

TEST(SpecAugment, Identities) {
  Rng rng(3);
  Matrix f = Matrix::Random(20, 6).array() + 2.0;
  EXPECT_EQ(spec_augment(f, 0, 4, 0, 2, rng), f);
  EXPECT_EQ(spec_augment(f, 0, 0, 3, 0, rng), f);
  bool saw_full = false;
  for (int i = 0; i < 200 && !saw_full; ++i) saw_full = spec_augment(f, 1, 20, 0, 0, rng).isZero();
  EXPECT_TRUE(saw_full);
  EXPECT_THROW(spec_augment(f, 1, 21, 0, 0, rng), ConfigError);
}

TEST(SpecAugment, MaskedEntriesBounded) {
  Rng rng(4);
  const Matrix f = Matrix::Random(30, 8).array() + 2.0;
  for (int i = 0; i < 200; ++i) {
    const Matrix g = spec_augment(f, 2, 5, 2, 3, rng);
    const auto zeros = (g.array() == 0.0).count();
    EXPECT_LE(zeros, 2 * 5 * 8 + 2 * 3 * 30);
    for (Index r = 0; r < g.rows(); ++r) {
      for (Index c = 0; c < g.cols(); ++c) {
        if (g(r, c) != 0.0) EXPECT_EQ(g(r, c), f(r, c));
      }
    }
  }
}

TEST(Optimizer, SgdStepAndClip) {
  Parameter p(Matrix::Constant(1, 2, 1.0));
  OptimizerGroups g;
  g.lr_base = 0.1;
  g.clip_norm = 0;
  std::vector<GradEntry> grads{{ParamGroup::kOutput, &p, (Matrix(1, 2) << 3.0, -4.0).finished()}};
  auto st = optimizer_step(g, grads);
  EXPECT_DOUBLE_EQ(st.grad_norm, 5.0);
  EXPECT_FALSE(st.clipped);
  EXPECT_NEAR(p.value(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(p.value(0, 1), 1.4, 1e-15);
  g.clip_norm = 1.0;
  st = optimizer_step(g, grads);
  EXPECT_TRUE(st.clipped);
  EXPECT_NEAR(p.value(0, 0), 0.7 - 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(p.value(0, 1), 1.4 + 0.1 * 0.8, 1e-15);
  EXPECT_EQ(g.steps, 2);
}

TEST(Optimizer, GroupRatesAndFreezing) {
  Parameter base(Matrix::Constant(1, 1, 1.0));
  Parameter bias(Matrix::Constant(1, 1, 1.0));
  Parameter frozen(Matrix::Constant(1, 1, 1.0));
  OptimizerGroups g;
  g.lr_base = 0.01;
  g.lr_biasing = 0.5;
  g.clip_norm = 0;
  g.frozen = {ParamGroup::kPredictor};
  EXPECT_EQ(g.lr(ParamGroup::kPredictor), 0.0);
  std::vector<GradEntry> grads{{ParamGroup::kJointer, &base, Matrix::Constant(1, 1, 1.0)},
                               {ParamGroup::kBiasing, &bias, Matrix::Constant(1, 1, 1.0)},
                               {ParamGroup::kPredictor, &frozen, Matrix::Constant(1, 1, 1.0)}};
  optimizer_step(g, grads);
  EXPECT_DOUBLE_EQ(base.value(0, 0), 0.99);
  EXPECT_DOUBLE_EQ(bias.value(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(frozen.value(0, 0), 1.0);
}

TEST(Optimizer, AdamFirstStepIsSignedLr) {
  Parameter p(Matrix::Zero(1, 3));
  OptimizerGroups g;
  g.kind = OptimizerKind::kAdam;
  g.lr_base = 0.01;
  g.clip_norm = 0;
  std::vector<GradEntry> grads{{ParamGroup::kOutput, &p, (Matrix(1, 3) << 2.0, -0.5, 1e-3).finished()}};
  optimizer_step(g, grads);
  EXPECT_NEAR(p.value(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 1), 0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 2), -0.01, 1e-7);
}

TEST(Optimizer, Warmup) {
  OptimizerGroups g;
  g.lr_base = 1.0;
  g.warmup_steps = 4;
  EXPECT_DOUBLE_EQ(g.lr(ParamGroup::kOutput), 0.25);
  g.steps = 3;
  EXPECT_DOUBLE_EQ(g.lr(ParamGroup::kOutput), 1.0);
  g.steps = 10;
  EXPECT_DOUBLE_EQ(g.lr(ParamGroup::kOutput), 1.0);
}

TEST(Recipe, JsonRoundTripAndErrors) {
  TrainRecipe r;
  r.mode = TrainMode::kFinetuneBias;
  r.epochs = 7;
  r.max_extra = 3;
  r.optimizer.kind = OptimizerKind::kAdam;
  r.optimizer.lr_biasing = 2e-3;
  r.optimizer.frozen = {ParamGroup::kPredictor};
  r.text.repeat = RepeatPolicy::fixed_count(2);
  r.biasing_config.variant = BiasVariant::kJointer;
  r.biasing_config.kind = WordEncoderKind::kLearnable;
  r.model.lookahead_frames = {0, 1};
  const auto back = recipe_from_json(recipe_to_json(r));
  EXPECT_EQ(recipe_to_json(back), recipe_to_json(r));
  EXPECT_EQ(back.mode, TrainMode::kFinetuneBias);
  EXPECT_EQ(back.optimizer.frozen, r.optimizer.frozen);
  EXPECT_EQ(back.biasing_config.variant, BiasVariant::kJointer);
  EXPECT_TRUE(back.text.repeat.fixed);
  EXPECT_THROW(recipe_from_json(R"({"epochs": 2, "bogus": 1})"), ConfigError);
  EXPECT_THROW(recipe_from_json(R"({"epochs": -1})"), ConfigError);
  EXPECT_THROW(recipe_from_json("{"), ConfigError);
  EXPECT_THROW(recipe_from_json(R"({"mode": "sideways"})"), ConfigError);
  EXPECT_EQ(parse_train_mode(to_string(TrainMode::kScratchUstr)), TrainMode::kScratchUstr);
}

SyntheticCorpusConfig small_corpus_config() {
  SyntheticCorpusConfig c;
  c.n_common_words = 12;
  c.n_rare_words = 12;
  c.max_rare_occurrences = 1;
  c.n_homophone_pairs = 4;
  c.n_train = 12;
  c.n_dev = 2;
  c.n_test = 4;
  c.n_text_sentences = 6;
  c.seed = 5;
  return c;
}

struct SmallRun {
  SyntheticCorpus corpus = synth_corpus(small_corpus_config());
  SubwordVocab vocab = SubwordVocab::train(subword_training_counts(corpus), 40);
  RareWordSet rare = build_rare_set(transcripts(corpus.data.train), corpus.config.n_common_words);
  FitData data() const { return {corpus.data.train, &corpus.data.text, vocab, corpus.lexicon, rare}; }

  TrainRecipe recipe(TrainMode mode) const {
    TrainRecipe r;
    r.mode = mode;
    r.epochs = 1;
    r.batch_speech = 4;
    r.batch_text = 2;
    r.max_extra = 2;
    ModelConfig m;
    m.d_hidden = 8;
    m.d_word_embed = 8;
    m.heads = 2;
    m.conv_channels = 8;
    m.ff_dim = 8;
    m.predictor_embed = 8;
    m.joint_dim = 8;
    r.model = sized_model_config(m, vocab, corpus.lexicon);
    r.biasing_config.attention_dim = 8;
    r.biasing_config.word_dim = 8;
    r.biasing_config.heads = 2;
    return r;
  }
};

TEST(Fit, ZeroEpochsAndZeroLrLeaveParamsUnchanged) {
  SmallRun s;
  auto r = s.recipe(TrainMode::kScratch);
  r.epochs = 0;
  const auto none = fit(r, s.data());
  Rng rng(r.seed);
  EXPECT_EQ(none.params.checksum(), ModelParams::init(r.model, rng).checksum());
  EXPECT_TRUE(none.log.empty());

  r.epochs = 1;
  r.optimizer.lr_base = 0;
  r.optimizer.lr_biasing = 0;
  const auto still = fit(r, s.data());
  EXPECT_EQ(still.params.checksum(), none.params.checksum());
  EXPECT_EQ(still.log.size(), 3u);
}

TEST(Fit, TrainingReducesLoss) {
  SmallRun s;
  auto r = s.recipe(TrainMode::kScratch);
  r.epochs = 6;
  r.augment.enabled = false;
  r.bpe_dropout = 0;
  r.optimizer.kind = OptimizerKind::kAdam;
  r.optimizer.lr_base = 1e-2;
  const auto res = fit(r, s.data());
  ASSERT_EQ(res.epoch_total.size(), 6u);
  EXPECT_LT(res.epoch_total.back(), res.epoch_total.front());
}

TEST(Fit, FrozenFinetuneTouchesOnlyBiasing) {
  SmallRun s;
  const auto base = fit(s.recipe(TrainMode::kScratch), s.data()).params;
  auto r = s.recipe(TrainMode::kFinetuneFrozen);
  r.optimizer.lr_base = 1.0;
  const auto tuned = fit(r, s.data(), base).params;
  ASSERT_TRUE(tuned.biasing.has_value());
  for (ParamGroup g : kAllParamGroups) {
    if (g != ParamGroup::kBiasing) EXPECT_EQ(tuned.checksum(g), base.checksum(g)) << to_string(g);
  }
  auto unfrozen = s.recipe(TrainMode::kFinetuneBias);
  const auto moved = fit(unfrozen, s.data(), base).params;
  EXPECT_NE(moved.checksum(ParamGroup::kJointer), base.checksum(ParamGroup::kJointer));
  EXPECT_THROW(fit(r, s.data()), ConfigError);
}

TEST(Fit, UstrUsesTextAndLogsOrigins) {
  SmallRun s;
  auto r = s.recipe(TrainMode::kScratchUstr);
  const auto res = fit(r, s.data());
  ASSERT_FALSE(res.log.empty());
  EXPECT_NE(res.log[0].find("\"text_items\":2"), std::string::npos) << res.log[0];
  auto no_text = s.data();
  no_text.text = nullptr;
  EXPECT_THROW(fit(r, no_text), ConfigError);
}

TEST(Fit, Deterministic) {
  SmallRun s;
  auto r = s.recipe(TrainMode::kScratch);
  r.epochs = 2;
  EXPECT_EQ(fit(r, s.data()).params.checksum(), fit(r, s.data()).params.checksum());
}

TEST(Checkpoint, RoundTripThroughFloat) {
  SmallRun s;
  auto r = s.recipe(TrainMode::kFinetuneBias);
  const auto base = fit(s.recipe(TrainMode::kScratch), s.data()).params;
  const auto tuned = fit(r, s.data(), base).params;
  const auto path = std::filesystem::temp_directory_path() / "dbias_ckpt_test.bin";
  save_checkpoint(path, tuned, s.vocab.hash(), 7, s.corpus.lexicon.num_phonemes());
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.vocab_hash, s.vocab.hash());
  EXPECT_EQ(ck.lexicon_hash, 7u);
  EXPECT_EQ(ck.params.checksum(), round_to_float(tuned).checksum());
  ASSERT_TRUE(ck.params.biasing.has_value());
  EXPECT_EQ(ck.params.biasing->config.variant, tuned.biasing->config.variant);
  EXPECT_THROW(save_checkpoint(path, tuned, 0, 0, 3), ConfigError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "garbage";
  }
  EXPECT_THROW(load_checkpoint(path), InputError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace dbias
