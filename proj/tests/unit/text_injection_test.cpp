#include <gtest/gtest.h>

#include "dbias/text_injection.hpp"
#include "fixtures.hpp"

namespace dbias {
namespace {

const std::vector<std::string> kBead{"bead"};

int row_symbol(const Matrix& f, Index r) {
  Index arg = 0;
  EXPECT_DOUBLE_EQ(f.row(r).sum(), 1.0);
  f.row(r).maxCoeff(&arg);
  return arg == f.cols() - 1 ? -1 : static_cast<int>(arg);
}

TEST(TextFeatures, FixedRepeatDuplicatesEachPhoneme) {
  const auto lex = testing::tiny_lexicon();
  const auto vocab = testing::tiny_vocab();
  Rng rng(1);
  const auto ex = make_text_features(kBead, lex, vocab, 0.0, RepeatPolicy::fixed_count(2), rng);
  EXPECT_EQ(ex.phoneme_ids, (std::vector<int>{1, 4, 0, 3}));
  EXPECT_EQ(ex.row_symbols, (std::vector<int>{1, 1, 4, 4, 0, 0, 3, 3}));
  ASSERT_EQ(ex.features.rows(), 8);
  ASSERT_EQ(ex.features.cols(), text_feature_dim(lex));
  for (Index r = 0; r < 8; ++r) EXPECT_EQ(row_symbol(ex.features, r), ex.row_symbols[static_cast<size_t>(r)]);
  EXPECT_EQ(ex.target_subwords, vocab.encode_words(kBead));
}

TEST(TextFeatures, MaskExtremes) {
  const auto lex = testing::tiny_lexicon();
  const auto vocab = testing::tiny_vocab();
  const std::vector<std::string> words{"bead", "cafe", "hag"};
  Rng rng(2);
  const auto none = make_text_features(words, lex, vocab, 0.0, RepeatPolicy::uniform(1, 3), rng);
  for (int s : none.row_symbols) EXPECT_GE(s, 0);
  const auto all = make_text_features(words, lex, vocab, 1.0, RepeatPolicy::uniform(1, 3), rng);
  for (int s : all.row_symbols) EXPECT_EQ(s, -1);
  EXPECT_EQ(all.target_subwords, none.target_subwords);
  EXPECT_EQ(all.target_subwords, vocab.encode_words(words));
}

TEST(TextFeatures, RowsAreOneHotAndRepeatsInRange) {
  const auto lex = testing::tiny_lexicon();
  const auto vocab = testing::tiny_vocab();
  const std::vector<std::string> words{"cafe", "dhg"};
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ex = make_text_features(words, lex, vocab, 0.3, RepeatPolicy::uniform(1, 3), rng);
    // Mask is drawn before repetition, so the rows split into one constant
    // run of 1..3 per phoneme.
    const size_t n = ex.phoneme_ids.size(), m = ex.row_symbols.size();
    std::vector<std::vector<bool>> ok(n + 1, std::vector<bool>(m + 1, false));
    ok[0][0] = true;
    for (size_t k = 1; k <= n; ++k) {
      for (size_t r = 1; r <= m; ++r) {
        for (size_t len = 1; len <= 3 && len <= r; ++len) {
          const int sym = ex.row_symbols[r - len];
          bool run = sym == -1 || sym == ex.phoneme_ids[k - 1];
          for (size_t j = r - len; j < r; ++j) run = run && ex.row_symbols[j] == sym;
          if (run && ok[k - 1][r - len]) ok[k][r] = true;
        }
      }
    }
    EXPECT_TRUE(ok[n][m]);
    EXPECT_EQ(static_cast<Index>(ex.row_symbols.size()), ex.features.rows());
    EXPECT_GE(ex.features.rows(), static_cast<Index>(ex.phoneme_ids.size()));
    EXPECT_LE(ex.features.rows(), static_cast<Index>(3 * ex.phoneme_ids.size()));
    for (Index i = 0; i < ex.features.rows(); ++i) row_symbol(ex.features, i);
  }
}

TEST(TextFeatures, MaskRateMatchesProbability) {
  const auto lex = testing::tiny_lexicon();
  const auto vocab = testing::tiny_vocab();
  const std::vector<std::string> words{"bead", "cafe", "bead", "cafe"};
  Rng rng(4);
  int masked = 0, total = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto ex = make_text_features(words, lex, vocab, 0.15, RepeatPolicy::fixed_count(1), rng);
    for (int s : ex.row_symbols) masked += s == -1;
    total += static_cast<int>(ex.row_symbols.size());
  }
  EXPECT_NEAR(static_cast<double>(masked) / total, 0.15, 0.01);
}

TEST(TextFeatures, RepeatPolicyDraws) {
  Rng rng(5);
  int seen[4] = {0, 0, 0, 0};
  const auto u = RepeatPolicy::uniform(1, 3);
  for (int i = 0; i < 3000; ++i) {
    const int r = u.draw(rng);
    ASSERT_GE(r, 1);
    ASSERT_LE(r, 3);
    ++seen[r];
  }
  for (int r = 1; r <= 3; ++r) EXPECT_NEAR(seen[r], 1000, 120);
  EXPECT_EQ(RepeatPolicy::fixed_count(4).draw(rng), 4);
}

TEST(TextFeatures, EmptyTranscriptThrows) {
  const auto lex = testing::tiny_lexicon();
  const auto vocab = testing::tiny_vocab();
  Rng rng(6);
  EXPECT_THROW(make_text_features(std::vector<std::string>{}, lex, vocab, 0.0, RepeatPolicy::fixed_count(1), rng),
               InputError);
}

std::vector<TrainItem> paired_items(int n) {
  std::vector<TrainItem> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({"u" + std::to_string(i), Matrix::Constant(6, 3, i + 1.0), false, {"bead", "cafe"}, Origin::kSpeech});
  }
  return out;
}

TEST(PairedSwap, ExtremesAndReproducibility) {
  const auto lex = testing::tiny_lexicon();
  const auto vocab = testing::tiny_vocab();
  const auto items = paired_items(20);
  Rng r0(7);
  const auto kept = paired_text_swap(items, 0.0, {}, lex, vocab, r0);
  for (size_t i = 0; i < kept.size(); ++i) {
    EXPECT_FALSE(kept[i].is_text);
    EXPECT_EQ(kept[i].features, items[i].features);
    EXPECT_EQ(kept[i].origin, Origin::kSpeech);
  }
  Rng r1(7);
  const auto swapped = paired_text_swap(items, 1.0, {}, lex, vocab, r1);
  for (size_t i = 0; i < swapped.size(); ++i) {
    EXPECT_TRUE(swapped[i].is_text);
    EXPECT_EQ(swapped[i].origin, Origin::kSwapped);
    EXPECT_EQ(swapped[i].words, items[i].words);
    EXPECT_EQ(swapped[i].features.cols(), text_feature_dim(lex));
  }
  Rng a(8), b(8);
  const auto x = paired_text_swap(items, 0.5, {}, lex, vocab, a);
  const auto y = paired_text_swap(items, 0.5, {}, lex, vocab, b);
  int n_swapped = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].is_text, y[i].is_text);
    EXPECT_EQ(x[i].features, y[i].features);
    n_swapped += x[i].is_text;
  }
  EXPECT_GT(n_swapped, 0);
  EXPECT_LT(n_swapped, 20);
}

EncodedItem encoded(Tape& tape, int frames, int width, std::vector<int> target, Origin o, double fill) {
  return {tape.constant(Matrix::Constant(frames, width, fill)), std::move(target), o};
}

TEST(MixedBatch, ConcatenatesAndPads) {
  Tape tape(false);
  const std::vector<EncodedItem> speech{encoded(tape, 5, 3, {1, 2}, Origin::kSpeech, 1.0),
                                        encoded(tape, 2, 3, {3}, Origin::kSwapped, 2.0)};
  const std::vector<EncodedItem> text{encoded(tape, 7, 3, {4, 4, 4}, Origin::kText, 3.0)};
  const auto batch = batch_concat(speech, text);
  ASSERT_EQ(batch.size(), 3u);
  EXPECT_EQ(batch.max_length, 7);
  EXPECT_EQ(batch.max_target, 3);
  EXPECT_EQ(batch.valid_lengths, (std::vector<int>{5, 2, 7}));
  EXPECT_EQ(batch.target_lengths, (std::vector<int>{2, 1, 3}));
  EXPECT_EQ(batch.origins, (std::vector<Origin>{Origin::kSpeech, Origin::kSwapped, Origin::kText}));
  EXPECT_EQ(batch.targets[1], (std::vector<int>{3, 0, 0}));
  for (size_t b = 0; b < 3; ++b) EXPECT_EQ(batch.encoder_states[b].rows(), 7);
  EXPECT_EQ(batch.encoder_states[1].value().bottomRows(5), Matrix::Zero(5, 3));
  EXPECT_EQ(batch.states(1).value(), Matrix::Constant(2, 3, 2.0));
  EXPECT_EQ(std::vector<int>(batch.target(0).begin(), batch.target(0).end()), (std::vector<int>{1, 2}));
}

TEST(MixedBatch, WidthMismatchThrows) {
  Tape tape(false);
  const std::vector<EncodedItem> speech{encoded(tape, 5, 3, {1}, Origin::kSpeech, 1.0)};
  const std::vector<EncodedItem> text{encoded(tape, 5, 4, {1}, Origin::kText, 1.0)};
  EXPECT_THROW(batch_concat(speech, text), ConfigError);
}

}  // namespace
}  // namespace dbias
