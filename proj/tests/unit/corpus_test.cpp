#include <gtest/gtest.h>

#include "dbias/corpus.hpp"
#include <filesystem>
#include <set>

#include "dbias/rare_words.hpp"

namespace dbias {
namespace {

SyntheticCorpusConfig small() {
  SyntheticCorpusConfig c;
  c.n_common_words = 20;
  c.n_rare_words = 40;
  c.n_homophone_pairs = 10;
  c.n_train = 60;
  c.n_dev = 5;
  c.n_test = 20;
  c.n_text_sentences = 10;
  c.seed = 3;
  return c;
}

TEST(Corpus, SeedReproducible) {
  const auto a = synth_corpus(small());
  const auto b = synth_corpus(small());
  EXPECT_EQ(dataset_hash(a.data), dataset_hash(b.data));
  EXPECT_EQ(a.rare_words, b.rare_words);
  auto other = small();
  other.seed = 4;
  EXPECT_NE(dataset_hash(synth_corpus(other).data), dataset_hash(a.data));
}

TEST(Corpus, NoiselessFeaturesArePrototypeRuns) {
  auto cfg = small();
  cfg.noise_std = 0;
  const auto c = synth_corpus(cfg);
  for (const auto* split : {&c.data.train, &c.data.test}) {
    for (const auto& u : *split) {
      const Matrix& f = u.features;
      const RowVector silence = f.row(0);
      std::vector<std::pair<RowVector, int>> runs;
      for (Index r = 0; r < f.rows(); ++r) {
        if (!runs.empty() && f.row(r) == runs.back().first) {
          ++runs.back().second;
        } else {
          runs.push_back({f.row(r), 1});
        }
      }
      std::vector<int> phone_runs;
      int silences = 0;
      for (const auto& [row, n] : runs) {
        if (row == silence) {
          ++silences;
        } else {
          phone_runs.push_back(n);
        }
      }
      size_t n_phonemes = 0;
      for (const auto& w : u.words) n_phonemes += c.lexicon.g2p(w).size();
      ASSERT_EQ(phone_runs.size(), n_phonemes) << u.id;
      for (int n : phone_runs) {
        EXPECT_GE(n, cfg.frames_per_phoneme.first);
        EXPECT_LE(n, cfg.frames_per_phoneme.second);
      }
      EXPECT_EQ(silences, static_cast<int>(u.words.size()) + 1);
      EXPECT_EQ(runs.front().second, cfg.silence_frames);
    }
  }
}

TEST(Corpus, HomophonesShareSoundNotSpelling) {
  const auto c = synth_corpus(small());
  ASSERT_EQ(c.homophones.size(), 10u);
  const std::set<std::string> rare(c.rare_words.begin(), c.rare_words.end());
  for (const auto& [common, alt] : c.homophones) {
    EXPECT_EQ(c.lexicon.g2p(common), c.lexicon.g2p(alt));
    ASSERT_EQ(common.size(), alt.size());
    int diff = 0;
    for (size_t i = 0; i < common.size(); ++i) diff += common[i] != alt[i];
    EXPECT_EQ(diff, 1) << common << " " << alt;
    EXPECT_TRUE(rare.contains(alt));
  }
}

TEST(Corpus, KeptOnsetsUseTheDefaultGrapheme) {
  auto cfg = small();
  cfg.respell_onset = false;
  cfg.rare_respellings = 4;
  const auto c = synth_corpus(cfg);
  for (const auto& [w, pron] : c.lexicon.entries()) {
    EXPECT_EQ(w[0], cfg.letters[static_cast<size_t>(pron[0])]) << w;
  }
  for (const auto& [common, alt] : c.homophones) EXPECT_EQ(common[0], alt[0]);
}

TEST(Corpus, EveryWordHasAUniqueSpellingAndRulesAgree) {
  const auto c = synth_corpus(small());
  std::set<std::vector<int>> prons;
  for (const auto& [w, pron] : c.lexicon.entries()) {
    PhonemeLexicon rules_only(c.lexicon.inventory(), {}, c.lexicon.fallback_rules());
    EXPECT_EQ(rules_only.g2p(w), pron) << w;
    prons.insert(pron);
  }
  EXPECT_EQ(prons.size() + c.homophones.size(), c.lexicon.entries().size());
}

TEST(Corpus, IrregularRespellingsHideThePronunciation) {
  auto cfg = small();
  cfg.irregular_respellings = true;
  cfg.respell_onset = false;
  const auto c = synth_corpus(cfg);
  PhonemeLexicon rules_only(c.lexicon.inventory(), {}, c.lexicon.fallback_rules());
  int disagree = 0;
  for (const auto& [w, pron] : c.lexicon.entries()) disagree += rules_only.g2p(w) != pron;
  EXPECT_GT(disagree, 0);
  for (const auto& [common, alt] : c.homophones) {
    EXPECT_EQ(c.lexicon.g2p(common), c.lexicon.g2p(alt));
  }
  for (const auto& w : c.common_words) EXPECT_EQ(rules_only.g2p(w), c.lexicon.g2p(w)) << w;
}

TEST(Corpus, RareWordsFollowTheConfiguredSplit) {
  const auto cfg = small();
  const auto c = synth_corpus(cfg);
  std::map<std::string, int> utts_with;
  for (const auto& u : c.data.train) {
    for (const auto& w : std::set<std::string>(u.words.begin(), u.words.end())) ++utts_with[w];
  }
  const std::set<std::string> common(c.common_words.begin(), c.common_words.end());
  for (const auto& [w, n] : utts_with) {
    if (!common.contains(w)) EXPECT_LE(n, cfg.max_rare_occurrences) << w;
  }
  for (const auto& w : c.test_rare_words) EXPECT_EQ(utts_with.count(w), 0u) << w;
  for (const auto& u : c.data.test) {
    int n = 0;
    for (const auto& w : u.words) n += !common.contains(w);
    EXPECT_GE(n, cfg.test_rare_per_utterance.first);
    EXPECT_LE(n, cfg.test_rare_per_utterance.second);
  }
  const auto rare = build_rare_set(transcripts(c.data.train), cfg.n_common_words);
  EXPECT_EQ(rare.common(), common);
  for (const auto& w : rare.words()) EXPECT_FALSE(common.contains(w));
}

TEST(Corpus, TextHoldsEveryRareWordAlone) {
  const auto c = synth_corpus(small());
  std::set<std::string> singles;
  for (const auto& s : c.data.text) {
    if (s.size() == 1) singles.insert(s[0]);
  }
  for (const auto& w : c.rare_words) EXPECT_TRUE(singles.contains(w)) << w;
  EXPECT_EQ(c.data.text.size(), 10u + c.rare_words.size());
}

TEST(Corpus, GroupingKeys) {
  auto cfg = small();
  cfg.chapter_size = 4;
  cfg.book_size = 8;
  const auto c = synth_corpus(cfg);
  EXPECT_EQ(c.data.test[0].chapter, c.data.test[3].chapter);
  EXPECT_NE(c.data.test[3].chapter, c.data.test[4].chapter);
  EXPECT_EQ(c.data.test[4].book, c.data.test[7].book);
  EXPECT_NE(c.data.test[7].book, c.data.test[8].book);
}

TEST(Corpus, ImpossibleConfigsThrow) {
  auto cfg = small();
  cfg.n_homophone_pairs = 50;
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
  cfg = small();
  cfg.letters = "abcdefghij";
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
  cfg = small();
  cfg.graphemes_per_phoneme = 1;
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
  cfg = small();
  cfg.rare_plain_fraction = 1.5;
  EXPECT_THROW(synth_corpus(cfg), ConfigError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  const auto c = synth_corpus(small());
  const auto dir = std::filesystem::temp_directory_path() / "dbias_corpus_test";
  std::filesystem::remove_all(dir);
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  EXPECT_EQ(dataset_hash(back.data), dataset_hash(c.data));
  EXPECT_EQ(back.word_counts, c.word_counts);
  EXPECT_EQ(back.lexicon.entries(), c.lexicon.entries());
  EXPECT_EQ(back.homophones, c.homophones);
  EXPECT_EQ(back.test_rare_words, c.test_rare_words);
  EXPECT_EQ(back.config.rare_plain_fraction, c.config.rare_plain_fraction);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dbias
