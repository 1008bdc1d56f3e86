#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dbias/common.hpp"
#include "dbias/evaluation.hpp"
#include "dbias/lexicon.hpp"

namespace dbias {

struct SyntheticCorpusConfig {
  int n_phonemes = 12;
  int phoneme_prototype_dim = 16;  // D1
  /// Letter i spells phoneme i % n_phonemes; letters[p] is the default.
  std::string letters = "abcdefghijklmnopqrstuvwx";
  int graphemes_per_phoneme = 2;
  /// Phonemes per rare word spelled with an alternate grapheme.
  int rare_respellings = 1;
  double rare_plain_fraction = 0.0;  // rare words kept in default spelling
  bool respell_onset = true;  // false keeps each word's first grapheme
  /// Respell with any letter other than the phoneme's default, so spelling
  /// no longer determines pronunciation.
  bool irregular_respellings = false;
  int n_common_words = 60;
  int n_rare_words = 160;
  int n_homophone_pairs = 40;
  /// Share of the rare words that occur in training transcripts.
  double train_rare_fraction = 0.5;
  int max_rare_occurrences = 2;
  std::pair<int, int> phonemes_per_word{2, 4};
  std::pair<int, int> frames_per_phoneme{2, 4};
  std::pair<int, int> words_per_utterance{3, 6};
  std::pair<int, int> test_rare_per_utterance{1, 2};
  double noise_std = 0.3;
  int silence_frames = 2;
  int word_gap_frames = 2;
  int n_train = 600;
  int n_dev = 100;
  int n_test = 200;
  int n_text_sentences = 200;
  int chapter_size = 20;
  int book_size = 100;
  uint64_t seed = 17;

  void validate() const;
};

struct Utterance {
  std::string id;
  Matrix features;  // [T x D1]
  std::vector<std::string> words;
  std::string chapter;
  std::string book;
};

struct Dataset {
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
  /// Unspoken text: sentences plus one-word transcripts of every rare word.
  std::vector<std::vector<std::string>> text;
  int feature_dim = 0;
};

struct SyntheticCorpus {
  SyntheticCorpusConfig config;
  Dataset data;
  PhonemeLexicon lexicon;
  std::map<std::string, int64_t> word_counts;  // training transcripts
  std::vector<std::string> common_words;
  std::vector<std::string> rare_words;       // all configured rare words
  std::vector<std::string> test_rare_words;  // rare words never seen in training
  /// (common, rare) spellings sharing one pronunciation.
  std::vector<std::pair<std::string, std::string>> homophones;
};

SyntheticCorpus synth_corpus(const SyntheticCorpusConfig& config);

/// JSON object with the config fields; keys absent from `text` keep their
/// value from `base`, unknown keys are a ConfigError.
SyntheticCorpusConfig parse_corpus_config(std::string_view text, SyntheticCorpusConfig base = {});
std::string dump_corpus_config(const SyntheticCorpusConfig& config);

std::vector<std::vector<std::string>> transcripts(const std::vector<Utterance>& utts);
/// Training transcript counts plus every word of the unspoken text, for BPE.
std::map<std::string, int64_t> subword_training_counts(const SyntheticCorpus& corpus);
std::vector<UtteranceKey> utterance_keys(const std::vector<Utterance>& utts);

/// Directory layout: corpus.json, lexicon.txt, rules.txt, counts.tsv,
/// text.txt and per split "<split>.tsv" + "<split>.feats" (float32 LE).
void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
SyntheticCorpus load_corpus(const std::filesystem::path& dir);

uint64_t dataset_hash(const Dataset& data);

}  // namespace dbias
