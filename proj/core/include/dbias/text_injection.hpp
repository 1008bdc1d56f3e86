#pragma once

#include <span>
#include <string>
#include <vector>

#include "dbias/autograd.hpp"
#include "dbias/lexicon.hpp"
#include "dbias/vocab.hpp"

namespace dbias {

/// How many times each (possibly masked) phoneme is emitted.
struct RepeatPolicy {
  bool fixed = false;
  int count = 2;     // used when fixed
  int min_count = 1; // uniform range otherwise
  int max_count = 3;

  static RepeatPolicy fixed_count(int r) { return RepeatPolicy{true, r, r, r}; }
  static RepeatPolicy uniform(int lo, int hi) { return RepeatPolicy{false, lo, lo, hi}; }
  int draw(Rng& rng) const;
};

struct TextFeatureConfig {
  double mask_p = 0.15;
  RepeatPolicy repeat = RepeatPolicy::uniform(1, 3);
};

/// Text feature width for a lexicon: one-hot phonemes plus a mask dimension.
inline int text_feature_dim(const PhonemeLexicon& lexicon) { return lexicon.num_phonemes() + 1; }

struct UnspokenTextExample {
  std::vector<std::string> transcript;
  std::vector<int> phoneme_ids;
  /// Per feature row: phoneme id, or -1 for the mask vector.
  std::vector<int> row_symbols;
  Matrix features;  // [N x D2]
  std::vector<int> target_subwords;
};

/// g2p per word, independent masking with probability mask_p, then each
/// symbol repeated per `repeat`. The target is the dropout-free BPE encoding.
UnspokenTextExample make_text_features(std::span<const std::string> transcript,
                                       const PhonemeLexicon& lexicon, const SubwordVocab& vocab,
                                       double mask_p, const RepeatPolicy& repeat, Rng& rng);

enum class Origin { kSpeech, kText, kSwapped };
std::string to_string(Origin o);

/// One training item before encoding: audio features, or text features when
/// `is_text` (unspoken text or a swapped paired utterance).
struct TrainItem {
  std::string id;
  Matrix features;
  bool is_text = false;
  std::vector<std::string> words;
  Origin origin = Origin::kSpeech;
};

/// Each paired (speech) item independently, with probability p, drops its
/// audio and takes text features of its transcript; its origin becomes
/// kSwapped. Other items pass through unchanged.
std::vector<TrainItem> paired_text_swap(std::span<const TrainItem> paired, double p,
                                        const TextFeatureConfig& text_config,
                                        const PhonemeLexicon& lexicon, const SubwordVocab& vocab,
                                        Rng& rng);

/// An encoded item ready to be batched.
struct EncodedItem {
  Var states;  // [frames x H]
  std::vector<int> target;
  Origin origin = Origin::kSpeech;
};

/// Encoder states of speech and text items concatenated on the batch axis,
/// each zero-padded to the longest item. Losses read only the first
/// valid_lengths[b] frames and target_lengths[b] labels.
struct MixedBatch {
  std::vector<Var> encoder_states;           // B items of [L x H]
  std::vector<std::vector<int>> targets;     // B rows padded with blank to U_max
  std::vector<int> valid_lengths;
  std::vector<int> target_lengths;
  std::vector<Origin> origins;
  int max_length = 0;  // L
  int max_target = 0;  // U_max

  size_t size() const { return encoder_states.size(); }
  /// Unpadded states of item b.
  Var states(size_t b) const;
  std::span<const int> target(size_t b) const;
};

/// Throws ConfigError when hidden widths differ.
MixedBatch batch_concat(std::span<const EncodedItem> speech, std::span<const EncodedItem> text);

}  // namespace dbias
