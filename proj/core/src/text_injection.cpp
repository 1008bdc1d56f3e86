#include "dbias/text_injection.hpp"

namespace dbias {

int RepeatPolicy::draw(Rng& rng) const {
  if (fixed) return count;
  return static_cast<int>(uniform_int(rng, min_count, max_count));
}

UnspokenTextExample make_text_features(std::span<const std::string> transcript,
                                       const PhonemeLexicon& lexicon, const SubwordVocab& vocab,
                                       double mask_p, const RepeatPolicy& repeat, Rng& rng) {
  if (transcript.empty()) throw InputError("make_text_features: empty transcript");
  UnspokenTextExample ex;
  ex.transcript.assign(transcript.begin(), transcript.end());
  ex.phoneme_ids = lexicon.g2p_words(transcript);
  // Masking happens before repetition, so all copies of a phoneme agree.
  for (int ph : ex.phoneme_ids) {
    const int symbol = bernoulli(rng, mask_p) ? -1 : ph;
    const int r = repeat.draw(rng);
    for (int i = 0; i < r; ++i) ex.row_symbols.push_back(symbol);
  }
  const int dim = text_feature_dim(lexicon);
  const int mask_col = dim - 1;
  ex.features = Matrix::Zero(static_cast<Index>(ex.row_symbols.size()), dim);
  for (size_t i = 0; i < ex.row_symbols.size(); ++i) {
    const int s = ex.row_symbols[i];
    ex.features(static_cast<Index>(i), s < 0 ? mask_col : s) = 1.0;
  }
  ex.target_subwords = vocab.encode_words(transcript);
  return ex;
}

std::string to_string(Origin o) {
  switch (o) {
    case Origin::kSpeech: return "speech";
    case Origin::kText: return "text";
    case Origin::kSwapped: return "swapped";
  }
  return "?";
}

std::vector<TrainItem> paired_text_swap(std::span<const TrainItem> paired, double p,
                                        const TextFeatureConfig& text_config,
                                        const PhonemeLexicon& lexicon, const SubwordVocab& vocab,
                                        Rng& rng) {
  std::vector<TrainItem> out;
  out.reserve(paired.size());
  for (const auto& item : paired) {
    if (item.is_text || !bernoulli(rng, p)) {
      out.push_back(item);
      continue;
    }
    TrainItem swapped = item;
    swapped.features =
        make_text_features(item.words, lexicon, vocab, text_config.mask_p, text_config.repeat, rng).features;
    swapped.is_text = true;
    swapped.origin = Origin::kSwapped;
    out.push_back(std::move(swapped));
  }
  return out;
}

Var MixedBatch::states(size_t b) const {
  const Var& s = encoder_states.at(b);
  return valid_lengths[b] == s.rows() ? s : slice_rows(s, 0, valid_lengths[b]);
}

std::span<const int> MixedBatch::target(size_t b) const {
  return std::span<const int>(targets.at(b)).first(static_cast<size_t>(target_lengths[b]));
}

MixedBatch batch_concat(std::span<const EncodedItem> speech, std::span<const EncodedItem> text) {
  MixedBatch batch;
  Index width = -1;
  for (const auto* group : {&speech, &text}) {
    for (const auto& item : *group) {
      if (width < 0) width = item.states.cols();
      if (item.states.cols() != width) throw ConfigError("batch_concat: hidden width mismatch");
      batch.max_length = std::max(batch.max_length, static_cast<int>(item.states.rows()));
      batch.max_target = std::max(batch.max_target, static_cast<int>(item.target.size()));
    }
  }
  for (const auto* group : {&speech, &text}) {
    for (const auto& item : *group) {
      const int len = static_cast<int>(item.states.rows());
      Var padded = item.states;
      if (len < batch.max_length) {
        Tape& tape = item.states.tape();
        const Var parts[] = {item.states, tape.constant(Matrix::Zero(batch.max_length - len, width))};
        padded = concat_rows(parts);
      }
      batch.encoder_states.push_back(padded);
      batch.valid_lengths.push_back(len);
      std::vector<int> t = item.target;
      batch.target_lengths.push_back(static_cast<int>(t.size()));
      t.resize(static_cast<size_t>(batch.max_target), SubwordVocab::kBlankId);
      batch.targets.push_back(std::move(t));
      batch.origins.push_back(item.origin);
    }
  }
  return batch;
}

}  // namespace dbias
