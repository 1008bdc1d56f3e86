#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbias/layers.hpp"
#include "dbias/lexicon.hpp"
#include "dbias/vocab.hpp"

namespace dbias {

/// Where the biasing attention takes its query from.
enum class BiasVariant { kPredictor, kEncoder, kEncPre, kJointer };
/// How bias words are embedded.
enum class WordEncoderKind { kTextual, kTexPho, kLearnable };

std::string to_string(BiasVariant v);
std::string to_string(WordEncoderKind k);
BiasVariant parse_bias_variant(std::string_view s);
WordEncoderKind parse_word_encoder_kind(std::string_view s);

/// A bias word (or word sequence) with its subword and phoneme encodings.
struct BiasEntry {
  std::string surface;
  std::vector<int> subword_ids;
  std::vector<int> phoneme_ids;
};

/// Builds an entry with dropout-free BPE and g2p, unless phonemes are given.
BiasEntry make_bias_entry(const std::string& surface, const SubwordVocab& vocab,
                          const PhonemeLexicon& lexicon,
                          std::optional<std::vector<int>> phonemes = std::nullopt);
std::vector<BiasEntry> make_bias_entries(std::span<const std::string> surfaces,
                                         const SubwordVocab& vocab, const PhonemeLexicon& lexicon);
/// One entry per line, optionally "surface<TAB>PH1 PH2 ..." to override g2p.
std::vector<BiasEntry> load_bias_list(const std::filesystem::path& path, const SubwordVocab& vocab,
                                      const PhonemeLexicon& lexicon);

struct BiasingConfig {
  BiasVariant variant = BiasVariant::kEncPre;
  WordEncoderKind kind = WordEncoderKind::kTexPho;
  int heads = 4;
  int attention_dim = 32;
  int word_dim = 32;  // M
};

/// Dimensions of the host transducer a biasing module attaches to.
struct BiasingHostDims {
  int encoder_dim;       // H
  int predictor_embed;   // width of the predictor embedding output
  int predictor_dim;     // H
  int joint_dim;
  int num_subwords;      // vocab size including blank
  int num_phonemes;
};

struct WordEncoderParams {
  Parameter subword_embedding;  // [num_subwords x M]
  LstmLayer subword_lstm;
  // Tex-Pho branch.
  Parameter phoneme_embedding;  // [num_phonemes x M]
  LstmLayer phoneme_lstm;
  Linear fuse;                  // [2M -> M]
  // Learnable kind.
  Parameter no_bias_row;        // [1 x M]
  SequenceDecoder text_decoder;
  SequenceDecoder phone_decoder;
};

enum class BiasSite { kPredictor, kEncoder, kJointer };

/// MHA over the bias embeddings plus a final projection back to the width of
/// the stream being biased. The final projection starts at zero so a fresh
/// module leaves the host model unchanged.
struct BiasingLayerParams {
  MultiHeadAttention attention;
  Linear projection;
  BiasSite site = BiasSite::kEncoder;

  void visit(const ParamVisitor& f, const std::string& prefix);
};

struct BiasingParams {
  BiasingConfig config;
  WordEncoderParams word_encoder;
  std::optional<BiasingLayerParams> encoder_layer;
  std::optional<BiasingLayerParams> predictor_layer;
  std::optional<BiasingLayerParams> jointer_layer;

  static BiasingParams init(const BiasingConfig& config, const BiasingHostDims& dims, Rng& rng);
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Counts attention queries (one per query row) for complexity assertions.
struct AttentionCounter {
  int64_t encoder = 0;
  int64_t predictor = 0;
  int64_t jointer = 0;
  int64_t total() const { return encoder + predictor + jointer; }
};

/// [(K+1) x M] embeddings; row 0 is the no-bias entry, rows 1..K follow
/// `entries`. Throws InputError on duplicate surfaces.
Var encode_bias_words(Tape& tape, std::span<const BiasEntry> entries, const BiasingParams& params);
/// Value-only convenience for decoding.
Matrix compute_bias_embeddings(std::span<const BiasEntry> entries, const BiasingParams& params);

/// b = projection(MHA(query, E, E)); one counter tick per query row.
Var bias_attend(Tape& tape, Var query, Var embeddings, const BiasingLayerParams& layer,
                AttentionCounter* counter = nullptr);

struct PredictorStream {
  Var embed;   // [U x predictor_embed]
  Var hidden;  // [U x H]
};

/// Builds the joint hidden lattice from (possibly biased) encoder and
/// predictor streams: row t*U + u pairs frame t with step u.
using JointFn = std::function<Var(Var enc, Var pred)>;

struct BiasedStreams {
  Var enc;    // [L x H]
  Var pred;   // [U x H]
  Var joint;  // [L*U x J]
};

/// Applies the configured variant: encoder frames, predictor steps, both
/// (separate layers), or every joint cell. Throws ConfigError when the
/// variant's layer is missing.
BiasedStreams apply_biasing(Tape& tape, const BiasingParams& params, Var h_enc,
                            const PredictorStream& pred, const JointFn& joint, Var embeddings,
                            AttentionCounter* counter = nullptr);

/// Teacher-forced reconstruction losses of the learnable word encoder:
/// (subword CE, phoneme CE), each averaged over entries 1..K. Unscaled.
std::pair<Var, Var> learnable_we_aux_losses(Tape& tape, Var embeddings,
                                            std::span<const BiasEntry> entries,
                                            const BiasingParams& params);

}  // namespace dbias
