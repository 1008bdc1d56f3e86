#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbias/biasing.hpp"
#include "dbias/layers.hpp"

namespace dbias {

/// Transducer dimensions. `vocab_size` is V, the number of non-blank labels;
/// output distributions cover V + 1 classes with the blank at index 0.
struct ModelConfig {
  int d_audio_in = 16;        // D1
  int d_text_in = 1;          // D2: phoneme inventory + one mask dimension
  int d_hidden = 32;          // H
  int d_word_embed = 32;      // M
  int shared_layers = 2;
  int predictor_layers = 1;
  int heads = 4;
  int vocab_size = 63;        // V
  /// Attention lookahead (encoder frames) for each shared layer.
  std::vector<int> lookahead_frames{1, 1};
  int conv_channels = 32;
  int ff_dim = 64;
  int predictor_embed = 32;
  int joint_dim = 32;

  void validate() const;
  int output_size() const { return vocab_size + 1; }
  int total_lookahead() const;
  /// Input frames feeding encoder frame t lie in [0, 4 * (t + total_lookahead()) + 3].
  int max_input_frame(int t) const { return 4 * (t + total_lookahead()) + 3; }

  /// Full-size reference settings: 80-dim features, 128 conv channels, 12
  /// shared layers (first 7 look ahead one frame), 2 LSTM predictor layers,
  /// 4,048 subword outputs. Not used by the desk-scale experiments.
  static ModelConfig full_scale();
};

enum class ParamGroup {
  kAudioEncoder,
  kTextEncoder,
  kSharedEncoder,
  kPredictor,
  kJointer,
  kOutput,
  kAedDecoder,
  kBiasing,
};
inline constexpr std::array<ParamGroup, 8> kAllParamGroups{
    ParamGroup::kAudioEncoder, ParamGroup::kTextEncoder, ParamGroup::kSharedEncoder,
    ParamGroup::kPredictor,    ParamGroup::kJointer,     ParamGroup::kOutput,
    ParamGroup::kAedDecoder,   ParamGroup::kBiasing};
std::string_view to_string(ParamGroup g);
ParamGroup parse_param_group(std::string_view name);

using GroupVisitor = std::function<void(ParamGroup group, const std::string& name, Parameter& p)>;

/// Stride-2, kernel-3, "same"-padded 1-D convolution followed by ReLU.
struct Conv1d {
  Parameter weight;  // [3 * in x out], rows grouped by tap (t-1, t, t+1)
  Parameter bias;    // [1 x out]

  static Conv1d init(int in, int out, Rng& rng);
  Var operator()(Tape& tape, Var x) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

struct ModelParams {
  ModelConfig config;
  // audio_encoder
  Conv1d conv1;
  Conv1d conv2;
  // text_encoder
  Linear text_embed;
  EncoderBlock text_block;
  // shared_encoder
  std::vector<EncoderBlock> shared;
  // predictor
  Parameter predictor_embedding;  // [(V + 1) x predictor_embed]; row 0 is the start symbol
  std::vector<LstmLayer> predictor_lstm;
  // jointer
  Linear joint_enc;   // H -> J, carries the jointer bias
  Linear joint_pred;  // H -> J, no bias
  // output
  Linear output_fc;   // J -> V + 1
  Linear ctc_fc;      // H -> V + 1
  // aed_decoder
  SequenceDecoder aed;
  // biasing
  std::optional<BiasingParams> biasing;

  static ModelParams init(const ModelConfig& config, Rng& rng);
  /// Attaches a fresh biasing module (zero final projections).
  void attach_biasing(const BiasingConfig& config, int num_phonemes, Rng& rng);
  BiasingHostDims biasing_host_dims(int num_phonemes) const;

  void visit(const GroupVisitor& f);
  size_t num_parameters();
  /// Order-sensitive checksum of every parameter value in a group.
  uint64_t checksum(ParamGroup group) const;
  uint64_t checksum() const;
};

/// Encoder states [frames x H].
struct EncoderOutput {
  Var states;
  int valid_length = 0;
};

/// ceil(ceil(T/2)/2)
int downsampled_length(int frames);

/// Convolutional frontend only: [T x D1] -> [T' x H].
Var audio_frontend(Tape& tape, Var features, const ModelParams& params);
/// Shared limited-lookahead encoder stack.
Var shared_encode(Tape& tape, Var x, const ModelParams& params);
/// SharedEncoder(AudioEncoder(features)); throws InputError when T < 4.
EncoderOutput audio_encode(Tape& tape, const Matrix& features, const ModelParams& params);
/// SharedEncoder(TextEncoder(text_features)); no downsampling.
EncoderOutput text_encode(Tape& tape, const Matrix& text_features, const ModelParams& params);
/// Text encoder alone (projection + one full self-attention block).
Var text_frontend(Tape& tape, Var text_features, const ModelParams& params);

inline constexpr int kStartToken = 0;  // the blank id doubles as start symbol

struct PredictorState {
  std::vector<RowVector> h;
  std::vector<RowVector> c;
  int last_token = kStartToken;
};

struct PredictorStep {
  RowVector embed;
  RowVector hidden;
  PredictorState state;
};

PredictorState initial_predictor_state(const ModelParams& params);
/// Feeds `token` (0..V, 0 is the start symbol). Throws InputError otherwise.
PredictorStep predictor_advance(const PredictorState& state, int token, const ModelParams& params);
/// Unrolled predictor over `inputs`; row i is the output after inputs[0..i].
PredictorStream predictor_forward(Tape& tape, std::span<const int> inputs, const ModelParams& params);

/// joint_enc(enc) + joint_pred(pred) for every (t, u), before the activation.
Var joint_preactivation(Tape& tape, Var enc, Var pred, const ModelParams& params);
/// tanh of the above: [L*U x J].
Var joint(Tape& tape, Var enc, Var pred, const ModelParams& params);
/// log_softmax(output_fc(h_joint)), one row per joint row.
Var output_distribution(Tape& tape, Var h_joint, const ModelParams& params);

}  // namespace dbias
