#include "dbias/model.hpp"

#include <numeric>

namespace dbias {

void ModelConfig::validate() const {
  const int dims[] = {d_audio_in, d_text_in, d_hidden, d_word_embed, shared_layers, predictor_layers,
                      heads, vocab_size, conv_channels, ff_dim, predictor_embed, joint_dim};
  for (int d : dims) {
    if (d < 1) throw ConfigError("model dimensions must be >= 1");
  }
  if (d_hidden % heads != 0) throw ConfigError("heads must divide d_hidden");
  if (static_cast<int>(lookahead_frames.size()) != shared_layers) {
    throw ConfigError("lookahead_frames needs one entry per shared layer");
  }
  for (int la : lookahead_frames) {
    if (la < 0) throw ConfigError("lookahead_frames must be >= 0");
  }
}

int ModelConfig::total_lookahead() const {
  return std::accumulate(lookahead_frames.begin(), lookahead_frames.end(), 0);
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d_audio_in = 80;
  c.conv_channels = 128;
  c.d_hidden = 256;
  c.heads = 4;
  c.ff_dim = 1024;
  c.shared_layers = 12;
  c.lookahead_frames = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  c.predictor_layers = 2;
  c.predictor_embed = 256;
  c.joint_dim = 256;
  c.d_word_embed = 256;
  c.vocab_size = 4048;
  return c;
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kAudioEncoder: return "audio_encoder";
    case ParamGroup::kTextEncoder: return "text_encoder";
    case ParamGroup::kSharedEncoder: return "shared_encoder";
    case ParamGroup::kPredictor: return "predictor";
    case ParamGroup::kJointer: return "jointer";
    case ParamGroup::kOutput: return "output";
    case ParamGroup::kAedDecoder: return "aed_decoder";
    case ParamGroup::kBiasing: return "biasing";
  }
  return "?";
}

ParamGroup parse_param_group(std::string_view name) {
  for (ParamGroup g : kAllParamGroups) {
    if (to_string(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

Conv1d Conv1d::init(int in, int out, Rng& rng) {
  Conv1d c;
  c.weight.value = init_uniform(3 * in, out, 3 * in, rng);
  c.bias.value = Matrix::Zero(1, out);
  return c;
}

namespace {

/// Rows of the zero-padded input seen by each stride-2, kernel-3 window:
/// output row j holds [x(2j-1), x(2j), x(2j+1)].
Var im2col_stride2(Var x) {
  const Index T = x.rows(), C = x.cols();
  const Index out_len = (T + 1) / 2;
  Matrix cols = Matrix::Zero(out_len, 3 * C);
  for (Index j = 0; j < out_len; ++j) {
    for (Index k = 0; k < 3; ++k) {
      const Index src = 2 * j - 1 + k;
      if (src >= 0 && src < T) cols.block(j, k * C, 1, C) = x.value().row(src);
    }
  }
  return x.tape().make(std::move(cols), {x}, [x, T, C, out_len](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix gx = Matrix::Zero(T, C);
    for (Index j = 0; j < out_len; ++j) {
      for (Index k = 0; k < 3; ++k) {
        const Index src = 2 * j - 1 + k;
        if (src >= 0 && src < T) gx.row(src) += g.block(j, k * C, 1, C);
      }
    }
    tp.accumulate(x, gx);
  });
}

}  // namespace

Var Conv1d::operator()(Tape& tape, Var x) const {
  if (x.cols() * 3 != weight.value.rows()) throw ConfigError("conv input width mismatch");
  return relu(add_row(matmul(im2col_stride2(x), tape.param(weight)), tape.param(bias)));
}

void Conv1d::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  const int H = config.d_hidden;
  p.conv1 = Conv1d::init(config.d_audio_in, config.conv_channels, rng);
  p.conv2 = Conv1d::init(config.conv_channels, H, rng);
  p.text_embed = Linear::init(config.d_text_in, H, rng);
  p.text_block = EncoderBlock::init(H, config.heads, config.ff_dim, rng);
  for (int i = 0; i < config.shared_layers; ++i) {
    p.shared.push_back(EncoderBlock::init(H, config.heads, config.ff_dim, rng));
  }
  p.predictor_embedding.value = init_uniform(config.output_size(), config.predictor_embed,
                                             config.predictor_embed, rng);
  for (int i = 0; i < config.predictor_layers; ++i) {
    p.predictor_lstm.push_back(LstmLayer::init(i == 0 ? config.predictor_embed : H, H, rng));
  }
  p.joint_enc = Linear::init(H, config.joint_dim, rng, true);
  p.joint_pred = Linear::init(H, config.joint_dim, rng, false);
  p.output_fc = Linear::init(config.joint_dim, config.output_size(), rng);
  p.ctc_fc = Linear::init(H, config.output_size(), rng);
  p.aed = SequenceDecoder::init(config.output_size(), H, H, config.heads, rng);
  return p;
}

BiasingHostDims ModelParams::biasing_host_dims(int num_phonemes) const {
  return BiasingHostDims{config.d_hidden, config.predictor_embed, config.d_hidden, config.joint_dim,
                         config.output_size(), num_phonemes};
}

void ModelParams::attach_biasing(const BiasingConfig& bc, int num_phonemes, Rng& rng) {
  biasing = BiasingParams::init(bc, biasing_host_dims(num_phonemes), rng);
}

void ModelParams::visit(const GroupVisitor& f) {
  auto in = [&](ParamGroup g) {
    return [&f, g](const std::string& name, Parameter& p) { f(g, name, p); };
  };
  conv1.visit(in(ParamGroup::kAudioEncoder), "audio_encoder.conv1");
  conv2.visit(in(ParamGroup::kAudioEncoder), "audio_encoder.conv2");
  text_embed.visit(in(ParamGroup::kTextEncoder), "text_encoder.embed");
  text_block.visit(in(ParamGroup::kTextEncoder), "text_encoder.block");
  for (size_t i = 0; i < shared.size(); ++i) {
    shared[i].visit(in(ParamGroup::kSharedEncoder), "shared_encoder.block" + std::to_string(i));
  }
  in(ParamGroup::kPredictor)("predictor.embedding", predictor_embedding);
  for (size_t i = 0; i < predictor_lstm.size(); ++i) {
    predictor_lstm[i].visit(in(ParamGroup::kPredictor), "predictor.lstm" + std::to_string(i));
  }
  joint_enc.visit(in(ParamGroup::kJointer), "jointer.enc");
  joint_pred.visit(in(ParamGroup::kJointer), "jointer.pred");
  output_fc.visit(in(ParamGroup::kOutput), "output.fc");
  ctc_fc.visit(in(ParamGroup::kOutput), "output.ctc");
  aed.visit(in(ParamGroup::kAedDecoder), "aed_decoder");
  if (biasing) biasing->visit(in(ParamGroup::kBiasing), "biasing");
}

size_t ModelParams::num_parameters() {
  size_t n = 0;
  visit([&](ParamGroup, const std::string&, Parameter& p) { n += static_cast<size_t>(p.value.size()); });
  return n;
}

namespace {

uint64_t checksum_impl(const ModelParams& params, std::optional<ParamGroup> only) {
  uint64_t h = fnv1a("params");
  const_cast<ModelParams&>(params).visit([&](ParamGroup g, const std::string& name, Parameter& p) {
    if (only && g != *only) return;
    h = fnv1a(name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.value.data()),
                               static_cast<size_t>(p.value.size()) * sizeof(double)),
              h);
  });
  return h;
}

}  // namespace

uint64_t ModelParams::checksum(ParamGroup group) const { return checksum_impl(*this, group); }
uint64_t ModelParams::checksum() const { return checksum_impl(*this, std::nullopt); }

int downsampled_length(int frames) { return ((frames + 1) / 2 + 1) / 2; }

Var audio_frontend(Tape& tape, Var features, const ModelParams& params) {
  return params.conv2(tape, params.conv1(tape, features));
}

Var shared_encode(Tape& tape, Var x, const ModelParams& params) {
  const Index n = x.rows();
  for (size_t l = 0; l < params.shared.size(); ++l) {
    const int la = params.config.lookahead_frames[l];
    AttentionMask mask(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) mask(i, j) = j <= i + la;
    }
    x = params.shared[l](tape, x, &mask);
  }
  return x;
}

EncoderOutput audio_encode(Tape& tape, const Matrix& features, const ModelParams& params) {
  if (features.rows() < 4) {
    throw InputError("audio input too short: " + std::to_string(features.rows()) + " frames (need >= 4)");
  }
  if (features.cols() != params.config.d_audio_in) throw ConfigError("audio feature width mismatch");
  Var x = audio_frontend(tape, tape.constant(features), params);
  return EncoderOutput{shared_encode(tape, x, params), static_cast<int>(x.rows())};
}

Var text_frontend(Tape& tape, Var text_features, const ModelParams& params) {
  return params.text_block(tape, params.text_embed(tape, text_features), nullptr);
}

EncoderOutput text_encode(Tape& tape, const Matrix& text_features, const ModelParams& params) {
  if (text_features.rows() < 1) throw InputError("text input is empty");
  if (text_features.cols() != params.config.d_text_in) throw ConfigError("text feature width mismatch");
  Var x = text_frontend(tape, tape.constant(text_features), params);
  return EncoderOutput{shared_encode(tape, x, params), static_cast<int>(x.rows())};
}

PredictorState initial_predictor_state(const ModelParams& params) {
  PredictorState s;
  const int H = params.config.d_hidden;
  for (size_t i = 0; i < params.predictor_lstm.size(); ++i) {
    s.h.push_back(RowVector::Zero(H));
    s.c.push_back(RowVector::Zero(H));
  }
  return s;
}

PredictorStep predictor_advance(const PredictorState& state, int token, const ModelParams& params) {
  if (token < 0 || token > params.config.vocab_size) {
    throw InputError("invalid predictor token " + std::to_string(token));
  }
  Tape tape(false);
  const int ids[] = {token};
  Var x = gather_rows(tape.param(params.predictor_embedding), ids);
  PredictorStep out;
  out.embed = x.value().row(0);
  out.state.last_token = token;
  for (size_t l = 0; l < params.predictor_lstm.size(); ++l) {
    auto [h, c] = params.predictor_lstm[l].step(tape, x, tape.constant(state.h[l]), tape.constant(state.c[l]));
    out.state.h.push_back(h.value().row(0));
    out.state.c.push_back(c.value().row(0));
    x = h;
  }
  out.hidden = x.value().row(0);
  return out;
}

PredictorStream predictor_forward(Tape& tape, std::span<const int> inputs, const ModelParams& params) {
  const int H = params.config.d_hidden;
  Var table = tape.param(params.predictor_embedding);
  std::vector<Var> h, c;
  for (size_t l = 0; l < params.predictor_lstm.size(); ++l) {
    h.push_back(tape.constant(Matrix::Zero(1, H)));
    c.push_back(tape.constant(Matrix::Zero(1, H)));
  }
  std::vector<Var> embeds, outs;
  for (int token : inputs) {
    if (token < 0 || token > params.config.vocab_size) {
      throw InputError("invalid predictor token " + std::to_string(token));
    }
    const int ids[] = {token};
    Var x = gather_rows(table, ids);
    embeds.push_back(x);
    for (size_t l = 0; l < params.predictor_lstm.size(); ++l) {
      std::tie(h[l], c[l]) = params.predictor_lstm[l].step(tape, x, h[l], c[l]);
      x = h[l];
    }
    outs.push_back(x);
  }
  return PredictorStream{concat_rows(embeds), concat_rows(outs)};
}

Var joint_preactivation(Tape& tape, Var enc, Var pred, const ModelParams& params) {
  return outer_sum_rows(params.joint_enc(tape, enc), params.joint_pred(tape, pred));
}

Var joint(Tape& tape, Var enc, Var pred, const ModelParams& params) {
  return tanh(joint_preactivation(tape, enc, pred, params));
}

Var output_distribution(Tape& tape, Var h_joint, const ModelParams& params) {
  return log_softmax_rows(params.output_fc(tape, h_joint));
}

}  // namespace dbias
