#include "dbias/layers.hpp"

#include <cmath>

namespace dbias {

Matrix init_uniform(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = (2.0 * uniform01(rng) - 1.0) * bound;
  }
  return m;
}

Linear Linear::init(int in, int out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight.value = init_uniform(in, out, in, rng);
  l.bias.value = Matrix::Zero(1, out);
  l.has_bias = with_bias;
  return l;
}

Linear Linear::zeros(int in, int out, bool with_bias) {
  Linear l;
  l.weight.value = Matrix::Zero(in, out);
  l.bias.value = Matrix::Zero(1, out);
  l.has_bias = with_bias;
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  Var y = matmul(x, tape.param(weight));
  return has_bias ? add_row(y, tape.param(bias)) : y;
}

void Linear::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".weight", weight);
  if (has_bias) f(prefix + ".bias", bias);
}

LayerNorm LayerNorm::init(int dim) {
  LayerNorm n;
  n.gain.value = Matrix::Ones(1, dim);
  n.bias.value = Matrix::Zero(1, dim);
  return n;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return layer_norm_rows(x, tape.param(gain), tape.param(bias));
}

void LayerNorm::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".gain", gain);
  f(prefix + ".bias", bias);
}

FeedForward FeedForward::init(int dim, int hidden, Rng& rng) {
  return FeedForward{Linear::init(dim, hidden, rng), Linear::init(hidden, dim, rng)};
}

Var FeedForward::operator()(Tape& tape, Var x) const { return out(tape, relu(in(tape, x))); }

void FeedForward::visit(const ParamVisitor& f, const std::string& prefix) {
  in.visit(f, prefix + ".in");
  out.visit(f, prefix + ".out");
}

LstmLayer LstmLayer::init(int in, int hidden, Rng& rng) {
  LstmLayer l;
  l.w_input.value = init_uniform(in, 4 * hidden, hidden, rng);
  l.w_hidden.value = init_uniform(hidden, 4 * hidden, hidden, rng);
  l.bias.value = Matrix::Zero(1, 4 * hidden);
  return l;
}

std::pair<Var, Var> LstmLayer::step(Tape& tape, Var x, Var h, Var c) const {
  const Index H = hidden_dim();
  Var gates = add_row(add(matmul(x, tape.param(w_input)), matmul(h, tape.param(w_hidden))),
                      tape.param(bias));
  Var i = sigmoid(slice_cols(gates, 0, H));
  Var f = sigmoid(slice_cols(gates, H, H));
  Var g = tanh(slice_cols(gates, 2 * H, H));
  Var o = sigmoid(slice_cols(gates, 3 * H, H));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

void LstmLayer::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".w_input", w_input);
  f(prefix + ".w_hidden", w_hidden);
  f(prefix + ".bias", bias);
}

MultiHeadAttention MultiHeadAttention::init(int query_dim, int kv_dim, int dim, int heads, Rng& rng) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention a;
  a.query = Linear::init(query_dim, dim, rng);
  a.key = Linear::init(kv_dim, dim, rng);
  a.value = Linear::init(kv_dim, dim, rng);
  a.output = Linear::init(dim, dim, rng);
  a.heads = heads;
  return a;
}

Var MultiHeadAttention::operator()(Tape& tape, Var q, Var kv, const AttentionMask* mask) const {
  Var Q = query(tape, q);
  Var K = key(tape, kv);
  Var V = value(tape, kv);
  const Index d = dim() / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? Q : slice_cols(Q, h * d, d);
    Var kh = heads == 1 ? K : slice_cols(K, h * d, d);
    Var vh = heads == 1 ? V : slice_cols(V, h * d, d);
    Var scores = scale(matmul_nt(qh, kh), inv);
    Var weights = mask ? masked_softmax_rows(scores, *mask) : softmax_rows(scores);
    outs.push_back(matmul(weights, vh));
  }
  Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return output(tape, merged);
}

void MultiHeadAttention::visit(const ParamVisitor& f, const std::string& prefix) {
  query.visit(f, prefix + ".query");
  key.visit(f, prefix + ".key");
  value.visit(f, prefix + ".value");
  output.visit(f, prefix + ".output");
}

EncoderBlock EncoderBlock::init(int dim, int heads, int ff_dim, Rng& rng) {
  EncoderBlock b;
  b.attention = MultiHeadAttention::init(dim, dim, dim, heads, rng);
  b.norm1 = LayerNorm::init(dim);
  b.feed_forward = FeedForward::init(dim, ff_dim, rng);
  b.norm2 = LayerNorm::init(dim);
  return b;
}

Var EncoderBlock::operator()(Tape& tape, Var x, const AttentionMask* mask) const {
  Var y = norm1(tape, add(x, attention(tape, x, x, mask)));
  return norm2(tape, add(y, feed_forward(tape, y)));
}

void EncoderBlock::visit(const ParamVisitor& f, const std::string& prefix) {
  attention.visit(f, prefix + ".attention");
  norm1.visit(f, prefix + ".norm1");
  feed_forward.visit(f, prefix + ".feed_forward");
  norm2.visit(f, prefix + ".norm2");
}

DecoderBlock DecoderBlock::init(int dim, int memory_dim, int heads, int ff_dim, Rng& rng) {
  DecoderBlock b;
  b.self_attention = MultiHeadAttention::init(dim, dim, dim, heads, rng);
  b.norm1 = LayerNorm::init(dim);
  b.cross_attention = MultiHeadAttention::init(dim, memory_dim, dim, heads, rng);
  b.norm2 = LayerNorm::init(dim);
  b.feed_forward = FeedForward::init(dim, ff_dim, rng);
  b.norm3 = LayerNorm::init(dim);
  return b;
}

Var DecoderBlock::operator()(Tape& tape, Var x, Var memory) const {
  const Index n = x.rows();
  AttentionMask causal(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) causal(i, j) = j <= i;
  }
  Var y = norm1(tape, add(x, self_attention(tape, x, x, &causal)));
  Var z = norm2(tape, add(y, cross_attention(tape, y, memory)));
  return norm3(tape, add(z, feed_forward(tape, z)));
}

void DecoderBlock::visit(const ParamVisitor& f, const std::string& prefix) {
  self_attention.visit(f, prefix + ".self_attention");
  norm1.visit(f, prefix + ".norm1");
  cross_attention.visit(f, prefix + ".cross_attention");
  norm2.visit(f, prefix + ".norm2");
  feed_forward.visit(f, prefix + ".feed_forward");
  norm3.visit(f, prefix + ".norm3");
}

SequenceDecoder SequenceDecoder::init(int num_classes, int dim, int memory_dim, int heads, Rng& rng) {
  SequenceDecoder d;
  d.embedding.value = init_uniform(num_classes + 1, dim, dim, rng);
  d.block = DecoderBlock::init(dim, memory_dim, heads, 2 * dim, rng);
  d.out = Linear::init(dim, num_classes, rng);
  return d;
}

Var SequenceDecoder::log_probs(Tape& tape, std::span<const int> targets, Var memory) const {
  std::vector<int> inputs;
  inputs.reserve(targets.size());
  inputs.push_back(bos());
  for (size_t i = 0; i + 1 < targets.size(); ++i) inputs.push_back(targets[i]);
  Var x = gather_rows(tape.param(embedding), inputs);
  x = add(x, tape.constant(sinusoidal_positions(x.rows(), x.cols())));
  return log_softmax_rows(out(tape, block(tape, x, memory)));
}

void SequenceDecoder::visit(const ParamVisitor& f, const std::string& prefix) {
  f(prefix + ".embedding", embedding);
  block.visit(f, prefix + ".block");
  out.visit(f, prefix + ".out");
}

Matrix sinusoidal_positions(Index len, Index dim) {
  Matrix p(len, dim);
  for (Index t = 0; t < len; ++t) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      p(t, i) = (i % 2 == 0) ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
    }
  }
  return p;
}

}  // namespace dbias
