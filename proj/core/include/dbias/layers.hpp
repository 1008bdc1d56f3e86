#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dbias/autograd.hpp"

namespace dbias {

/// Callback used to enumerate parameters with a dotted path name.
using ParamVisitor = std::function<void(const std::string& name, Parameter& p)>;

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
Matrix init_uniform(Index rows, Index cols, Index fan_in, Rng& rng);

using AttentionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// y = x W + b, W is [in x out].
struct Linear {
  Parameter weight;
  Parameter bias;
  bool has_bias = true;

  static Linear init(int in, int out, Rng& rng, bool with_bias = true);
  static Linear zeros(int in, int out, bool with_bias = true);

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }
  Var operator()(Tape& tape, Var x) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  static LayerNorm init(int dim);
  Var operator()(Tape& tape, Var x) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Position-wise feed-forward: out(relu(in(x))).
struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward init(int dim, int hidden, Rng& rng);
  Var operator()(Tape& tape, Var x) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Single LSTM layer with gate order (input, forget, cell, output).
struct LstmLayer {
  Parameter w_input;   // [in x 4H]
  Parameter w_hidden;  // [H x 4H]
  Parameter bias;      // [1 x 4H]

  static LstmLayer init(int in, int hidden, Rng& rng);
  int hidden_dim() const { return static_cast<int>(w_hidden.value.rows()); }
  /// One step for a batch of rows: x [n x in], h/c [n x H].
  std::pair<Var, Var> step(Tape& tape, Var x, Var h, Var c) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Multi-head scaled dot-product attention. Query and key/value inputs may
/// have different widths; all heads share the projected width `dim`.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  int heads = 1;

  static MultiHeadAttention init(int query_dim, int kv_dim, int dim, int heads, Rng& rng);
  int dim() const { return query.out_dim(); }
  /// q [n x query_dim], kv [m x kv_dim] -> [n x dim]. `mask(i, j)` false
  /// forbids query i from attending key j.
  Var operator()(Tape& tape, Var q, Var kv, const AttentionMask* mask = nullptr) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Post-norm self-attention block: LN(x + MHA(x)), LN(y + FF(y)).
struct EncoderBlock {
  MultiHeadAttention attention;
  LayerNorm norm1;
  FeedForward feed_forward;
  LayerNorm norm2;

  static EncoderBlock init(int dim, int heads, int ff_dim, Rng& rng);
  Var operator()(Tape& tape, Var x, const AttentionMask* mask) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Causal self-attention, cross-attention into `memory`, feed-forward; each
/// with residual and post-norm.
struct DecoderBlock {
  MultiHeadAttention self_attention;
  LayerNorm norm1;
  MultiHeadAttention cross_attention;
  LayerNorm norm2;
  FeedForward feed_forward;
  LayerNorm norm3;

  static DecoderBlock init(int dim, int memory_dim, int heads, int ff_dim, Rng& rng);
  Var operator()(Tape& tape, Var x, Var memory) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Teacher-forced attention decoder over a memory sequence. Inputs are
/// [bos, y1..yn-1] where bos = num_classes (an extra embedding row).
struct SequenceDecoder {
  Parameter embedding;  // [(num_classes + 1) x dim]
  DecoderBlock block;
  Linear out;

  static SequenceDecoder init(int num_classes, int dim, int memory_dim, int heads, Rng& rng);
  int num_classes() const { return out.out_dim(); }
  int bos() const { return num_classes(); }
  /// Log-probabilities [targets.size() x num_classes] for teacher forcing on
  /// `targets` (row s predicts targets[s]).
  Var log_probs(Tape& tape, std::span<const int> targets, Var memory) const;
  void visit(const ParamVisitor& f, const std::string& prefix);
};

/// Fixed sinusoidal position table [len x dim].
Matrix sinusoidal_positions(Index len, Index dim);

}  // namespace dbias
