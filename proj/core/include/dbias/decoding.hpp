#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbias/biasing.hpp"
#include "dbias/model.hpp"

namespace dbias {

/// Prefix automaton over bias-entry subword sequences used for shallow
/// fusion. Matching a token earns `boost` (pending); completing an entry
/// banks the pending boost; leaving a partial match revokes it.
class BiasBoostFst {
 public:
  struct State {
    int node = 0;
    double pending = 0.0;
    bool operator==(const State&) const = default;
  };

  BiasBoostFst() : nodes_(1) {}
  static BiasBoostFst build(std::span<const BiasEntry> entries, double boost_per_token);

  /// Score delta and next state after emitting `token`.
  std::pair<double, State> advance(State state, int token) const;

  double boost() const { return boost_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_edges() const { return num_nodes() - 1; }
  bool is_final(int node) const { return nodes_.at(static_cast<size_t>(node)).final; }
  /// Child reached from `node` by `token`, or -1.
  int child(int node, int token) const;
  const std::map<int, int>& children(int node) const { return nodes_.at(static_cast<size_t>(node)).children; }

 private:
  struct Node {
    std::map<int, int> children;
    bool final = false;
  };
  std::vector<Node> nodes_;
  double boost_ = 0.0;
};

struct Hypothesis {
  std::vector<int> tokens;
  double log_score = 0.0;  // model log-prob plus fusion deltas
  PredictorState predictor_state;
  BiasBoostFst::State fst_state;
};

struct DecodeOptions {
  int beam_width = 4;
  int max_symbols_per_frame = 5;
  int nbest = 1;
};

/// Decoding inputs: encoder states (unbiased) and the bias embeddings. When
/// the model carries a biasing module, `bias_embeddings` must be set (the
/// no-bias row alone is fine).
struct DecodeInput {
  Matrix encoder_states;
  std::optional<Matrix> bias_embeddings;
};

struct GreedyResult {
  std::vector<int> tokens;
  /// Sum of the chosen log-probs; a frame that hits the symbol cap also adds
  /// the blank log-prob at the capped step.
  double log_score = 0.0;
};

GreedyResult greedy_decode(const DecodeInput& input, const ModelParams& params,
                           int max_symbols_per_frame = 5, AttentionCounter* counter = nullptr);

/// Frame-synchronous beam search. Hypotheses with identical tokens and the
/// same frame status are merged by log-sum. Returned list is sorted by
/// log_score with pending (unfinished) fusion boosts revoked.
std::vector<Hypothesis> beam_search(const DecodeInput& input, const ModelParams& params,
                                    const DecodeOptions& options, const BiasBoostFst* fst = nullptr,
                                    AttentionCounter* counter = nullptr);

/// Unbiased encoder states for audio features (value only).
Matrix encode_audio(const Matrix& features, const ModelParams& params);

/// Forced pass over the full lattice for `tokens` with the configured biasing
/// variant; returns the total log-probability and counts attention queries.
double score_alignment_lattice(const DecodeInput& input, std::span<const int> tokens,
                               const ModelParams& params, AttentionCounter* counter = nullptr);

struct DecodeRecord {
  std::string utt_id;
  std::vector<int> tokens;
  std::vector<std::string> words;
  double log_score = 0.0;
  /// Runner-up hypotheses after the best one, as (words, log_score).
  std::vector<std::pair<std::vector<std::string>, double>> n_best;
};

/// {"utt_id", "tokens", "words", "log_score"[, "n_best"]} on one line.
std::string to_json_line(const DecodeRecord& record);

}  // namespace dbias
