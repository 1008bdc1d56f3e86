#include "dbias/decoding.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "dbias/losses.hpp"

namespace dbias {

BiasBoostFst BiasBoostFst::build(std::span<const BiasEntry> entries, double boost_per_token) {
  BiasBoostFst fst;
  fst.boost_ = boost_per_token;
  for (const auto& e : entries) {
    if (e.subword_ids.empty()) continue;
    int node = 0;
    for (int tok : e.subword_ids) {
      auto it = fst.nodes_[static_cast<size_t>(node)].children.find(tok);
      if (it == fst.nodes_[static_cast<size_t>(node)].children.end()) {
        const int next = fst.num_nodes();
        fst.nodes_[static_cast<size_t>(node)].children.emplace(tok, next);
        fst.nodes_.emplace_back();
        node = next;
      } else {
        node = it->second;
      }
    }
    fst.nodes_[static_cast<size_t>(node)].final = true;
  }
  return fst;
}

int BiasBoostFst::child(int node, int token) const {
  const auto& ch = nodes_.at(static_cast<size_t>(node)).children;
  auto it = ch.find(token);
  return it == ch.end() ? -1 : it->second;
}

std::pair<double, BiasBoostFst::State> BiasBoostFst::advance(State state, int token) const {
  double delta = 0.0;
  if (state.node != 0 && child(state.node, token) < 0) {
    delta -= state.pending;
    state = State{};
  }
  const int next = child(state.node, token);
  if (next < 0) return {delta, state};
  delta += boost_;
  state.pending += boost_;
  state.node = next;
  if (is_final(next)) state = State{};
  return {delta, state};
}

namespace {

class Scorer {
 public:
  Scorer(const DecodeInput& input, const ModelParams& params, AttentionCounter* counter)
      : params_(params), counter_(counter) {
    if (input.encoder_states.cols() != params.config.d_hidden) {
      throw InputError("encoder states have width " + std::to_string(input.encoder_states.cols()) +
                       ", expected " + std::to_string(params.config.d_hidden));
    }
    if (params.biasing) {
      if (!input.bias_embeddings) throw ConfigError("biased model needs bias embeddings");
      bias_ = &*params.biasing;
      E_ = *input.bias_embeddings;
      const BiasVariant v = bias_->config.variant;
      enc_bias_ = v == BiasVariant::kEncoder || v == BiasVariant::kEncPre;
      pred_bias_ = v == BiasVariant::kPredictor || v == BiasVariant::kEncPre;
      joint_bias_ = v == BiasVariant::kJointer;
      if (enc_bias_ && !bias_->encoder_layer) throw ConfigError("missing encoder biasing layer");
      if (pred_bias_ && !bias_->predictor_layer) throw ConfigError("missing predictor biasing layer");
      if (joint_bias_ && !bias_->jointer_layer) throw ConfigError("missing jointer biasing layer");
    }
    Tape tape(false);
    Var enc = tape.constant(input.encoder_states);
    if (enc_bias_) {
      enc = add(enc, bias_attend(tape, enc, tape.constant(E_), *bias_->encoder_layer, counter_));
    }
    enc_proj_ = params.joint_enc(tape, enc).value();
  }

  int frames() const { return static_cast<int>(enc_proj_.rows()); }

  RowVector pred_projection(const PredictorStep& step) {
    Tape tape(false);
    Var hidden = tape.constant(Matrix(step.hidden));
    if (pred_bias_) {
      Var query = concat_cols(tape.constant(Matrix(step.embed)), hidden);
      hidden = add(hidden, bias_attend(tape, query, tape.constant(E_), *bias_->predictor_layer, counter_));
    }
    return params_.joint_pred(tape, hidden).value().row(0);
  }

  RowVector log_probs(int t, const RowVector& pred_proj) {
    Tape tape(false);
    Var h = tanh(tape.constant(Matrix(enc_proj_.row(t) + pred_proj)));
    if (joint_bias_) {
      h = add(h, bias_attend(tape, h, tape.constant(E_), *bias_->jointer_layer, counter_));
    }
    return output_distribution(tape, h, params_).value().row(0);
  }

 private:
  const ModelParams& params_;
  AttentionCounter* counter_;
  const BiasingParams* bias_ = nullptr;
  Matrix E_;
  Matrix enc_proj_;
  bool enc_bias_ = false;
  bool pred_bias_ = false;
  bool joint_bias_ = false;
};

struct Beam {
  Hypothesis hyp;
  RowVector pred_proj;
};

struct Candidate {
  const Beam* parent;
  int token;  // 0 = blank
  double score;
  BiasBoostFst::State fst_state;
};

int argmax(const RowVector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace

GreedyResult greedy_decode(const DecodeInput& input, const ModelParams& params,
                           int max_symbols_per_frame, AttentionCounter* counter) {
  if (max_symbols_per_frame < 1) throw ConfigError("max_symbols_per_frame must be >= 1");
  Scorer scorer(input, params, counter);
  GreedyResult out;
  PredictorStep step = predictor_advance(initial_predictor_state(params), kStartToken, params);
  RowVector pp = scorer.pred_projection(step);
  for (int t = 0; t < scorer.frames(); ++t) {
    for (int emitted = 0;; ++emitted) {
      const RowVector lp = scorer.log_probs(t, pp);
      if (emitted == max_symbols_per_frame) {
        out.log_score += lp(0);
        break;
      }
      const int k = argmax(lp);
      out.log_score += lp(k);
      if (k == 0) break;
      out.tokens.push_back(k);
      step = predictor_advance(step.state, k, params);
      pp = scorer.pred_projection(step);
    }
  }
  return out;
}

std::vector<Hypothesis> beam_search(const DecodeInput& input, const ModelParams& params,
                                    const DecodeOptions& options, const BiasBoostFst* fst,
                                    AttentionCounter* counter) {
  if (options.beam_width < 1) throw ConfigError("beam_width must be >= 1");
  if (options.max_symbols_per_frame < 1) throw ConfigError("max_symbols_per_frame must be >= 1");
  Scorer scorer(input, params, counter);
  const size_t width = static_cast<size_t>(options.beam_width);

  std::vector<Beam> hyps(1);
  {
    PredictorStep step = predictor_advance(initial_predictor_state(params), kStartToken, params);
    hyps[0].hyp.predictor_state = step.state;
    hyps[0].pred_proj = scorer.pred_projection(step);
  }

  for (int t = 0; t < scorer.frames(); ++t) {
    std::vector<Beam> finished;
    std::vector<Beam> active = std::move(hyps);
    for (int round = 0; !active.empty(); ++round) {
      const bool may_emit = round < options.max_symbols_per_frame;
      std::vector<Candidate> cands;
      for (const Beam& b : active) {
        const RowVector lp = scorer.log_probs(t, b.pred_proj);
        cands.push_back({&b, 0, b.hyp.log_score + lp(0), b.hyp.fst_state});
        if (!may_emit) continue;
        std::vector<Candidate> ext;
        for (Index k = 1; k < lp.size(); ++k) {
          double s = b.hyp.log_score + lp(k);
          BiasBoostFst::State fs = b.hyp.fst_state;
          if (fst) {
            auto [delta, next] = fst->advance(fs, static_cast<int>(k));
            s += delta;
            fs = next;
          }
          ext.push_back({&b, static_cast<int>(k), s, fs});
        }
        const size_t keep = std::min(width, ext.size());
        std::partial_sort(ext.begin(), ext.begin() + static_cast<std::ptrdiff_t>(keep), ext.end(),
                          [](const Candidate& a, const Candidate& c) {
                            return a.score > c.score || (a.score == c.score && a.token < c.token);
                          });
        cands.insert(cands.end(), ext.begin(), ext.begin() + static_cast<std::ptrdiff_t>(keep));
      }

      // Pool: previously finished first, then this round's candidates.
      struct Entry {
        std::vector<int> tokens;
        bool done;
        double score;
        const Beam* beam;         // finished beam carried over, or parent
        const Candidate* cand;    // null for carried-over finished beams
      };
      std::vector<Entry> pool;
      for (const Beam& f : finished) pool.push_back({f.hyp.tokens, true, f.hyp.log_score, &f, nullptr});
      for (const Candidate& c : cands) {
        std::vector<int> toks = c.parent->hyp.tokens;
        if (c.token != 0) toks.push_back(c.token);
        bool merged = false;
        for (Entry& e : pool) {
          if (e.done == (c.token == 0) && e.tokens == toks) {
            e.score = log_add(e.score, c.score);
            merged = true;
            break;
          }
        }
        if (!merged) pool.push_back({std::move(toks), c.token == 0, c.score, c.parent, &c});
      }
      std::vector<size_t> order(pool.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](size_t a, size_t b) { return pool[a].score > pool[b].score; });
      if (order.size() > width) order.resize(width);

      std::vector<Beam> next_finished, next_active;
      for (size_t i : order) {
        Entry& e = pool[i];
        Beam nb;
        if (!e.cand) {
          nb = *e.beam;
        } else {
          nb.hyp.tokens = std::move(e.tokens);
          nb.hyp.fst_state = e.cand->fst_state;
          if (e.cand->token == 0) {
            nb.hyp.predictor_state = e.beam->hyp.predictor_state;
            nb.pred_proj = e.beam->pred_proj;
          } else {
            PredictorStep step = predictor_advance(e.beam->hyp.predictor_state, e.cand->token, params);
            nb.hyp.predictor_state = step.state;
            nb.pred_proj = scorer.pred_projection(step);
          }
        }
        nb.hyp.log_score = e.score;
        (e.done ? next_finished : next_active).push_back(std::move(nb));
      }
      finished = std::move(next_finished);
      active = std::move(next_active);
    }
    hyps = std::move(finished);
  }

  std::vector<Hypothesis> out;
  for (Beam& b : hyps) {
    b.hyp.log_score -= b.hyp.fst_state.pending;
    b.hyp.fst_state = BiasBoostFst::State{};
    out.push_back(std::move(b.hyp));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.log_score > b.log_score; });
  if (options.nbest > 0 && out.size() > static_cast<size_t>(options.nbest)) {
    out.resize(static_cast<size_t>(options.nbest));
  }
  return out;
}

Matrix encode_audio(const Matrix& features, const ModelParams& params) {
  Tape tape(false);
  return audio_encode(tape, features, params).states.value();
}

double score_alignment_lattice(const DecodeInput& input, std::span<const int> tokens,
                               const ModelParams& params, AttentionCounter* counter) {
  Tape tape(false);
  Var enc = tape.constant(input.encoder_states);
  std::vector<int> inputs{kStartToken};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end());
  PredictorStream pred = predictor_forward(tape, inputs, params);
  Var h;
  if (params.biasing) {
    if (!input.bias_embeddings) throw ConfigError("biased model needs bias embeddings");
    JointFn jf = [&](Var e, Var p) { return joint(tape, e, p, params); };
    h = apply_biasing(tape, *params.biasing, enc, pred, jf, tape.constant(*input.bias_embeddings),
                      counter)
            .joint;
  } else {
    h = joint(tape, enc, pred.hidden, params);
  }
  AlignmentLattice lattice{output_distribution(tape, h, params).value(),
                           static_cast<int>(input.encoder_states.rows()),
                           std::vector<int>(tokens.begin(), tokens.end())};
  return -transducer_loss(lattice).loss;
}

std::string to_json_line(const DecodeRecord& r) {
  nlohmann::json j{{"utt_id", r.utt_id}, {"tokens", r.tokens}, {"words", r.words}, {"log_score", r.log_score}};
  if (!r.n_best.empty()) {
    nlohmann::json nb = nlohmann::json::array();
    for (const auto& [words, score] : r.n_best) nb.push_back({{"words", words}, {"log_score", score}});
    j["n_best"] = nb;
  }
  return j.dump();
}

}  // namespace dbias
