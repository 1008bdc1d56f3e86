#pragma once

#include <span>
#include <vector>

#include "dbias/model.hpp"

namespace dbias {

/// Transducer output lattice. Row t * (U + 1) + u of `log_probs` is the
/// normalized log-distribution over V + 1 classes (blank = 0) at frame t
/// after emitting u labels.
struct AlignmentLattice {
  Matrix log_probs;
  int frames = 0;
  std::vector<int> target;

  int label_steps() const { return static_cast<int>(target.size()) + 1; }
  double at(int t, int u, int k) const { return log_probs(t * label_steps() + u, k); }
  /// Checks shape and that every row sums to one (|logsumexp| <= tol).
  void validate(double tol = 1e-6) const;
};

struct LossWithGrad {
  double loss = 0.0;
  Matrix grad;  // d loss / d log_probs, same shape as the input
  bool feasible = true;
};

/// -log P(target | lattice), summed over all monotonic alignments, with the
/// gradient from the forward-backward recursions.
LossWithGrad transducer_loss(const AlignmentLattice& lattice, bool validate = false);
/// Tape version over a [T*(U+1) x (V+1)] log-probability node.
Var transducer_loss(Var log_probs, int frames, std::span<const int> target);

/// CTC over [T x (V+1)] frame log-probs with blank 0. Infeasible targets
/// (too short for the blank-augmented path) give +inf, zero gradient and
/// feasible = false.
LossWithGrad ctc_loss(const Matrix& frame_log_probs, std::span<const int> target);
/// Tape version; an infeasible instance yields a zero constant and sets
/// *feasible = false.
Var ctc_loss(Var frame_log_probs, std::span<const int> target, bool* feasible = nullptr);
/// log_softmax(ctc_fc(states)).
Var ctc_log_probs(Tape& tape, Var encoder_states, const ModelParams& params);

/// Teacher-forced CE of the attention decoder over encoder states, with the
/// end-of-sequence (blank id) appended. Target must be non-empty.
Var aed_loss(Tape& tape, Var encoder_states, std::span<const int> target, const ModelParams& params);

/// Internal-LM CE: next-label prediction with the jointer's encoder input set
/// to zero. `predictor_hidden` rows 0..U-1 are the predictor outputs after
/// [start, y1, ..., y_{U-1}]. Blank stays in the softmax.
Var ilmt_loss(Tape& tape, Var predictor_hidden, std::span<const int> target, const ModelParams& params);
Var ilmt_loss(Tape& tape, std::span<const int> target, const ModelParams& params);

/// Per-part losses in nats and the weighted total:
/// total = transducer + ctc + aed + lambda * ilmt + we_scale * (we_text + we_phone).
struct LossBreakdown {
  double transducer = 0.0;
  double ctc = 0.0;
  double aed = 0.0;
  double ilmt = 0.0;
  double we_text = 0.0;
  double we_phone = 0.0;
  double total = 0.0;
  int ctc_infeasible = 0;
};

inline constexpr double kIlmtWeight = 0.2;
inline constexpr double kWordEncoderAuxScale = 0.1;

/// Fills `total`. A non-finite ctc part counts as infeasible and contributes 0.
LossBreakdown combined_loss(LossBreakdown parts, double lambda = kIlmtWeight,
                            double we_scale = kWordEncoderAuxScale);

}  // namespace dbias
