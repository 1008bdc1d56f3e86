#include "dbias/losses.hpp"

#include <cmath>

namespace dbias {

void AlignmentLattice::validate(double tol) const {
  if (frames < 1) throw InputError("lattice needs at least one frame");
  if (log_probs.rows() != static_cast<Index>(frames) * label_steps()) {
    throw InputError("lattice row count does not match frames * (U + 1)");
  }
  for (int k : target) {
    if (k <= 0 || k >= log_probs.cols()) throw InputError("lattice target label out of range");
  }
  for (Index r = 0; r < log_probs.rows(); ++r) {
    const double lse = log_sum_exp(log_probs.row(r));
    if (!(std::abs(lse) <= tol)) throw InputError("lattice row " + std::to_string(r) + " is not normalized");
  }
}

LossWithGrad transducer_loss(const AlignmentLattice& lat, bool validate) {
  if (validate) lat.validate();
  const int T = lat.frames;
  const int U = static_cast<int>(lat.target.size());
  const int U1 = U + 1;
  if (T < 1) throw InputError("transducer loss needs at least one frame");
  auto blank = [&](int t, int u) { return lat.log_probs(t * U1 + u, 0); };
  auto label = [&](int t, int u) { return lat.log_probs(t * U1 + u, lat.target[u]); };

  Matrix alpha = Matrix::Constant(T, U1, kNegInf);
  alpha(0, 0) = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u < U1; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = alpha(t - 1, u) + blank(t - 1, u);
      if (u > 0) a = log_add(a, alpha(t, u - 1) + label(t, u - 1));
      alpha(t, u) = a;
    }
  }
  Matrix beta = Matrix::Constant(T, U1, kNegInf);
  beta(T - 1, U) = blank(T - 1, U);
  for (int t = T - 1; t >= 0; --t) {
    for (int u = U; u >= 0; --u) {
      if (t == T - 1 && u == U) continue;
      double b = kNegInf;
      if (t + 1 < T) b = beta(t + 1, u) + blank(t, u);
      if (u < U) b = log_add(b, beta(t, u + 1) + label(t, u));
      beta(t, u) = b;
    }
  }
  const double log_z = beta(0, 0);
  LossWithGrad out;
  out.loss = -log_z;
  out.grad = Matrix::Zero(lat.log_probs.rows(), lat.log_probs.cols());
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u < U1; ++u) {
      const int row = t * U1 + u;
      if (t + 1 < T) {
        out.grad(row, 0) = -std::exp(alpha(t, u) + blank(t, u) + beta(t + 1, u) - log_z);
      } else if (u == U) {
        out.grad(row, 0) = -std::exp(alpha(t, u) + blank(t, u) - log_z);
      }
      if (u < U) {
        out.grad(row, lat.target[u]) -= std::exp(alpha(t, u) + label(t, u) + beta(t, u + 1) - log_z);
      }
    }
  }
  return out;
}

Var transducer_loss(Var log_probs, int frames, std::span<const int> target) {
  AlignmentLattice lat{log_probs.value(), frames, std::vector<int>(target.begin(), target.end())};
  LossWithGrad r = transducer_loss(lat);
  Matrix value(1, 1);
  value(0, 0) = r.loss;
  return log_probs.tape().make(std::move(value), {log_probs},
                               [log_probs, grad = std::move(r.grad)](Tape& tp, const Matrix& g, const Matrix&) {
                                 tp.accumulate(log_probs, grad * g(0, 0));
                               });
}

LossWithGrad ctc_loss(const Matrix& lp, std::span<const int> target) {
  const int T = static_cast<int>(lp.rows());
  const int U = static_cast<int>(target.size());
  const int S = 2 * U + 1;
  std::vector<int> ext(static_cast<size_t>(S), 0);
  for (int i = 0; i < U; ++i) ext[2 * i + 1] = target[i];
  LossWithGrad out;
  out.grad = Matrix::Zero(lp.rows(), lp.cols());
  if (T < 1) {
    out.loss = std::numeric_limits<double>::infinity();
    out.feasible = false;
    return out;
  }
  auto skip_ok = [&](int s) { return s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2]; };
  Matrix alpha = Matrix::Constant(T, S, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (S > 1) alpha(0, 1) = lp(0, ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (skip_ok(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, ext[s]);
    }
  }
  double log_z = alpha(T - 1, S - 1);
  if (S > 1) log_z = log_add(log_z, alpha(T - 1, S - 2));
  if (log_z == kNegInf) {
    out.loss = std::numeric_limits<double>::infinity();
    out.feasible = false;
    return out;
  }
  Matrix beta = Matrix::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = lp(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = lp(T - 1, ext[S - 2]);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && skip_ok(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, ext[s]);
    }
  }
  out.loss = -log_z;
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const double occ = alpha(t, s) + beta(t, s) - lp(t, ext[s]);
      if (occ == kNegInf) continue;
      out.grad(t, ext[s]) -= std::exp(occ - log_z);
    }
  }
  return out;
}

Var ctc_loss(Var frame_log_probs, std::span<const int> target, bool* feasible) {
  LossWithGrad r = ctc_loss(frame_log_probs.value(), target);
  if (feasible) *feasible = r.feasible;
  Tape& tape = frame_log_probs.tape();
  if (!r.feasible) return tape.constant(Matrix::Zero(1, 1));
  Matrix value(1, 1);
  value(0, 0) = r.loss;
  return tape.make(std::move(value), {frame_log_probs},
                   [frame_log_probs, grad = std::move(r.grad)](Tape& tp, const Matrix& g, const Matrix&) {
                     tp.accumulate(frame_log_probs, grad * g(0, 0));
                   });
}

Var ctc_log_probs(Tape& tape, Var encoder_states, const ModelParams& params) {
  return log_softmax_rows(params.ctc_fc(tape, encoder_states));
}

Var aed_loss(Tape& tape, Var encoder_states, std::span<const int> target, const ModelParams& params) {
  if (target.empty()) throw InputError("aed_loss needs a non-empty target");
  std::vector<int> out(target.begin(), target.end());
  out.push_back(SubwordVocab::kBlankId);  // end of sequence
  return nll(params.aed.log_probs(tape, out, encoder_states), out);
}

Var ilmt_loss(Tape& tape, Var predictor_hidden, std::span<const int> target, const ModelParams& params) {
  if (target.empty()) throw InputError("ilmt_loss needs a non-empty target");
  const Index U = static_cast<Index>(target.size());
  if (predictor_hidden.rows() < U) throw ConfigError("ilmt_loss: predictor stream too short");
  Var zero_enc = tape.constant(Matrix::Zero(1, params.config.d_hidden));
  Var h = predictor_hidden.rows() == U ? predictor_hidden : slice_rows(predictor_hidden, 0, U);
  Var lp = output_distribution(tape, joint(tape, zero_enc, h, params), params);
  return nll(lp, target);
}

Var ilmt_loss(Tape& tape, std::span<const int> target, const ModelParams& params) {
  std::vector<int> inputs{kStartToken};
  inputs.insert(inputs.end(), target.begin(), target.end());
  inputs.pop_back();
  return ilmt_loss(tape, predictor_forward(tape, inputs, params).hidden, target, params);
}

LossBreakdown combined_loss(LossBreakdown parts, double lambda, double we_scale) {
  if (lambda < 0.0) throw InputError("lambda must be >= 0");
  double ctc = parts.ctc;
  if (!std::isfinite(ctc)) {
    ++parts.ctc_infeasible;
    parts.ctc = 0.0;
    ctc = 0.0;
  }
  parts.total = parts.transducer + ctc + parts.aed + lambda * parts.ilmt +
                we_scale * (parts.we_text + parts.we_phone);
  return parts;
}

}  // namespace dbias
