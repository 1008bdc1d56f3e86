#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbias/evaluation.hpp"
#include "dbias/lexicon.hpp"
#include "dbias/model.hpp"
#include "dbias/vocab.hpp"

namespace dbias {

// Reference implementations by explicit enumeration. Exponential; only for
// tiny inputs.

/// Log-probability rows normalized over V + 1 classes.
Matrix random_log_probs(int rows, int V, Rng& rng);
/// Transducer lattice [T*(U+1) x V+1].
Matrix random_lattice(int T, int U, int V, Rng& rng);
/// Sum over every monotonic alignment.
double brute_force_transducer_logp(const Matrix& log_probs, int T, std::span<const int> target);
/// Sum over every frame labelling that collapses to the target.
double brute_force_ctc_logp(const Matrix& frame_log_probs, std::span<const int> target);
/// Plain recursion, no memoization.
int brute_force_edit_distance(std::span<const std::string> a, std::span<const std::string> b);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
  std::vector<ParamGroup> groups_checked;
};

/// Central differences on up to `per_tensor` entries of every parameter the
/// loss touches. rel = |a - n| / max(|a|, |n|, floor).
GradCheck check_gradients(ModelParams& params, const std::function<Var(Tape&)>& loss, int per_tensor = 4,
                          double eps = 1e-6, double floor = 1e-3);

/// Every width <= 8, small enough for finite differences.
ModelConfig tiny_model_config(int vocab_size = 5, int text_dim = 4);
/// Letters "abcdefgh" with and without "@@", plus merges for "ab" and "cd".
SubwordVocab tiny_vocab();
/// Phonemes "A".."H" mirroring the letters.
PhonemeLexicon tiny_lexicon();

struct ScorerCase {
  std::string name;
  ScoredPair pair;
  ErrorCounts all, biased, unbiased, rare;
  int64_t refs = 0, bias = 0, rare_refs = 0;
  std::string rates[4];  // "num/den" or "-"
};

/// Hand-scored cases, one "|"-separated line each; "#" starts a comment.
std::vector<ScorerCase> load_scorer_cases(const std::filesystem::path& path);
/// The rare set the cases are scored against.
RareWordSet scorer_case_rare_set();
/// Every field where score() disagrees with the case; empty when it agrees.
std::vector<std::string> scorer_case_mismatches(const ScorerCase& c);
/// align() against brute force on random sequences of every length pair up
/// to max_len, `reps` each; also checks that each script replays both sides.
std::vector<std::string> align_mismatches(int max_len, int reps, Rng& rng);

enum class SelfCheckKind { kLossOracles, kGradients, kScorer };
std::string to_string(SelfCheckKind k);
SelfCheckKind parse_self_check_kind(std::string_view s);

struct SelfCheck {
  SelfCheckKind kind = SelfCheckKind::kLossOracles;
  uint64_t seed = 1;
  int instances = 100;       // loss oracles, per loss
  double tolerance = 1e-9;   // absolute for losses, relative for gradients
  int per_tensor = 6;        // gradients
  std::filesystem::path cases;  // scorer
  int max_length = 7;        // scorer alignment sweep
  int repeats = 3;
};

struct SelfCheckResult {
  bool passed = false;
  std::vector<std::string> details;
};

SelfCheckResult run_self_check(const SelfCheck& check);

}  // namespace dbias
