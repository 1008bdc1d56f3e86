#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbias/corpus.hpp"
#include "dbias/evaluation.hpp"
#include "dbias/selfcheck.hpp"
#include "dbias/training.hpp"

namespace dbias {

/// A model trained inside an experiment; fine-tune recipes start from `init`.
struct ExperimentModel {
  std::string name;
  std::string init;
  TrainRecipe recipe;
};

enum class DecoderKind { kGreedy, kBeam };

/// Which test utterances are decoded and where distractors come from.
enum class EvalSubset { kAll, kHomophone };

struct ExperimentEval {
  std::string name;
  std::string model;
  BiasListPlan plan{BiasListLevel::kUtterance, 10, true};
  EvalSubset subset = EvalSubset::kAll;
  int max_utterances = 0;  // 0 = the whole subset
  DecoderKind decoder = DecoderKind::kGreedy;
  int beam_width = 4;
  std::optional<double> fst_boost;  // shallow fusion when set
  bool count_attention = false;
  /// Drop the biasing module and decode with the base network only.
  bool strip_biasing = false;
};

enum class AssertionKind {
  kRelativeReduction,  // (ref - x) / ref >= threshold
  kRelativeIncrease,   // (x - ref) / ref <= threshold
  kLess,               // x < ref
  kLessEqual,          // x <= ref
  kNonDecreasing,      // evals in order
  kSameOutputs,        // tokens identical, scores within threshold
  kAttentionLinear,    // counter == L + U on every utterance
  kAttentionProduct,   // counter == L * U on every utterance
};

enum class Aggregate { kAll, kMajority };

enum class Metric { kWer, kUWer, kBWer, kRWer };

struct ExperimentAssertion {
  AssertionKind kind = AssertionKind::kLess;
  Metric metric = Metric::kBWer;
  std::vector<std::string> evals;  // [x, ref] for comparisons; ordered list otherwise
  double threshold = 0.0;
  Aggregate aggregate = Aggregate::kAll;
};

struct ExperimentSpec {
  std::string name;
  std::string description;
  std::vector<uint64_t> seeds;
  SyntheticCorpusConfig corpus;
  int vocab_size = 64;
  std::vector<ExperimentModel> models;
  std::vector<ExperimentEval> evals;
  std::vector<ExperimentAssertion> assertions;
  double time_limit_s = 0.0;  // 0 = unlimited
  /// Runs instead of models and evals; no corpus is built.
  std::optional<SelfCheck> self_check;
};

/// Relative self-check paths resolve against `base_dir`.
ExperimentSpec experiment_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentSpec load_experiment(const std::filesystem::path& path);

struct UtteranceOutput {
  std::string id;
  std::vector<int> tokens;
  double log_score = 0.0;
  int64_t encoder_frames = 0;
  int64_t attention_queries = 0;
};

struct EvalOutcome {
  ScoreReport report;
  std::vector<UtteranceOutput> utterances;
  BiasListStats list_stats;  // summed over lists
};

struct AssertionOutcome {
  std::string description;
  bool passed = false;
  std::vector<std::string> per_seed;  // one detail line per seed
};

struct ExperimentResult {
  std::string name;
  std::map<uint64_t, std::map<std::string, EvalOutcome>> evals;  // seed -> eval name
  std::vector<AssertionOutcome> assertions;
  double seconds = 0.0;
  bool within_time = true;
  bool passed() const;
  /// Fixed-width report: one table per seed, then one line per assertion.
  std::string report() const;
};

struct ExperimentOptions {
  /// Trained models are cached here keyed by corpus, vocabulary, recipe and
  /// init; empty disables caching.
  std::filesystem::path cache_dir;
  std::function<void(const std::string&)> log;
};

ExperimentResult run_experiment(const ExperimentSpec& spec, const ExperimentOptions& options = {});

/// Test utterances whose transcript contains a rare homophone spelling.
std::vector<Utterance> homophone_utterances(const SyntheticCorpus& corpus);

}  // namespace dbias
