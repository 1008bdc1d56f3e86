#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dbias/common.hpp"
#include "dbias/rare_words.hpp"

namespace dbias {

enum class EditOp { kMatch, kSub, kDel, kIns };

struct EditStep {
  EditOp op;
  int ref = -1;  // index into the reference, -1 for insertions
  int hyp = -1;  // index into the hypothesis, -1 for deletions
};

struct EditScript {
  std::vector<EditStep> steps;
  int cost() const;
};

/// Unit-cost Levenshtein alignment. Among equal-cost alignments the backtrace
/// (from the end) prefers match, then substitution, deletion, insertion.
EditScript align(std::span<const std::string> ref, std::span<const std::string> hyp);

struct ErrorCounts {
  int64_t subs = 0;
  int64_t dels = 0;
  int64_t ins = 0;
  int64_t total() const { return subs + dels + ins; }
  ErrorCounts& operator+=(const ErrorCounts& o);
};

struct ScoreCounts {
  int64_t ref_words = 0;
  int64_t ref_bias_words = 0;
  int64_t ref_rare_words = 0;
  ErrorCounts all;
  ErrorCounts biased;
  ErrorCounts unbiased;
  ErrorCounts rare;
  ScoreCounts& operator+=(const ScoreCounts& o);
};

/// Percentages; a rate whose denominator is zero is undefined (nullopt).
struct ScoreReport {
  ScoreCounts counts;
  std::optional<double> wer;
  std::optional<double> u_wer;
  std::optional<double> b_wer;
  std::optional<double> r_wer;

  static ScoreReport from_counts(const ScoreCounts& counts);
  /// "WER(U-WER/B-WER)" with two decimals; undefined rates print as "-".
  std::string cell() const;
  std::string to_json() const;
};

struct ScoredPair {
  std::vector<std::string> ref;
  std::vector<std::string> hyp;
  std::set<std::string> bias;  // normalized words
};

/// Substitutions and deletions are attributed by the reference word,
/// insertions by the hypothesis word. Without a rare set R-WER is undefined.
ScoreCounts score_pair(const ScoredPair& pair, const RareWordSet* rare = nullptr);
ScoreReport score(std::span<const ScoredPair> pairs, const RareWordSet* rare = nullptr);

/// Fixed-width table, one row per (label, report).
std::string format_report_table(std::span<const std::pair<std::string, ScoreReport>> rows);

enum class BiasListLevel { kUtterance, kChapter, kBook };
std::string to_string(BiasListLevel level);
BiasListLevel parse_bias_list_level(std::string_view s);

struct BiasListStats {
  size_t rare_words = 0;
  size_t distractors = 0;
  size_t requested_distractors = 0;
  bool pool_exhausted = false;
};

/// Rare words (per `rare`) of the given references in first-occurrence order,
/// followed by up to `n_distractors` words drawn uniformly without replacement
/// from `pool` minus the included words.
std::vector<std::string> build_inference_bias_list(std::span<const std::vector<std::string>> refs,
                                                   const RareWordSet& rare, int n_distractors,
                                                   std::span<const std::string> pool, Rng& rng,
                                                   BiasListStats* stats = nullptr);

struct UtteranceKey {
  std::string id;
  std::vector<std::string> words;
  std::string chapter;
  std::string book;
};

struct BiasListPlan {
  BiasListLevel level = BiasListLevel::kUtterance;
  /// Distractor count, or the total list size N when `size_is_total`.
  int size = 0;
  bool size_is_total = false;
};

/// One list per utterance id. Utterances of the same chapter/book share one
/// list; groups are processed in first-appearance order.
std::map<std::string, std::vector<std::string>> build_bias_lists(
    std::span<const UtteranceKey> utts, const RareWordSet& rare, std::span<const std::string> pool,
    const BiasListPlan& plan, Rng& rng, std::vector<BiasListStats>* stats = nullptr);

/// "utt_id<TAB>words" lines; ids must be unique.
std::map<std::string, std::vector<std::string>> load_transcripts(const std::filesystem::path& path);
void save_transcripts(const std::filesystem::path& path,
                      std::span<const std::pair<std::string, std::vector<std::string>>> rows);

/// JSON object {utt_id: [words]}.
std::map<std::string, std::vector<std::string>> load_bias_lists(const std::filesystem::path& path);
void save_bias_lists(const std::filesystem::path& path, const std::map<std::string, std::vector<std::string>>& lists);

}  // namespace dbias
