#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dbias/common.hpp"

namespace dbias {

/// Lowercases and strips everything except letters, digits and apostrophes.
std::string normalize_word(std::string_view word);
/// Splits on whitespace and normalizes each word; empty results are dropped.
std::vector<std::string> normalize_text(std::string_view text);

/// Subword vocabulary with ordered BPE merges.
///
/// Tokens use the "@@" continuation convention: a token that does not end a
/// word carries a trailing "@@" ("ab@@ ut" spells "abut"). Id 0 is the blank
/// and id 1 is the unknown token; neither is produced by encode().
class SubwordVocab {
 public:
  static constexpr int kBlankId = 0;
  static constexpr int kUnkId = 1;
  static constexpr std::string_view kBlank = "<blank>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kContinuation = "@@";

  using Merge = std::pair<std::string, std::string>;

  SubwordVocab() = default;
  /// `tokens[0]` and `tokens[1]` must be the blank and unknown tokens.
  SubwordVocab(std::vector<std::string> tokens, std::vector<Merge> merges);

  /// Learns merges over `word_counts` until the vocabulary reaches
  /// `target_size` tokens or no pair occurs at least twice.
  static SubwordVocab train(const std::map<std::string, int64_t>& word_counts, int target_size);

  static SubwordVocab load(const std::filesystem::path& vocab_file,
                           const std::filesystem::path& merges_file);
  void save(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Number of non-blank labels (V); output distributions have V + 1 entries.
  int num_labels() const { return size() - 1; }
  const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<Merge>& merges() const { return merges_; }
  /// Characters that have base tokens.
  const std::string& alphabet() const { return alphabet_; }

  /// Greedy BPE. With dropout_p > 0 every candidate merge is independently
  /// skipped with that probability at each step (rng required).
  std::vector<int> encode(std::string_view word, double dropout_p = 0.0, Rng* rng = nullptr) const;
  /// Encodes each word of a transcript and concatenates.
  std::vector<int> encode_words(std::span<const std::string> words, double dropout_p = 0.0,
                                Rng* rng = nullptr) const;
  /// Inverse of encode/encode_words; words are joined by single spaces.
  std::string decode(std::span<const int> ids) const;
  std::vector<std::string> decode_words(std::span<const int> ids) const;

  /// Content hash over tokens and merges.
  uint64_t hash() const;

 private:
  void index();

  std::vector<std::string> tokens_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, int> ids_;
  std::map<std::pair<int, int>, std::pair<int, int>> merge_table_;  // (left, right) -> (rank, result)
  std::string alphabet_;
};

}  // namespace dbias
