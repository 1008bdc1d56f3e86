#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dbias {

/// Words outside the `common_k` most frequent training words.
///
/// Ranking is by descending count with lexicographic tie-break. Words never
/// seen in the counted transcripts rank below every seen word, so contains()
/// is true for them too; words() lists only the observed rare words.
class RareWordSet {
 public:
  RareWordSet() = default;
  RareWordSet(int common_k, std::map<std::string, int64_t> counts);

  int common_k() const { return common_k_; }
  const std::set<std::string>& words() const { return words_; }
  const std::set<std::string>& common() const { return common_; }
  const std::map<std::string, int64_t>& source_counts() const { return counts_; }

  /// Normalizes `word` and checks it is not among the common words.
  bool contains(std::string_view word) const;

 private:
  int common_k_ = 0;
  std::map<std::string, int64_t> counts_;
  std::set<std::string> common_;
  std::set<std::string> words_;
};

RareWordSet build_rare_set(std::span<const std::vector<std::string>> transcripts, int common_k);

}  // namespace dbias
