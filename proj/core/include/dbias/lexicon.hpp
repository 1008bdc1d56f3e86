#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbias/common.hpp"

namespace dbias {

/// Word -> phoneme-id lookup with deterministic letter-cluster fallback.
class PhonemeLexicon {
 public:
  struct Rule {
    std::string cluster;
    std::vector<int> phonemes;
  };

  PhonemeLexicon() = default;
  PhonemeLexicon(std::vector<std::string> inventory, std::map<std::string, std::vector<int>> entries,
                 std::vector<Rule> fallback_rules);

  /// Lexicon file: "WORD<TAB>PH1 PH2 ..."; rules file: "cluster<TAB>PH ..."
  /// in priority order. The inventory is the sorted set of symbols seen.
  static PhonemeLexicon load(const std::filesystem::path& lexicon_file,
                             const std::filesystem::path& rules_file);
  void save(const std::filesystem::path& lexicon_file, const std::filesystem::path& rules_file) const;

  const std::vector<std::string>& inventory() const { return inventory_; }
  int num_phonemes() const { return static_cast<int>(inventory_.size()); }
  int phoneme_id(std::string_view symbol) const;
  const std::map<std::string, std::vector<int>>& entries() const { return entries_; }
  const std::vector<Rule>& fallback_rules() const { return rules_; }

  bool has_entry(std::string_view word) const { return entries_.contains(std::string(word)); }
  void add_entry(std::string word, std::vector<int> phonemes);

  /// Lexicon entry verbatim if present; otherwise the longest matching
  /// fallback cluster is consumed left to right (earlier rules win ties).
  /// Characters no rule covers are skipped. Throws InputError if that leaves
  /// nothing, which cannot happen when rules cover every single character.
  std::vector<int> g2p(std::string_view word) const;
  /// g2p over each word, concatenated.
  std::vector<int> g2p_words(std::span<const std::string> words) const;

  std::vector<std::string> symbols(std::span<const int> ids) const;
  std::vector<int> parse_symbols(std::string_view text) const;

  uint64_t hash() const;

 private:
  std::vector<std::string> inventory_;
  std::unordered_map<std::string, int> ids_;
  std::map<std::string, std::vector<int>> entries_;
  std::vector<Rule> rules_;
};

}  // namespace dbias
