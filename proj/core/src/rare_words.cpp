#include "dbias/rare_words.hpp"

#include <algorithm>

#include "dbias/common.hpp"
#include "dbias/vocab.hpp"

namespace dbias {

RareWordSet::RareWordSet(int common_k, std::map<std::string, int64_t> counts)
    : common_k_(common_k), counts_(std::move(counts)) {
  if (common_k < 0) throw InputError("common_k must be >= 0");
  std::vector<std::pair<std::string, int64_t>> ranked(counts_.begin(), counts_.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (size_t i = 0; i < ranked.size(); ++i) {
    if (static_cast<int>(i) < common_k) {
      common_.insert(ranked[i].first);
    } else {
      words_.insert(ranked[i].first);
    }
  }
}

bool RareWordSet::contains(std::string_view word) const {
  const std::string w = normalize_word(word);
  return !w.empty() && !common_.contains(w);
}

RareWordSet build_rare_set(std::span<const std::vector<std::string>> transcripts, int common_k) {
  if (transcripts.empty()) throw InputError("build_rare_set: no transcripts");
  std::map<std::string, int64_t> counts;
  for (const auto& t : transcripts) {
    for (const auto& w : t) {
      std::string n = normalize_word(w);
      if (!n.empty()) ++counts[n];
    }
  }
  return RareWordSet(common_k, std::move(counts));
}

}  // namespace dbias
