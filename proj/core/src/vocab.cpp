#include "dbias/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace dbias {
namespace {

bool ends_with_continuation(std::string_view t) {
  return t.size() >= SubwordVocab::kContinuation.size() &&
         t.substr(t.size() - SubwordVocab::kContinuation.size()) == SubwordVocab::kContinuation;
}

std::string strip_continuation(std::string_view t) {
  return std::string(ends_with_continuation(t) ? t.substr(0, t.size() - 2) : t);
}

std::string merged(std::string_view left, std::string_view right) {
  return strip_continuation(left) + std::string(right);
}

std::vector<std::string> split_chars(std::string_view word) {
  std::vector<std::string> out;
  for (size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    if (i + 1 < word.size()) s += SubwordVocab::kContinuation;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::string normalize_word(std::string_view word) {
  std::string out;
  for (unsigned char c : word) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '\'') {
      out.push_back('\'');
    }
  }
  return out;
}

std::vector<std::string> normalize_text(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) {
    std::string n = normalize_word(w);
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

SubwordVocab::SubwordVocab(std::vector<std::string> tokens, std::vector<Merge> merges)
    : tokens_(std::move(tokens)), merges_(std::move(merges)) {
  index();
}

void SubwordVocab::index() {
  if (tokens_.size() < 2 || tokens_[kBlankId] != kBlank || tokens_[kUnkId] != kUnk) {
    throw ConfigError("vocab must start with <blank> and <unk>");
  }
  ids_.clear();
  merge_table_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocab token '" + tokens_[i] + "'");
    }
  }
  std::set<char> chars;
  for (size_t i = 2; i < tokens_.size(); ++i) {
    const std::string base = strip_continuation(tokens_[i]);
    if (base.size() == 1) chars.insert(base[0]);
  }
  alphabet_.assign(chars.begin(), chars.end());
  for (size_t r = 0; r < merges_.size(); ++r) {
    const auto& [l, rgt] = merges_[r];
    const int li = id(l), ri = id(rgt);
    const int res = id(merged(l, rgt));
    if (li < 0 || ri < 0 || res < 0) {
      throw ConfigError("merge '" + l + " " + rgt + "' references unknown tokens");
    }
    merge_table_.try_emplace({li, ri}, static_cast<int>(r), res);
  }
}

int SubwordVocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

bool SubwordVocab::contains(std::string_view token) const { return id(token) >= 0; }

SubwordVocab SubwordVocab::train(const std::map<std::string, int64_t>& word_counts, int target_size) {
  std::set<std::string> base;
  std::vector<std::pair<std::vector<std::string>, int64_t>> words;
  for (const auto& [w, c] : word_counts) {
    if (w.empty()) continue;
    auto syms = split_chars(w);
    for (const auto& s : syms) base.insert(s);
    // Both forms of every character so any word over the alphabet encodes.
    for (char ch : w) {
      base.insert(std::string(1, ch));
      base.insert(std::string(1, ch) + std::string(kContinuation));
    }
    words.emplace_back(std::move(syms), c);
  }
  std::vector<std::string> tokens{std::string(kBlank), std::string(kUnk)};
  tokens.insert(tokens.end(), base.begin(), base.end());
  std::set<std::string> known(tokens.begin(), tokens.end());
  std::vector<Merge> merges;
  while (static_cast<int>(tokens.size()) < target_size) {
    std::map<Merge, int64_t> pairs;
    for (const auto& [syms, c] : words) {
      for (size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += c;
    }
    const Merge* best = nullptr;
    int64_t best_count = 1;
    for (const auto& [p, c] : pairs) {
      if (c > best_count) {  // ties resolved by map order (lexicographic)
        best = &p;
        best_count = c;
      }
    }
    if (best == nullptr) break;
    const Merge m = *best;
    const std::string res = merged(m.first, m.second);
    for (auto& [syms, c] : words) {
      std::vector<std::string> next;
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
          next.push_back(res);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    merges.push_back(m);
    if (known.insert(res).second) tokens.push_back(res);
  }
  return SubwordVocab(std::move(tokens), std::move(merges));
}

SubwordVocab SubwordVocab::load(const std::filesystem::path& vocab_file,
                                const std::filesystem::path& merges_file) {
  std::ifstream vin(vocab_file);
  if (!vin) throw InputError("cannot open vocab file " + vocab_file.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(vin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  std::ifstream min(merges_file);
  if (!min) throw InputError("cannot open merges file " + merges_file.string());
  std::vector<Merge> merges;
  while (std::getline(min, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Merge m;
    if (!(ls >> m.first >> m.second)) throw InputError("malformed merge line '" + line + "'");
    merges.push_back(std::move(m));
  }
  return SubwordVocab(std::move(tokens), std::move(merges));
}

void SubwordVocab::save(const std::filesystem::path& vocab_file,
                        const std::filesystem::path& merges_file) const {
  std::ofstream vout(vocab_file);
  for (const auto& t : tokens_) vout << t << '\n';
  std::ofstream mout(merges_file);
  for (const auto& [l, r] : merges_) mout << l << ' ' << r << '\n';
  if (!vout || !mout) throw Error("failed writing vocab files");
}

std::vector<int> SubwordVocab::encode(std::string_view word, double dropout_p, Rng* rng) const {
  if (dropout_p > 0.0 && rng == nullptr) throw ConfigError("bpe dropout needs an rng");
  std::vector<int> syms;
  syms.reserve(word.size());
  for (size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    if (i + 1 < word.size()) s += kContinuation;
    const int tid = id(s);
    if (tid < 0) {
      throw EncodingError(std::string("character '") + word[i] + "' is not in the subword alphabet");
    }
    syms.push_back(tid);
  }
  while (syms.size() > 1) {
    int best_pos = -1, best_rank = 0, best_result = 0;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_table_.find({syms[i], syms[i + 1]});
      if (it == merge_table_.end()) continue;
      if (dropout_p > 0.0 && bernoulli(*rng, dropout_p)) continue;
      if (best_pos < 0 || it->second.first < best_rank) {
        best_pos = static_cast<int>(i);
        best_rank = it->second.first;
        best_result = it->second.second;
      }
    }
    if (best_pos < 0) break;
    syms[best_pos] = best_result;
    syms.erase(syms.begin() + best_pos + 1);
  }
  return syms;
}

std::vector<int> SubwordVocab::encode_words(std::span<const std::string> words, double dropout_p,
                                            Rng* rng) const {
  std::vector<int> out;
  for (const auto& w : words) {
    auto ids = encode(w, dropout_p, rng);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<std::string> SubwordVocab::decode_words(std::span<const int> ids) const {
  std::vector<std::string> words;
  std::string cur;
  bool open = false;
  for (int i : ids) {
    if (i == kBlankId) continue;
    const std::string& t = token(i);
    if (i == kUnkId) {
      cur += t;
      words.push_back(std::move(cur));
      cur.clear();
      open = false;
      continue;
    }
    cur += strip_continuation(t);
    open = true;
    if (!ends_with_continuation(t)) {
      words.push_back(std::move(cur));
      cur.clear();
      open = false;
    }
  }
  if (open && !cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string SubwordVocab::decode(std::span<const int> ids) const {
  std::string out;
  for (const auto& w : decode_words(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

uint64_t SubwordVocab::hash() const {
  uint64_t h = fnv1a("vocab");
  for (const auto& t : tokens_) h = fnv1a(t + "\n", h);
  for (const auto& [l, r] : merges_) h = fnv1a(l + " " + r + "\n", h);
  return h;
}

}  // namespace dbias
