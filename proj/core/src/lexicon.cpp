#include "dbias/lexicon.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace dbias {
namespace {

std::vector<std::string> split_ws(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<std::pair<std::string, std::vector<std::string>>> read_tab_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected a tab");
    }
    out.emplace_back(line.substr(0, tab), split_ws(std::string_view(line).substr(tab + 1)));
  }
  return out;
}

}  // namespace

PhonemeLexicon::PhonemeLexicon(std::vector<std::string> inventory,
                               std::map<std::string, std::vector<int>> entries,
                               std::vector<Rule> fallback_rules)
    : inventory_(std::move(inventory)), entries_(std::move(entries)), rules_(std::move(fallback_rules)) {
  for (size_t i = 0; i < inventory_.size(); ++i) {
    if (!ids_.emplace(inventory_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate phoneme '" + inventory_[i] + "'");
    }
  }
  auto check = [&](const std::vector<int>& ph, const std::string& what) {
    for (int p : ph) {
      if (p < 0 || p >= num_phonemes()) throw ConfigError("phoneme id out of range in " + what);
    }
  };
  for (const auto& [w, ph] : entries_) check(ph, "entry '" + w + "'");
  for (const auto& r : rules_) {
    if (r.cluster.empty()) throw ConfigError("empty fallback cluster");
    check(r.phonemes, "rule '" + r.cluster + "'");
  }
}

PhonemeLexicon PhonemeLexicon::load(const std::filesystem::path& lexicon_file,
                                    const std::filesystem::path& rules_file) {
  auto lex = read_tab_file(lexicon_file);
  auto rules = read_tab_file(rules_file);
  std::set<std::string> symbols;
  for (const auto& [w, ph] : lex) symbols.insert(ph.begin(), ph.end());
  for (const auto& [c, ph] : rules) symbols.insert(ph.begin(), ph.end());
  std::vector<std::string> inventory(symbols.begin(), symbols.end());
  std::unordered_map<std::string, int> ids;
  for (size_t i = 0; i < inventory.size(); ++i) ids[inventory[i]] = static_cast<int>(i);
  auto to_ids = [&](const std::vector<std::string>& ph) {
    std::vector<int> out;
    for (const auto& s : ph) out.push_back(ids.at(s));
    return out;
  };
  std::map<std::string, std::vector<int>> entries;
  for (const auto& [w, ph] : lex) entries[w] = to_ids(ph);
  std::vector<Rule> out_rules;
  for (const auto& [c, ph] : rules) out_rules.push_back({c, to_ids(ph)});
  return PhonemeLexicon(std::move(inventory), std::move(entries), std::move(out_rules));
}

void PhonemeLexicon::save(const std::filesystem::path& lexicon_file,
                          const std::filesystem::path& rules_file) const {
  auto join = [&](const std::vector<int>& ph) {
    std::string s;
    for (int p : ph) {
      if (!s.empty()) s += ' ';
      s += inventory_[p];
    }
    return s;
  };
  std::ofstream lout(lexicon_file);
  for (const auto& [w, ph] : entries_) lout << w << '\t' << join(ph) << '\n';
  std::ofstream rout(rules_file);
  for (const auto& r : rules_) rout << r.cluster << '\t' << join(r.phonemes) << '\n';
  if (!lout || !rout) throw Error("failed writing lexicon files");
}

int PhonemeLexicon::phoneme_id(std::string_view symbol) const {
  auto it = ids_.find(std::string(symbol));
  return it == ids_.end() ? -1 : it->second;
}

void PhonemeLexicon::add_entry(std::string word, std::vector<int> phonemes) {
  for (int p : phonemes) {
    if (p < 0 || p >= num_phonemes()) throw ConfigError("phoneme id out of range for '" + word + "'");
  }
  entries_[std::move(word)] = std::move(phonemes);
}

std::vector<int> PhonemeLexicon::g2p(std::string_view word) const {
  if (word.empty()) throw InputError("g2p: empty word");
  if (auto it = entries_.find(std::string(word)); it != entries_.end()) return it->second;
  std::vector<int> out;
  size_t pos = 0;
  while (pos < word.size()) {
    const Rule* best = nullptr;
    for (const Rule& r : rules_) {
      if (word.substr(pos, r.cluster.size()) == r.cluster &&
          (best == nullptr || r.cluster.size() > best->cluster.size())) {
        best = &r;
      }
    }
    if (best == nullptr) {
      ++pos;
      continue;
    }
    out.insert(out.end(), best->phonemes.begin(), best->phonemes.end());
    pos += best->cluster.size();
  }
  if (out.empty()) throw InputError("g2p: no fallback rule covers '" + std::string(word) + "'");
  return out;
}

std::vector<int> PhonemeLexicon::g2p_words(std::span<const std::string> words) const {
  std::vector<int> out;
  for (const auto& w : words) {
    auto ph = g2p(w);
    out.insert(out.end(), ph.begin(), ph.end());
  }
  return out;
}

std::vector<std::string> PhonemeLexicon::symbols(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int i : ids) out.push_back(inventory_.at(static_cast<size_t>(i)));
  return out;
}

std::vector<int> PhonemeLexicon::parse_symbols(std::string_view text) const {
  std::vector<int> out;
  for (const auto& s : split_ws(text)) {
    const int id = phoneme_id(s);
    if (id < 0) throw InputError("unknown phoneme symbol '" + s + "'");
    out.push_back(id);
  }
  return out;
}

uint64_t PhonemeLexicon::hash() const {
  uint64_t h = fnv1a("lexicon");
  for (const auto& s : inventory_) h = fnv1a(s + "\n", h);
  for (const auto& [w, ph] : entries_) {
    h = fnv1a(w + "\t", h);
    for (int p : ph) h = fnv1a(std::to_string(p) + " ", h);
  }
  for (const auto& r : rules_) {
    h = fnv1a(r.cluster + "\t", h);
    for (int p : r.phonemes) h = fnv1a(std::to_string(p) + " ", h);
  }
  return h;
}

}  // namespace dbias
