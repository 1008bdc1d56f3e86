#include "dbias/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "dbias/vocab.hpp"

namespace dbias {

int EditScript::cost() const {
  return static_cast<int>(std::count_if(steps.begin(), steps.end(),
                                        [](const EditStep& s) { return s.op != EditOp::kMatch; }));
}

EditScript align(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      const int diag = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  EditScript script;
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (d[i][j] == d[i - 1][j - 1] + (same ? 0 : 1)) {
        script.steps.push_back({same ? EditOp::kMatch : EditOp::kSub, static_cast<int>(i - 1),
                                static_cast<int>(j - 1)});
        --i, --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      script.steps.push_back({EditOp::kDel, static_cast<int>(i - 1), -1});
      --i;
    } else {
      script.steps.push_back({EditOp::kIns, -1, static_cast<int>(j - 1)});
      --j;
    }
  }
  std::reverse(script.steps.begin(), script.steps.end());
  return script;
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  subs += o.subs;
  dels += o.dels;
  ins += o.ins;
  return *this;
}

ScoreCounts& ScoreCounts::operator+=(const ScoreCounts& o) {
  ref_words += o.ref_words;
  ref_bias_words += o.ref_bias_words;
  ref_rare_words += o.ref_rare_words;
  all += o.all;
  biased += o.biased;
  unbiased += o.unbiased;
  rare += o.rare;
  return *this;
}

namespace {

std::optional<double> rate(int64_t errors, int64_t denom) {
  if (denom == 0) return std::nullopt;
  return 100.0 * static_cast<double>(errors) / static_cast<double>(denom);
}

std::string fmt(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

void add_error(ErrorCounts& c, EditOp op) {
  if (op == EditOp::kSub) ++c.subs;
  if (op == EditOp::kDel) ++c.dels;
  if (op == EditOp::kIns) ++c.ins;
}

}  // namespace

ScoreReport ScoreReport::from_counts(const ScoreCounts& c) {
  ScoreReport r;
  r.counts = c;
  r.wer = rate(c.all.total(), c.ref_words);
  r.u_wer = rate(c.unbiased.total(), c.ref_words - c.ref_bias_words);
  r.b_wer = rate(c.biased.total(), c.ref_bias_words);
  r.r_wer = rate(c.rare.total(), c.ref_rare_words);
  return r;
}

std::string ScoreReport::cell() const { return fmt(wer) + "(" + fmt(u_wer) + "/" + fmt(b_wer) + ")"; }

std::string ScoreReport::to_json() const {
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto errs = [](const ErrorCounts& e) {
    return nlohmann::json{{"sub", e.subs}, {"del", e.dels}, {"ins", e.ins}};
  };
  nlohmann::json j{{"wer", opt(wer)},
                   {"u_wer", opt(u_wer)},
                   {"b_wer", opt(b_wer)},
                   {"r_wer", opt(r_wer)},
                   {"ref_words", counts.ref_words},
                   {"ref_bias_words", counts.ref_bias_words},
                   {"ref_rare_words", counts.ref_rare_words},
                   {"errors", errs(counts.all)},
                   {"biased", errs(counts.biased)},
                   {"unbiased", errs(counts.unbiased)},
                   {"rare", errs(counts.rare)}};
  return j.dump();
}

ScoreCounts score_pair(const ScoredPair& pair, const RareWordSet* rare) {
  ScoreCounts c;
  auto biased = [&](const std::string& w) { return pair.bias.count(normalize_word(w)) > 0; };
  auto is_rare = [&](const std::string& w) { return rare && rare->contains(w); };
  c.ref_words = static_cast<int64_t>(pair.ref.size());
  for (const auto& w : pair.ref) {
    if (biased(w)) ++c.ref_bias_words;
    if (is_rare(w)) ++c.ref_rare_words;
  }
  for (const EditStep& s : align(pair.ref, pair.hyp).steps) {
    if (s.op == EditOp::kMatch) continue;
    const std::string& w = s.op == EditOp::kIns ? pair.hyp[static_cast<size_t>(s.hyp)]
                                                : pair.ref[static_cast<size_t>(s.ref)];
    add_error(c.all, s.op);
    add_error(biased(w) ? c.biased : c.unbiased, s.op);
    if (is_rare(w)) add_error(c.rare, s.op);
  }
  return c;
}

ScoreReport score(std::span<const ScoredPair> pairs, const RareWordSet* rare) {
  ScoreCounts total;
  for (const auto& p : pairs) total += score_pair(p, rare);
  ScoreReport r = ScoreReport::from_counts(total);
  if (!rare) r.r_wer.reset();
  return r;
}

std::string format_report_table(std::span<const std::pair<std::string, ScoreReport>> rows) {
  size_t label_w = 6;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-24s  %8s  %8s\n", static_cast<int>(label_w), "system",
                "WER(U-WER/B-WER)", "R-WER", "refs");
  os << buf;
  for (const auto& [label, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %-24s  %8s  %8lld\n", static_cast<int>(label_w),
                  label.c_str(), r.cell().c_str(), fmt(r.r_wer).c_str(),
                  static_cast<long long>(r.counts.ref_words));
    os << buf;
  }
  return os.str();
}

std::string to_string(BiasListLevel level) {
  switch (level) {
    case BiasListLevel::kUtterance: return "utterance";
    case BiasListLevel::kChapter: return "chapter";
    case BiasListLevel::kBook: return "book";
  }
  return "?";
}

BiasListLevel parse_bias_list_level(std::string_view s) {
  if (s == "utterance") return BiasListLevel::kUtterance;
  if (s == "chapter") return BiasListLevel::kChapter;
  if (s == "book") return BiasListLevel::kBook;
  throw ConfigError("unknown bias list level '" + std::string(s) + "'");
}

std::vector<std::string> build_inference_bias_list(std::span<const std::vector<std::string>> refs,
                                                   const RareWordSet& rare, int n_distractors,
                                                   std::span<const std::string> pool, Rng& rng,
                                                   BiasListStats* stats) {
  if (n_distractors < 0) throw ConfigError("n_distractors must be >= 0");
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& ref : refs) {
    for (const auto& raw : ref) {
      std::string w = normalize_word(raw);
      if (!w.empty() && rare.contains(w) && seen.insert(w).second) out.push_back(w);
    }
  }
  const size_t n_rare = out.size();
  std::vector<std::string> candidates;
  for (const auto& raw : pool) {
    std::string w = normalize_word(raw);
    if (!w.empty() && !seen.count(w)) {
      seen.insert(w);
      candidates.push_back(std::move(w));
    }
  }
  const size_t want = static_cast<size_t>(n_distractors);
  const size_t take = std::min(want, candidates.size());
  // Partial Fisher-Yates: first `take` slots become a uniform sample.
  for (size_t i = 0; i < take; ++i) {
    const size_t j = i + static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(candidates.size() - i - 1)));
    std::swap(candidates[i], candidates[j]);
    out.push_back(candidates[i]);
  }
  if (stats) *stats = {n_rare, take, want, take < want};
  return out;
}

std::map<std::string, std::vector<std::string>> build_bias_lists(
    std::span<const UtteranceKey> utts, const RareWordSet& rare, std::span<const std::string> pool,
    const BiasListPlan& plan, Rng& rng, std::vector<BiasListStats>* stats) {
  std::vector<std::string> group_order;
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < utts.size(); ++i) {
    std::string key;
    switch (plan.level) {
      case BiasListLevel::kUtterance: key = "u:" + utts[i].id; break;
      case BiasListLevel::kChapter: key = "c:" + utts[i].chapter; break;
      case BiasListLevel::kBook: key = "b:" + utts[i].book; break;
    }
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) group_order.push_back(key);
    it->second.push_back(i);
  }
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& key : group_order) {
    std::vector<std::vector<std::string>> refs;
    for (size_t i : groups[key]) refs.push_back(utts[i].words);
    int n = plan.size;
    if (plan.size_is_total) {
      std::vector<std::string> rare_only = build_inference_bias_list(refs, rare, 0, {}, rng);
      n = std::max(0, plan.size - static_cast<int>(rare_only.size()));
    }
    BiasListStats st;
    std::vector<std::string> list = build_inference_bias_list(refs, rare, n, pool, rng, &st);
    if (stats) stats->push_back(st);
    for (size_t i : groups[key]) out[utts[i].id] = list;
  }
  return out;
}

std::map<std::string, std::vector<std::string>> load_transcripts(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path.string());
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string id = line.substr(0, tab);
    if (id.empty()) throw InputError(path.string() + ":" + std::to_string(lineno) + ": missing utterance id");
    std::vector<std::string> words;
    if (tab != std::string::npos) words = normalize_text(line.substr(tab + 1));
    if (!out.emplace(id, std::move(words)).second) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": duplicate id " + id);
    }
  }
  return out;
}

void save_transcripts(const std::filesystem::path& path,
                      std::span<const std::pair<std::string, std::vector<std::string>>> rows) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  for (const auto& [id, words] : rows) {
    os << id << '\t';
    for (size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
    os << '\n';
  }
}

std::map<std::string, std::vector<std::string>> load_bias_lists(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [id, words] : j.items()) {
      for (const auto& w : words.get<std::vector<std::string>>()) {
        const std::string n = normalize_word(w);
        if (!n.empty()) out[id].push_back(n);
      }
      out.try_emplace(id);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_bias_lists(const std::filesystem::path& path, const std::map<std::string, std::vector<std::string>>& lists) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << nlohmann::json(lists).dump(1) << '\n';
}

}  // namespace dbias
