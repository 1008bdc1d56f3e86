#include "dbias/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json_io.hpp"

namespace dbias {

namespace {

using nlohmann::json;

void check_range(const std::pair<int, int>& r, int min_lo, const char* name) {
  if (r.first < min_lo || r.second < r.first) {
    throw ConfigError(std::string("invalid range for ") + name);
  }
}

std::string concat(const std::vector<std::string>& pieces) {
  std::string s;
  for (const auto& p : pieces) s += p;
  return s;
}

std::string phoneme_symbol(int p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%02d", p);
  return buf;
}

int pick(Rng& rng, std::pair<int, int> r) {
  return static_cast<int>(uniform_int(rng, r.first, r.second));
}

/// Draws indices with weight 1 / (rank + 5).
class ZipfSampler {
 public:
  explicit ZipfSampler(int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += 1.0 / (i + 5.0);
      cdf_.push_back(acc);
    }
  }
  int draw(Rng& rng) const {
    const double u = uniform01(rng) * cdf_.back();
    return static_cast<int>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

/// Phoneme p is spelled letters[p] by default; alternate i is
/// letters[i * n_phonemes + p].
struct Speller {
  std::vector<std::vector<std::string>> options;  // per phoneme, default first
  std::vector<std::string> letters;                // non-empty: respell with any of these

  std::vector<std::string> canonical(const std::vector<int>& phonemes) const {
    std::vector<std::string> pieces;
    for (int p : phonemes) pieces.push_back(options[static_cast<size_t>(p)][0]);
    return pieces;
  }

  /// Swaps `n` distinct positions at or after `first` to a random alternate grapheme.
  void respell(std::vector<std::string>& pieces, const std::vector<int>& phonemes, int n, size_t first,
               Rng& rng) const {
    std::vector<size_t> pos;
    for (size_t i = first; i < pieces.size(); ++i) pos.push_back(i);
    shuffle(pos.begin(), pos.end(), rng);
    for (int k = 0; k < n && k < static_cast<int>(pos.size()); ++k) {
      const auto& o = options[static_cast<size_t>(phonemes[pos[static_cast<size_t>(k)]])];
      auto& piece = pieces[pos[static_cast<size_t>(k)]];
      if (letters.empty()) {
        piece = o[static_cast<size_t>(uniform_int(rng, 1, static_cast<int64_t>(o.size()) - 1))];
      } else {
        // letters[0] stands in for the default, which is never drawn
        const auto& l = letters[static_cast<size_t>(uniform_int(rng, 1, static_cast<int64_t>(letters.size()) - 1))];
        piece = l == o[0] ? letters[0] : l;
      }
    }
  }
};

Matrix render(const std::vector<std::string>& words, const PhonemeLexicon& lex,
              const std::vector<RowVector>& protos, const RowVector& silence,
              const SyntheticCorpusConfig& cfg, Rng& rng) {
  std::vector<RowVector> frames;
  auto emit = [&](const RowVector& proto, int n) {
    for (int i = 0; i < n; ++i) {
      RowVector f = proto;
      if (cfg.noise_std > 0) {
        for (Index d = 0; d < f.size(); ++d) f(d) += cfg.noise_std * normal(rng);
      }
      frames.push_back(std::move(f));
    }
  };
  emit(silence, cfg.silence_frames);
  for (size_t i = 0; i < words.size(); ++i) {
    if (i > 0) emit(silence, cfg.word_gap_frames);
    for (int p : lex.g2p(words[i])) emit(protos[static_cast<size_t>(p)], pick(rng, cfg.frames_per_phoneme));
  }
  emit(silence, cfg.silence_frames);
  Matrix m(static_cast<Index>(frames.size()), cfg.phoneme_prototype_dim);
  for (size_t i = 0; i < frames.size(); ++i) m.row(static_cast<Index>(i)) = frames[i];
  // float32 storage round-trips exactly.
  return m.cast<float>().cast<double>();
}

}  // namespace

json corpus_config_to_json(const SyntheticCorpusConfig& c) {
  auto pr = [](std::pair<int, int> p) { return json::array({p.first, p.second}); };
  return json{{"n_phonemes", c.n_phonemes},
              {"phoneme_prototype_dim", c.phoneme_prototype_dim},
              {"letters", c.letters},
              {"graphemes_per_phoneme", c.graphemes_per_phoneme},
              {"rare_respellings", c.rare_respellings},
              {"rare_plain_fraction", c.rare_plain_fraction},
              {"respell_onset", c.respell_onset},
              {"irregular_respellings", c.irregular_respellings},
              {"n_common_words", c.n_common_words},
              {"n_rare_words", c.n_rare_words},
              {"n_homophone_pairs", c.n_homophone_pairs},
              {"train_rare_fraction", c.train_rare_fraction},
              {"max_rare_occurrences", c.max_rare_occurrences},
              {"phonemes_per_word", pr(c.phonemes_per_word)},
              {"frames_per_phoneme", pr(c.frames_per_phoneme)},
              {"words_per_utterance", pr(c.words_per_utterance)},
              {"test_rare_per_utterance", pr(c.test_rare_per_utterance)},
              {"noise_std", c.noise_std},
              {"silence_frames", c.silence_frames},
              {"word_gap_frames", c.word_gap_frames},
              {"n_train", c.n_train},
              {"n_dev", c.n_dev},
              {"n_test", c.n_test},
              {"n_text_sentences", c.n_text_sentences},
              {"chapter_size", c.chapter_size},
              {"book_size", c.book_size},
              {"seed", c.seed}};
}


SyntheticCorpusConfig corpus_config_from_json(const json& j, SyntheticCorpusConfig c) {
  reject_unknown(j, {"n_phonemes", "phoneme_prototype_dim", "letters", "graphemes_per_phoneme", "rare_respellings", "rare_plain_fraction", "respell_onset", "irregular_respellings", "n_common_words", "n_rare_words", "n_homophone_pairs", "train_rare_fraction", "max_rare_occurrences", "phonemes_per_word", "frames_per_phoneme", "words_per_utterance", "test_rare_per_utterance", "noise_std", "silence_frames", "word_gap_frames", "n_train", "n_dev", "n_test", "n_text_sentences", "chapter_size", "book_size", "seed"},
                 "corpus config");
  read(j, "n_phonemes", c.n_phonemes);
  read(j, "phoneme_prototype_dim", c.phoneme_prototype_dim);
  read(j, "letters", c.letters);
  read(j, "graphemes_per_phoneme", c.graphemes_per_phoneme);
  read(j, "rare_respellings", c.rare_respellings);
  read(j, "rare_plain_fraction", c.rare_plain_fraction);
  read(j, "respell_onset", c.respell_onset);
  read(j, "irregular_respellings", c.irregular_respellings);
  read(j, "n_common_words", c.n_common_words);
  read(j, "n_rare_words", c.n_rare_words);
  read(j, "n_homophone_pairs", c.n_homophone_pairs);
  read(j, "train_rare_fraction", c.train_rare_fraction);
  read(j, "max_rare_occurrences", c.max_rare_occurrences);
  read(j, "phonemes_per_word", c.phonemes_per_word);
  read(j, "frames_per_phoneme", c.frames_per_phoneme);
  read(j, "words_per_utterance", c.words_per_utterance);
  read(j, "test_rare_per_utterance", c.test_rare_per_utterance);
  read(j, "noise_std", c.noise_std);
  read(j, "silence_frames", c.silence_frames);
  read(j, "word_gap_frames", c.word_gap_frames);
  read(j, "n_train", c.n_train);
  read(j, "n_dev", c.n_dev);
  read(j, "n_test", c.n_test);
  read(j, "n_text_sentences", c.n_text_sentences);
  read(j, "chapter_size", c.chapter_size);
  read(j, "book_size", c.book_size);
  read(j, "seed", c.seed);
  return c;
}

SyntheticCorpusConfig parse_corpus_config(std::string_view text, SyntheticCorpusConfig base) {
  try {
    return corpus_config_from_json(json::parse(text), base);
  } catch (const json::exception& e) {
    throw ConfigError("corpus config: " + std::string(e.what()));
  }
}

std::string dump_corpus_config(const SyntheticCorpusConfig& config) { return corpus_config_to_json(config).dump(2); }

void SyntheticCorpusConfig::validate() const {
  if (n_phonemes < 2) throw ConfigError("n_phonemes must be >= 2");
  if (phoneme_prototype_dim < 1) throw ConfigError("phoneme_prototype_dim must be >= 1");
  if (letters.empty()) throw ConfigError("letters must be non-empty");
  for (char ch : letters) {
    if (ch < 'a' || ch > 'z') throw ConfigError("letters must be lowercase a-z");
  }
  if (std::set<char>(letters.begin(), letters.end()).size() != letters.size()) {
    throw ConfigError("letters must be distinct");
  }
  if (graphemes_per_phoneme < 1) throw ConfigError("graphemes_per_phoneme must be >= 1");
  if (static_cast<int>(letters.size()) < n_phonemes * graphemes_per_phoneme) {
    throw ConfigError("need graphemes_per_phoneme letters per phoneme");
  }
  if (rare_respellings < 0 || rare_respellings > phonemes_per_word.second) {
    throw ConfigError("rare_respellings must be in [0, longest word length]");
  }
  if (rare_plain_fraction < 0.0 || rare_plain_fraction > 1.0) {
    throw ConfigError("rare_plain_fraction must be in [0, 1]");
  }
  if (graphemes_per_phoneme < 2 && (rare_respellings > 0 || n_homophone_pairs > 0)) {
    throw ConfigError("respelling needs graphemes_per_phoneme >= 2");
  }
  if (!respell_onset && phonemes_per_word.first < 2 && (rare_respellings > 0 || n_homophone_pairs > 0)) {
    throw ConfigError("keeping the onset needs words of at least two phonemes");
  }
  if (n_common_words < 1) throw ConfigError("n_common_words must be >= 1");
  if (n_rare_words < 0 || n_homophone_pairs < 0) throw ConfigError("word counts must be >= 0");
  if (n_homophone_pairs > n_rare_words) {
    throw ConfigError("more homophone pairs than rare words");
  }
  if (train_rare_fraction < 0.0 || train_rare_fraction > 1.0) {
    throw ConfigError("train_rare_fraction must be in [0, 1]");
  }
  if (max_rare_occurrences < 1) throw ConfigError("max_rare_occurrences must be >= 1");
  check_range(phonemes_per_word, 1, "phonemes_per_word");
  check_range(frames_per_phoneme, 1, "frames_per_phoneme");
  check_range(words_per_utterance, 2, "words_per_utterance");
  check_range(test_rare_per_utterance, 0, "test_rare_per_utterance");
  if (test_rare_per_utterance.second >= words_per_utterance.first) {
    throw ConfigError("test_rare_per_utterance must leave room for common words");
  }
  if (noise_std < 0) throw ConfigError("noise_std must be >= 0");
  if (silence_frames < 0 || word_gap_frames < 0) throw ConfigError("silence lengths must be >= 0");
  if (n_train < 1 || n_dev < 0 || n_test < 0 || n_text_sentences < 0) {
    throw ConfigError("split sizes must be non-negative (train >= 1)");
  }
  if (chapter_size < 1 || book_size < chapter_size) throw ConfigError("invalid grouping sizes");
}

SyntheticCorpus synth_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticCorpus out;
  out.config = cfg;

  Speller speller;
  speller.options.resize(static_cast<size_t>(cfg.n_phonemes));
  for (int i = 0; i < cfg.graphemes_per_phoneme; ++i) {
    for (int p = 0; p < cfg.n_phonemes; ++p) {
      speller.options[static_cast<size_t>(p)].push_back(std::string(1, cfg.letters[static_cast<size_t>(i * cfg.n_phonemes + p)]));
    }
  }
  if (cfg.irregular_respellings) {
    for (char c : cfg.letters) speller.letters.push_back(std::string(1, c));
  }
  std::vector<std::string> inventory;
  for (int p = 0; p < cfg.n_phonemes; ++p) inventory.push_back(phoneme_symbol(p));
  std::vector<PhonemeLexicon::Rule> rules;
  for (size_t i = 0; i < cfg.letters.size(); ++i) {
    rules.push_back({std::string(1, cfg.letters[i]), {static_cast<int>(i) % cfg.n_phonemes}});
  }

  const size_t onset = cfg.respell_onset ? 0 : 1;
  std::set<std::vector<int>> used_prons;
  std::set<std::string> used_spellings;
  std::map<std::string, std::vector<int>> entries;
  // No phoneme follows itself, so every spelling parses back uniquely.
  auto fresh_word = [&](int respellings) -> std::pair<std::string, std::vector<int>> {
    for (int tries = 0; tries < 10000; ++tries) {
      std::vector<int> pron(static_cast<size_t>(pick(rng, cfg.phonemes_per_word)));
      for (size_t i = 0; i < pron.size(); ++i) {
        do {
          pron[i] = static_cast<int>(uniform_int(rng, 0, cfg.n_phonemes - 1));
        } while (i > 0 && pron[i] == pron[i - 1]);
      }
      if (used_prons.count(pron)) continue;
      std::vector<std::string> pieces = speller.canonical(pron);
      speller.respell(pieces, pron, respellings, onset, rng);
      std::string spelling = concat(pieces);
      if (used_spellings.count(spelling)) continue;
      used_prons.insert(pron);
      used_spellings.insert(spelling);
      return {spelling, pron};
    }
    throw ConfigError("cannot generate enough distinct words; enlarge the phoneme set or word length");
  };
  for (int i = 0; i < cfg.n_common_words; ++i) {
    auto [w, pron] = fresh_word(0);
    out.common_words.push_back(w);
    entries[w] = pron;
  }
  std::vector<size_t> common_order(out.common_words.size());
  for (size_t i = 0; i < common_order.size(); ++i) common_order[i] = i;
  shuffle(common_order.begin(), common_order.end(), rng);
  // Respell one phoneme of a common word; cycles over the common words, so
  // one word may get several homophones.
  for (size_t i = 0, stalled = 0;
       static_cast<int>(out.homophones.size()) < cfg.n_homophone_pairs && stalled < common_order.size(); ++i) {
    const std::string& base = out.common_words[common_order[i % common_order.size()]];
    const std::vector<int>& pron = entries[base];
    ++stalled;
    for (int tries = 0; tries < 50; ++tries) {
      std::vector<std::string> pieces = speller.canonical(pron);
      speller.respell(pieces, pron, 1, onset, rng);
      std::string spelling = concat(pieces);
      if (used_spellings.count(spelling)) continue;
      used_spellings.insert(spelling);
      entries[spelling] = pron;
      out.homophones.emplace_back(base, spelling);
      out.rare_words.push_back(spelling);
      stalled = 0;
      break;
    }
  }
  if (static_cast<int>(out.homophones.size()) < cfg.n_homophone_pairs) {
    throw ConfigError("cannot respell enough common words into homophones");
  }
  while (static_cast<int>(out.rare_words.size()) < cfg.n_rare_words) {
    const bool plain = uniform01(rng) < cfg.rare_plain_fraction;
    auto [w, pron] = fresh_word(plain ? 0 : cfg.rare_respellings);
    out.rare_words.push_back(w);
    entries[w] = pron;
  }
  out.lexicon = PhonemeLexicon(inventory, entries, rules);

  std::vector<std::string> rare_shuffled = out.rare_words;
  shuffle(rare_shuffled.begin(), rare_shuffled.end(), rng);
  const auto n_train_rare = static_cast<size_t>(cfg.train_rare_fraction * static_cast<double>(rare_shuffled.size()) + 0.5);
  std::vector<std::string> train_rare(rare_shuffled.begin(), rare_shuffled.begin() + static_cast<std::ptrdiff_t>(n_train_rare));
  out.test_rare_words.assign(rare_shuffled.begin() + static_cast<std::ptrdiff_t>(n_train_rare), rare_shuffled.end());
  std::sort(out.test_rare_words.begin(), out.test_rare_words.end());

  std::vector<RowVector> protos;
  for (int p = 0; p < cfg.n_phonemes; ++p) {
    RowVector v(cfg.phoneme_prototype_dim);
    for (Index d = 0; d < v.size(); ++d) v(d) = normal(rng);
    protos.push_back(v);
  }
  RowVector silence(cfg.phoneme_prototype_dim);
  for (Index d = 0; d < silence.size(); ++d) silence(d) = normal(rng);

  const ZipfSampler zipf(cfg.n_common_words);
  auto common = [&]() { return out.common_words[static_cast<size_t>(zipf.draw(rng))]; };

  // Training transcripts: one rare slot per chosen utterance; each common
  // word is guaranteed more occurrences than any rare word can get.
  std::vector<int> lengths(static_cast<size_t>(cfg.n_train));
  for (int& n : lengths) n = pick(rng, cfg.words_per_utterance);
  std::vector<std::string> rare_slots;
  for (const auto& w : train_rare) {
    const int k = static_cast<int>(uniform_int(rng, 1, cfg.max_rare_occurrences));
    for (int i = 0; i < k; ++i) rare_slots.push_back(w);
  }
  if (static_cast<int>(rare_slots.size()) > cfg.n_train) {
    throw ConfigError("too many training rare-word occurrences for n_train utterances");
  }
  shuffle(rare_slots.begin(), rare_slots.end(), rng);
  std::vector<size_t> utt_order(lengths.size());
  for (size_t i = 0; i < utt_order.size(); ++i) utt_order[i] = i;
  shuffle(utt_order.begin(), utt_order.end(), rng);
  std::vector<std::string> rare_of(lengths.size());
  for (size_t i = 0; i < rare_slots.size(); ++i) rare_of[utt_order[i]] = rare_slots[i];
  int64_t common_slots = 0;
  for (size_t i = 0; i < lengths.size(); ++i) common_slots += lengths[i] - (rare_of[i].empty() ? 0 : 1);
  const int64_t guaranteed = static_cast<int64_t>(cfg.n_common_words) * (cfg.max_rare_occurrences + 1);
  if (common_slots < guaranteed) {
    throw ConfigError("training set too small to keep common words above the rare threshold");
  }
  std::vector<std::string> common_stream;
  for (const auto& w : out.common_words) {
    for (int i = 0; i <= cfg.max_rare_occurrences; ++i) common_stream.push_back(w);
  }
  while (static_cast<int64_t>(common_stream.size()) < common_slots) common_stream.push_back(common());
  shuffle(common_stream.begin(), common_stream.end(), rng);

  auto place = [&](std::vector<std::string> words, const std::vector<std::string>& rare) {
    for (const auto& r : rare) {
      const auto pos = uniform_int(rng, 0, static_cast<int64_t>(words.size()));
      words.insert(words.begin() + pos, r);
    }
    return words;
  };
  auto make_utt = [&](const std::string& split, int i, std::vector<std::string> words) {
    Utterance u;
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05d", split.c_str(), i);
    u.id = id;
    u.chapter = split + "-c" + std::to_string(i / cfg.chapter_size);
    u.book = split + "-b" + std::to_string(i / cfg.book_size);
    u.words = std::move(words);
    u.features = render(u.words, out.lexicon, protos, silence, cfg, rng);
    return u;
  };

  size_t cursor = 0;
  for (int i = 0; i < cfg.n_train; ++i) {
    const auto si = static_cast<size_t>(i);
    const int n_common = lengths[si] - (rare_of[si].empty() ? 0 : 1);
    std::vector<std::string> words(common_stream.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   common_stream.begin() + static_cast<std::ptrdiff_t>(cursor) + n_common);
    cursor += static_cast<size_t>(n_common);
    std::vector<std::string> rare;
    if (!rare_of[si].empty()) rare.push_back(rare_of[si]);
    out.data.train.push_back(make_utt("train", i, place(std::move(words), rare)));
  }

  std::vector<std::string> test_stream;
  size_t test_cursor = 0;
  auto next_test_rare = [&]() {
    if (test_cursor == test_stream.size()) {
      test_stream = out.test_rare_words;
      shuffle(test_stream.begin(), test_stream.end(), rng);
      test_cursor = 0;
    }
    return test_stream[test_cursor++];
  };
  auto eval_split = [&](const std::string& split, int n, std::vector<Utterance>& dst) {
    for (int i = 0; i < n; ++i) {
      const int len = pick(rng, cfg.words_per_utterance);
      const int n_rare = out.test_rare_words.empty() ? 0 : pick(rng, cfg.test_rare_per_utterance);
      std::vector<std::string> words;
      for (int k = 0; k < len - n_rare; ++k) words.push_back(common());
      std::vector<std::string> rare;
      for (int k = 0; k < n_rare; ++k) rare.push_back(next_test_rare());
      dst.push_back(make_utt(split, i, place(std::move(words), rare)));
    }
  };
  eval_split("dev", cfg.n_dev, out.data.dev);
  eval_split("test", cfg.n_test, out.data.test);

  for (int i = 0; i < cfg.n_text_sentences; ++i) {
    std::vector<std::string> s(static_cast<size_t>(pick(rng, cfg.words_per_utterance)));
    for (auto& w : s) w = common();
    out.data.text.push_back(std::move(s));
  }
  std::vector<std::string> sorted_rare = out.rare_words;
  std::sort(sorted_rare.begin(), sorted_rare.end());
  for (const auto& w : sorted_rare) out.data.text.push_back({w});
  out.data.feature_dim = cfg.phoneme_prototype_dim;

  for (const auto& u : out.data.train) {
    for (const auto& w : u.words) ++out.word_counts[w];
  }
  return out;
}

std::map<std::string, int64_t> subword_training_counts(const SyntheticCorpus& corpus) {
  auto counts = corpus.word_counts;
  for (const auto& line : corpus.data.text) {
    for (const auto& w : line) ++counts[w];
  }
  return counts;
}

std::vector<std::vector<std::string>> transcripts(const std::vector<Utterance>& utts) {
  std::vector<std::vector<std::string>> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(u.words);
  return out;
}

std::vector<UtteranceKey> utterance_keys(const std::vector<Utterance>& utts) {
  std::vector<UtteranceKey> out;
  for (const auto& u : utts) out.push_back({u.id, u.words, u.chapter, u.book});
  return out;
}

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw InputError("cannot write " + p.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
  std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
  if (!is) throw InputError("cannot read " + p.string());
  return is;
}

void save_split(const std::vector<Utterance>& utts, const std::filesystem::path& dir, const std::string& name) {
  auto tsv = open_out(dir / (name + ".tsv"));
  auto feats = open_out(dir / (name + ".feats"), true);
  for (const auto& u : utts) {
    tsv << u.id << '\t' << u.chapter << '\t' << u.book << '\t' << u.features.rows() << '\t'
        << join(u.words) << '\n';
    for (Index r = 0; r < u.features.rows(); ++r) {
      for (Index c = 0; c < u.features.cols(); ++c) {
        const float f = static_cast<float>(u.features(r, c));
        feats.write(reinterpret_cast<const char*>(&f), sizeof f);
      }
    }
  }
}

std::vector<Utterance> load_split(const std::filesystem::path& dir, const std::string& name, int dim) {
  auto tsv = open_in(dir / (name + ".tsv"));
  auto feats = open_in(dir / (name + ".feats"), true);
  std::vector<Utterance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(tsv, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() != 5) {
      throw InputError(name + ".tsv line " + std::to_string(lineno) + ": expected 5 columns");
    }
    Utterance u{cols[0], Matrix(), split_ws(cols[4]), cols[1], cols[2]};
    const int frames = std::stoi(cols[3]);
    u.features.resize(frames, dim);
    for (Index r = 0; r < frames; ++r) {
      for (Index c = 0; c < dim; ++c) {
        float f;
        if (!feats.read(reinterpret_cast<char*>(&f), sizeof f)) {
          throw InputError(name + ".feats is truncated");
        }
        u.features(r, c) = f;
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta{{"config", corpus_config_to_json(corpus.config)},
            {"feature_dim", corpus.data.feature_dim},
            {"common_words", corpus.common_words},
            {"rare_words", corpus.rare_words},
            {"test_rare_words", corpus.test_rare_words},
            {"homophones", corpus.homophones}};
  open_out(dir / "corpus.json") << meta.dump(2) << '\n';
  corpus.lexicon.save(dir / "lexicon.txt", dir / "rules.txt");
  {
    auto os = open_out(dir / "counts.tsv");
    for (const auto& [w, n] : corpus.word_counts) os << w << '\t' << n << '\n';
  }
  {
    auto os = open_out(dir / "text.txt");
    for (const auto& s : corpus.data.text) os << join(s) << '\n';
  }
  save_split(corpus.data.train, dir, "train");
  save_split(corpus.data.dev, dir, "dev");
  save_split(corpus.data.test, dir, "test");
}

SyntheticCorpus load_corpus(const std::filesystem::path& dir) {
  SyntheticCorpus c;
  json meta;
  try {
    meta = json::parse(open_in(dir / "corpus.json"));
  } catch (const json::exception& e) {
    throw InputError("corpus.json: " + std::string(e.what()));
  }
  try {
    c.config = corpus_config_from_json(meta.at("config"));
  } catch (const json::exception& e) {
    throw InputError("corpus.json: " + std::string(e.what()));
  }
  c.data.feature_dim = meta.at("feature_dim");
  c.common_words = meta.at("common_words").get<std::vector<std::string>>();
  c.rare_words = meta.at("rare_words").get<std::vector<std::string>>();
  c.test_rare_words = meta.at("test_rare_words").get<std::vector<std::string>>();
  c.homophones = meta.at("homophones").get<std::vector<std::pair<std::string, std::string>>>();
  c.lexicon = PhonemeLexicon::load(dir / "lexicon.txt", dir / "rules.txt");
  {
    auto is = open_in(dir / "counts.tsv");
    std::string w;
    int64_t n;
    while (is >> w >> n) c.word_counts[w] = n;
  }
  {
    auto is = open_in(dir / "text.txt");
    for (std::string line; std::getline(is, line);) {
      if (!line.empty()) c.data.text.push_back(split_ws(line));
    }
  }
  c.data.train = load_split(dir, "train", c.data.feature_dim);
  c.data.dev = load_split(dir, "dev", c.data.feature_dim);
  c.data.test = load_split(dir, "test", c.data.feature_dim);
  return c;
}

uint64_t dataset_hash(const Dataset& data) {
  uint64_t h = fnv1a("dataset");
  auto mix = [&](std::string_view s) { h = fnv1a(s, h); };
  for (const auto* split : {&data.train, &data.dev, &data.test}) {
    for (const auto& u : *split) {
      mix(u.id);
      mix(u.chapter);
      mix(u.book);
      for (const auto& w : u.words) mix(w);
      mix(std::string_view(reinterpret_cast<const char*>(u.features.data()),
                           sizeof(double) * static_cast<size_t>(u.features.size())));
    }
  }
  for (const auto& s : data.text) {
    for (const auto& w : s) mix(w);
  }
  return h;
}

}  // namespace dbias
