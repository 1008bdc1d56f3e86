#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "dbias/checkpoint.hpp"
#include "dbias/corpus.hpp"
#include "dbias/decoding.hpp"
#include "dbias/experiments.hpp"
#include "dbias/training.hpp"

namespace {

using namespace dbias;

constexpr int kExitAssertion = 1;
constexpr int kExitUsage = 2;
constexpr int kExitError = 3;

struct Globals {
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::string config;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw InputError("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SubwordVocab load_vocab(const std::filesystem::path& dir) {
  return SubwordVocab::load(dir / "vocab.txt", dir / "merges.txt");
}

RareWordSet rare_from_corpus(const SyntheticCorpus& c, int common_k) {
  return RareWordSet(common_k, c.word_counts);
}

const std::vector<Utterance>& split_of(const SyntheticCorpus& c, const std::string& split) {
  if (split == "train") return c.data.train;
  if (split == "dev") return c.data.dev;
  if (split == "test") return c.data.test;
  throw ConfigError("unknown split '" + split + "'");
}

struct SynthArgs {
  std::string out;
  int vocab_size = 64;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  SyntheticCorpusConfig cfg;
  if (!g.config.empty()) cfg = parse_corpus_config(slurp(g.config));
  if (g.seed) cfg.seed = *g.seed;
  const auto corpus = synth_corpus(cfg);
  save_corpus(corpus, a.out);
  SubwordVocab::train(subword_training_counts(corpus), a.vocab_size)
      .save(std::filesystem::path(a.out) / "vocab.txt", std::filesystem::path(a.out) / "merges.txt");
  for (const char* split : {"train", "dev", "test"}) {
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    for (const auto& u : split_of(corpus, split)) rows.emplace_back(u.id, u.words);
    save_transcripts(std::filesystem::path(a.out) / (std::string(split) + ".ref"), rows);
  }
  std::cout << "wrote " << a.out << ": " << corpus.data.train.size() << " train, " << corpus.data.dev.size()
            << " dev, " << corpus.data.test.size() << " test utterances; dataset hash " << std::hex
            << dataset_hash(corpus.data) << std::dec << "\n";
  return 0;
}

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string init;
  std::string log;
  std::optional<int> epochs;
};

int run_train(const Globals& g, const TrainArgs& a) {
  TrainRecipe r;
  if (!g.config.empty()) r = recipe_from_json(slurp(g.config));
  if (g.seed) r.seed = *g.seed;
  if (a.epochs) r.epochs = *a.epochs;
  const auto corpus = load_corpus(a.corpus);
  const auto vocab = load_vocab(a.corpus);
  const auto rare = rare_from_corpus(corpus, r.rare_common_k);
  std::optional<ModelParams> init;
  if (!a.init.empty()) {
    const auto ck = load_checkpoint(a.init);
    if (ck.vocab_hash != vocab.hash()) throw ConfigError(a.init + " was trained with a different vocabulary");
    init = ck.params;
  }
  const bool scratch = r.mode == TrainMode::kScratch || r.mode == TrainMode::kScratchUstr;
  if (scratch) r.model = sized_model_config(r.model, vocab, corpus.lexicon);
  FitData data{corpus.data.train, &corpus.data.text, vocab, corpus.lexicon, rare};
  const auto res = fit(r, data, std::move(init), [&](int epoch, const FitResult& fr) {
    std::cerr << "epoch " << epoch << " loss " << fr.epoch_total.back() << "\n";
  });
  save_checkpoint(a.out, res.params, vocab.hash(), corpus.lexicon.hash(), corpus.lexicon.num_phonemes());
  if (!a.log.empty()) {
    std::ofstream os(a.log);
    if (!os) throw InputError("cannot write " + a.log);
    for (const auto& line : res.log) os << line << "\n";
  }
  return 0;
}

struct DecodeArgs {
  std::string corpus;
  std::string checkpoint;
  std::string split = "test";
  bool greedy = false;
  int beam = 4;
  int nbest = 1;
  std::optional<double> boost;
  std::string bias_list;
  std::string bias_lists;
  std::optional<int> list_size;
  std::string level = "utterance";
  bool total = false;
  bool no_biasing = false;
  std::string out;
  std::string hyp;
  std::string write_lists;
};

int run_decode(const Globals& g, const DecodeArgs& a) {
  const auto corpus = load_corpus(a.corpus);
  const auto vocab = load_vocab(a.corpus);
  auto ck = load_checkpoint(a.checkpoint);
  if (ck.vocab_hash != vocab.hash()) throw ConfigError(a.checkpoint + " was trained with a different vocabulary");
  if (a.no_biasing) ck.params.biasing.reset();
  const auto& utts = split_of(corpus, a.split);

  std::map<std::string, std::vector<std::string>> lists;
  std::optional<std::vector<BiasEntry>> shared;
  if (!a.bias_list.empty()) {
    shared = load_bias_list(a.bias_list, vocab, corpus.lexicon);
  } else if (!a.bias_lists.empty()) {
    lists = load_bias_lists(a.bias_lists);
  } else if (a.list_size) {
    const auto rare = rare_from_corpus(corpus, corpus.config.n_common_words);
    const std::vector<std::string> pool(corpus.test_rare_words.begin(), corpus.test_rare_words.end());
    Rng rng(g.seed.value_or(17));
    lists = build_bias_lists(utterance_keys(utts), rare, pool,
                             {parse_bias_list_level(a.level), *a.list_size, a.total}, rng);
  }
  if (!a.write_lists.empty()) save_bias_lists(a.write_lists, lists);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw InputError("cannot write " + a.out);
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  std::vector<std::pair<std::string, std::vector<std::string>>> hyps;
  for (const auto& u : utts) {
    std::vector<BiasEntry> entries;
    if (shared) {
      entries = *shared;
    } else if (auto it = lists.find(u.id); it != lists.end()) {
      entries = make_bias_entries(it->second, vocab, corpus.lexicon);
    }
    DecodeInput in{encode_audio(u.features, ck.params), std::nullopt};
    if (ck.params.biasing) in.bias_embeddings = compute_bias_embeddings(entries, *ck.params.biasing);
    DecodeRecord rec;
    rec.utt_id = u.id;
    if (a.greedy) {
      auto res = greedy_decode(in, ck.params);
      rec.tokens = std::move(res.tokens);
      rec.log_score = res.log_score;
    } else {
      std::optional<BiasBoostFst> fst;
      if (a.boost) fst = BiasBoostFst::build(entries, *a.boost);
      const auto beam = beam_search(in, ck.params, {a.beam, 5, a.nbest}, fst ? &*fst : nullptr);
      rec.tokens = beam.front().tokens;
      rec.log_score = beam.front().log_score;
      for (size_t i = 1; i < beam.size(); ++i) rec.n_best.emplace_back(vocab.decode_words(beam[i].tokens), beam[i].log_score);
    }
    rec.words = vocab.decode_words(rec.tokens);
    os << to_json_line(rec) << "\n";
    hyps.emplace_back(u.id, rec.words);
  }
  if (!a.hyp.empty()) save_transcripts(a.hyp, hyps);
  return 0;
}

struct ScoreArgs {
  std::string ref;
  std::string hyp;
  std::string bias_lists;
  std::string counts;
  int common_k = 60;
  bool json = false;
};

int run_score(const ScoreArgs& a) {
  const auto refs = load_transcripts(a.ref);
  const auto hyps = load_transcripts(a.hyp);
  std::map<std::string, std::vector<std::string>> lists;
  if (!a.bias_lists.empty()) lists = load_bias_lists(a.bias_lists);
  std::optional<RareWordSet> rare;
  if (!a.counts.empty()) {
    std::ifstream is(a.counts);
    if (!is) throw InputError("cannot read " + a.counts);
    std::map<std::string, int64_t> counts;
    std::string w;
    int64_t n = 0;
    while (is >> w >> n) counts[w] += n;
    rare.emplace(a.common_k, std::move(counts));
  }
  std::vector<ScoredPair> pairs;
  for (const auto& [id, ref] : refs) {
    auto it = hyps.find(id);
    if (it == hyps.end()) throw InputError("hypothesis missing for " + id);
    ScoredPair p{ref, it->second, {}};
    if (auto l = lists.find(id); l != lists.end()) p.bias.insert(l->second.begin(), l->second.end());
    pairs.push_back(std::move(p));
  }
  for (const auto& [id, _] : hyps) {
    if (!refs.contains(id)) throw InputError("hypothesis " + id + " has no reference");
  }
  const auto report = score(pairs, rare ? &*rare : nullptr);
  if (a.json) {
    std::cout << report.to_json() << "\n";
  } else {
    const std::vector<std::pair<std::string, ScoreReport>> rows{{a.hyp, report}};
    std::cout << format_report_table(rows);
  }
  return 0;
}

struct ExperimentArgs {
  std::string name;
  std::string dir = DBIAS_EXPERIMENTS_DIR;
  std::string cache;
  std::vector<uint64_t> seeds;
  bool quiet = false;
};

int run_experiment_cmd(const Globals& g, const ExperimentArgs& a) {
  std::filesystem::path path = g.config;
  if (path.empty()) {
    if (a.name.empty()) throw ConfigError("experiment needs a name or --config");
    path = std::filesystem::path(a.dir) / (a.name + ".json");
  }
  auto spec = load_experiment(path);
  if (!a.seeds.empty()) {
    spec.seeds = a.seeds;
  } else if (g.seed) {
    spec.seeds = {*g.seed};
  }
  ExperimentOptions opt;
  opt.cache_dir = a.cache;
  if (!a.quiet) opt.log = [](const std::string& s) { std::cerr << s << "\n"; };
  const auto res = run_experiment(spec, opt);
  std::string report = res.report();
  if (g.deterministic) {
    // Wall-clock time is the only non-reproducible field.
    report = report.substr(0, report.rfind("time "));
  }
  std::cout << report;
  std::cout << (res.passed() ? "PASS " : "FAIL ") << spec.name << "\n";
  return res.passed() ? 0 : kExitAssertion;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual deep biasing for neural transducers on a synthetic corpus"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed override");
  app.add_flag("--deterministic", g.deterministic, "Omit wall-clock fields so outputs are byte-reproducible");
  app.add_option("--config", g.config, "JSON config: corpus (synth), recipe (train) or experiment definition");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus, lexicon and subword vocabulary");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--vocab-size", sa.vocab_size, "Subword vocabulary size")->check(CLI::Range(3, 100000));

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train or fine-tune a model per recipe");
  train->add_option("--corpus", ta.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "Checkpoint to write")->required();
  train->add_option("--init", ta.init, "Pre-trained checkpoint for fine-tuning")->check(CLI::ExistingFile);
  train->add_option("--log", ta.log, "JSON-lines training log");
  train->add_option("--epochs", ta.epochs, "Override the recipe epoch count");

  DecodeArgs da;
  auto* decode = app.add_subcommand("decode", "Decode a corpus split to JSON lines");
  decode->add_option("--corpus", da.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  decode->add_option("--checkpoint", da.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  decode->add_option("--split", da.split, "train, dev or test");
  auto* greedy = decode->add_flag("--greedy", da.greedy, "Greedy decoding");
  decode->add_option("--beam", da.beam, "Beam width")->check(CLI::PositiveNumber)->excludes(greedy);
  decode->add_option("--nbest", da.nbest, "Hypotheses to report")->check(CLI::PositiveNumber)->excludes(greedy);
  decode->add_option("--boost", da.boost, "Shallow-fusion boost per token")->excludes(greedy);
  auto* bl = decode->add_option("--bias-list", da.bias_list, "One bias list for every utterance")->check(CLI::ExistingFile);
  auto* bls = decode->add_option("--bias-lists", da.bias_lists, "Per-utterance lists as JSON")->check(CLI::ExistingFile);
  auto* ls = decode->add_option("--list-size", da.list_size, "Build lists with this many distractors")->check(CLI::NonNegativeNumber);
  bl->excludes(bls)->excludes(ls);
  bls->excludes(ls);
  decode->add_option("--level", da.level, "utterance, chapter or book")->check(CLI::IsMember({"utterance", "chapter", "book"}));
  decode->add_flag("--total", da.total, "--list-size is the total list length");
  decode->add_flag("--no-biasing", da.no_biasing, "Decode with the base network only");
  decode->add_option("--out", da.out, "JSON-lines output (default stdout)");
  decode->add_option("--hyp", da.hyp, "Also write utt_id<TAB>words hypotheses");
  decode->add_option("--write-lists", da.write_lists, "Write the bias lists used as JSON");

  ScoreArgs sc;
  auto* scorecmd = app.add_subcommand("score", "Score hypotheses against references");
  scorecmd->add_option("--ref", sc.ref, "Reference transcripts")->required()->check(CLI::ExistingFile);
  scorecmd->add_option("--hyp", sc.hyp, "Hypothesis transcripts")->required()->check(CLI::ExistingFile);
  scorecmd->add_option("--bias-lists", sc.bias_lists, "Per-utterance bias lists (JSON)")->check(CLI::ExistingFile);
  scorecmd->add_option("--counts", sc.counts, "Word counts (word<TAB>count) for R-WER")->check(CLI::ExistingFile);
  scorecmd->add_option("--common-k", sc.common_k, "Most frequent words excluded from the rare set")->check(CLI::NonNegativeNumber);
  scorecmd->add_flag("--json", sc.json, "Emit the report as JSON");

  ExperimentArgs ea;
  auto* exp = app.add_subcommand("experiment", "Run a pinned experiment and check its assertions");
  exp->add_option("name", ea.name, "Experiment name (file stem in the experiments directory)");
  exp->add_option("--dir", ea.dir, "Experiments directory")->check(CLI::ExistingDirectory);
  exp->add_option("--cache", ea.cache, "Directory caching trained models");
  exp->add_option("--seeds", ea.seeds, "Override the pinned seeds")->delimiter(',');
  exp->add_flag("--quiet", ea.quiet, "No progress lines on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return run_synth(g, sa);
    if (*train) return run_train(g, ta);
    if (*decode) return run_decode(g, da);
    if (*scorecmd) return run_score(sc);
    if (*exp) return run_experiment_cmd(g, ea);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
