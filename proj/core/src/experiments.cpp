#include "dbias/experiments.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dbias/checkpoint.hpp"
#include "dbias/decoding.hpp"
#include "json_io.hpp"

namespace dbias {

namespace {

using nlohmann::json;

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> names, const char* what) {
  for (const auto& [n, e] : names) {
    if (s == n) return e;
  }
  throw ConfigError("unknown " + std::string(what) + " '" + s + "'");
}

template <typename E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, v] : names) {
    if (v == e) return n;
  }
  return "?";
}

const std::initializer_list<std::pair<const char*, AssertionKind>> kKinds{
    {"relative_reduction", AssertionKind::kRelativeReduction},
    {"relative_increase", AssertionKind::kRelativeIncrease},
    {"less", AssertionKind::kLess},
    {"less_equal", AssertionKind::kLessEqual},
    {"non_decreasing", AssertionKind::kNonDecreasing},
    {"same_outputs", AssertionKind::kSameOutputs},
    {"attention_linear", AssertionKind::kAttentionLinear},
    {"attention_product", AssertionKind::kAttentionProduct}};

const std::initializer_list<std::pair<const char*, Metric>> kMetrics{
    {"wer", Metric::kWer}, {"u_wer", Metric::kUWer}, {"b_wer", Metric::kBWer}, {"r_wer", Metric::kRWer}};

ExperimentEval eval_from_json(const json& j) {
  reject_unknown(j, {"name", "model", "list_size", "size_is_total", "level", "subset", "decoder", "beam_width",
                     "fst_boost", "count_attention", "strip_biasing", "max_utterances"},
                 "eval");
  ExperimentEval e;
  e.name = j.at("name").get<std::string>();
  e.model = j.at("model").get<std::string>();
  read(j, "list_size", e.plan.size);
  read(j, "size_is_total", e.plan.size_is_total);
  if (j.contains("level")) e.plan.level = parse_bias_list_level(j.at("level").get<std::string>());
  if (j.contains("subset")) {
    e.subset = parse_enum<EvalSubset>(j.at("subset"), {{"all", EvalSubset::kAll}, {"homophone", EvalSubset::kHomophone}},
                                      "subset");
  }
  if (j.contains("decoder")) {
    e.decoder = parse_enum<DecoderKind>(j.at("decoder"), {{"greedy", DecoderKind::kGreedy}, {"beam", DecoderKind::kBeam}},
                                        "decoder");
  }
  read(j, "beam_width", e.beam_width);
  if (j.contains("fst_boost")) e.fst_boost = j.at("fst_boost").get<double>();
  read(j, "count_attention", e.count_attention);
  read(j, "strip_biasing", e.strip_biasing);
  read(j, "max_utterances", e.max_utterances);
  if (e.plan.size < 0) throw ConfigError("eval " + e.name + ": list_size must be >= 0");
  if (e.beam_width < 1) throw ConfigError("eval " + e.name + ": beam_width must be >= 1");
  if (e.fst_boost && e.decoder != DecoderKind::kBeam) throw ConfigError("eval " + e.name + ": FST fusion needs the beam decoder");
  return e;
}

ExperimentAssertion assertion_from_json(const json& j) {
  reject_unknown(j, {"kind", "metric", "evals", "threshold", "aggregate"}, "assertion");
  ExperimentAssertion a;
  a.kind = parse_enum(j.at("kind").get<std::string>(), kKinds, "assertion kind");
  if (j.contains("metric")) a.metric = parse_enum(j.at("metric").get<std::string>(), kMetrics, "metric");
  a.evals = j.at("evals").get<std::vector<std::string>>();
  read(j, "threshold", a.threshold);
  if (j.contains("aggregate")) {
    a.aggregate = parse_enum<Aggregate>(j.at("aggregate"), {{"all", Aggregate::kAll}, {"majority", Aggregate::kMajority}},
                                        "aggregate");
  }
  const bool single = a.kind == AssertionKind::kAttentionLinear || a.kind == AssertionKind::kAttentionProduct;
  const bool pair = a.kind != AssertionKind::kNonDecreasing && !single;
  if ((single && a.evals.size() != 1) || (pair && a.evals.size() != 2) || a.evals.empty()) {
    throw ConfigError("assertion " + enum_name(a.kind, kKinds) + " has the wrong number of evals");
  }
  return a;
}

std::optional<double> metric_of(const ScoreReport& r, Metric m) {
  switch (m) {
    case Metric::kWer: return r.wer;
    case Metric::kUWer: return r.u_wer;
    case Metric::kBWer: return r.b_wer;
    case Metric::kRWer: return r.r_wer;
  }
  return std::nullopt;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

std::string fmt(std::optional<double> v) { return v ? fmt(*v) : "-"; }

/// Result of one assertion on one seed.
std::pair<bool, std::string> check(const ExperimentAssertion& a, const std::map<std::string, EvalOutcome>& ev) {
  auto at = [&](const std::string& name) -> const EvalOutcome& {
    auto it = ev.find(name);
    if (it == ev.end()) throw ConfigError("assertion names unknown eval '" + name + "'");
    return it->second;
  };
  const std::string m = enum_name(a.metric, kMetrics);
  switch (a.kind) {
    case AssertionKind::kRelativeReduction:
    case AssertionKind::kRelativeIncrease:
    case AssertionKind::kLess:
    case AssertionKind::kLessEqual: {
      const auto x = metric_of(at(a.evals[0]).report, a.metric);
      const auto ref = metric_of(at(a.evals[1]).report, a.metric);
      const std::string head = m + " " + a.evals[0] + "=" + fmt(x) + " " + a.evals[1] + "=" + fmt(ref);
      if (!x || !ref) return {false, head + " (undefined)"};
      if (a.kind == AssertionKind::kLess) return {*x < *ref, head};
      if (a.kind == AssertionKind::kLessEqual) return {*x <= *ref, head};
      if (a.kind == AssertionKind::kRelativeReduction) {
        const double rel = *ref > 0 ? (*ref - *x) / *ref : 0.0;
        return {*ref > 0 && rel >= a.threshold, head + " reduction=" + fmt(100 * rel) + "%"};
      }
      const double rel = *ref > 0 ? (*x - *ref) / *ref : (*x > 0 ? INFINITY : 0.0);
      return {rel <= a.threshold, head + " increase=" + fmt(100 * rel) + "%"};
    }
    case AssertionKind::kNonDecreasing: {
      bool ok = true;
      std::string detail = m;
      std::optional<double> prev;
      for (const auto& name : a.evals) {
        const auto x = metric_of(at(name).report, a.metric);
        detail += " " + name + "=" + fmt(x);
        if (!x || (prev && *x < *prev)) ok = false;
        prev = x;
      }
      return {ok, detail};
    }
    case AssertionKind::kSameOutputs: {
      const auto& x = at(a.evals[0]).utterances;
      const auto& y = at(a.evals[1]).utterances;
      if (x.size() != y.size()) return {false, "utterance counts differ"};
      size_t token_diffs = 0;
      double worst = 0.0;
      for (size_t i = 0; i < x.size(); ++i) {
        token_diffs += x[i].tokens != y[i].tokens;
        worst = std::max(worst, std::abs(x[i].log_score - y[i].log_score));
      }
      std::ostringstream os;
      os << x.size() << " utterances, " << token_diffs << " token mismatches, max |score diff| " << worst;
      return {token_diffs == 0 && worst <= a.threshold, os.str()};
    }
    case AssertionKind::kAttentionLinear:
    case AssertionKind::kAttentionProduct: {
      const auto& u = at(a.evals[0]).utterances;
      size_t bad = 0;
      for (const auto& o : u) {
        const int64_t L = o.encoder_frames, U = static_cast<int64_t>(o.tokens.size()) + 1;
        const int64_t want = a.kind == AssertionKind::kAttentionLinear ? L + U : L * U;
        bad += o.attention_queries != want;
      }
      return {!u.empty() && bad == 0, std::to_string(u.size()) + " utterances, " + std::to_string(bad) + " mismatches"};
    }
  }
  return {false, "?"};
}

std::string describe(const ExperimentAssertion& a) {
  std::string s = enum_name(a.kind, kKinds) + "(" + enum_name(a.metric, kMetrics);
  for (const auto& e : a.evals) s += ", " + e;
  if (a.kind == AssertionKind::kRelativeReduction || a.kind == AssertionKind::kRelativeIncrease ||
      a.kind == AssertionKind::kSameOutputs) {
    std::ostringstream os;
    os << a.threshold;
    s += ", " + os.str();
  }
  return s + ")" + (a.aggregate == Aggregate::kMajority ? " [majority]" : "");
}

struct SeedContext {
  SyntheticCorpus corpus;
  SubwordVocab vocab;
  RareWordSet rare;
};

std::string hex(uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

SelfCheck self_check_from_json(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"kind", "seed", "instances", "tolerance", "per_tensor", "cases", "max_length", "repeats"},
                 "self_check");
  SelfCheck c;
  c.kind = parse_self_check_kind(j.at("kind").get<std::string>());
  read(j, "seed", c.seed);
  read(j, "instances", c.instances);
  read(j, "tolerance", c.tolerance);
  read(j, "per_tensor", c.per_tensor);
  read(j, "max_length", c.max_length);
  read(j, "repeats", c.repeats);
  if (j.contains("cases")) {
    c.cases = j.at("cases").get<std::string>();
    if (c.cases.is_relative()) c.cases = base_dir / c.cases;
  }
  if (c.kind == SelfCheckKind::kScorer && c.cases.empty()) throw ConfigError("scorer self check needs cases");
  if (c.instances < 1 || c.per_tensor < 1 || c.max_length < 0 || c.repeats < 1) {
    throw ConfigError("self check counts must be positive");
  }
  return c;
}

}  // namespace

ExperimentSpec experiment_from_json(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("experiment is not valid JSON: " + std::string(e.what()));
  }
  reject_unknown(j, {"name", "description", "seeds", "corpus", "vocab_size", "models", "evals", "assertions",
                     "time_limit_s", "self_check"},
                 "experiment");
  ExperimentSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    read(j, "description", s.description);
    if (j.contains("self_check")) {
      s.self_check = self_check_from_json(j.at("self_check"), base_dir);
      s.seeds = {s.self_check->seed};
      for (const char* k : {"models", "evals", "assertions", "corpus"}) {
        if (j.contains(k)) throw ConfigError("experiment " + s.name + ": a self check takes no " + k);
      }
      read(j, "time_limit_s", s.time_limit_s);
      return s;
    }
    s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("corpus")) s.corpus = corpus_config_from_json(j.at("corpus"));
    read(j, "vocab_size", s.vocab_size);
    read(j, "time_limit_s", s.time_limit_s);
    std::set<std::string> names;
    for (const auto& m : j.at("models")) {
      reject_unknown(m, {"name", "init", "recipe"}, "model");
      ExperimentModel em;
      em.name = m.at("name").get<std::string>();
      read(m, "init", em.init);
      em.recipe = recipe_from_json(m.at("recipe").dump());
      if (!em.init.empty() && !names.contains(em.init)) {
        throw ConfigError("model " + em.name + " starts from unknown model '" + em.init + "'");
      }
      if (!names.insert(em.name).second) throw ConfigError("duplicate model " + em.name);
      s.models.push_back(std::move(em));
    }
    std::set<std::string> evals;
    for (const auto& e : j.at("evals")) {
      s.evals.push_back(eval_from_json(e));
      if (!names.contains(s.evals.back().model)) {
        throw ConfigError("eval " + s.evals.back().name + " uses unknown model '" + s.evals.back().model + "'");
      }
      if (!evals.insert(s.evals.back().name).second) throw ConfigError("duplicate eval " + s.evals.back().name);
    }
    for (const auto& a : j.at("assertions")) {
      s.assertions.push_back(assertion_from_json(a));
      for (const auto& e : s.assertions.back().evals) {
        if (!evals.contains(e)) throw ConfigError("assertion uses unknown eval '" + e + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("experiment " + s.name + ": " + e.what());
  }
  if (s.seeds.empty()) throw ConfigError("experiment " + s.name + " has no seeds");
  if (s.vocab_size < 3) throw ConfigError("vocab_size must be >= 3");
  return s;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read experiment " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return experiment_from_json(ss.str(), path.parent_path());
}

std::vector<Utterance> homophone_utterances(const SyntheticCorpus& corpus) {
  std::set<std::string> alt;
  for (const auto& [common, rare] : corpus.homophones) alt.insert(rare);
  std::vector<Utterance> out;
  for (const auto& u : corpus.data.test) {
    if (std::any_of(u.words.begin(), u.words.end(), [&](const std::string& w) { return alt.contains(w); })) {
      out.push_back(u);
    }
  }
  return out;
}

bool ExperimentResult::passed() const {
  return within_time && std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.passed; });
}

std::string ExperimentResult::report() const {
  std::ostringstream os;
  for (const auto& [seed, evs] : evals) {
    os << name << " seed " << seed << "\n";
    std::vector<std::pair<std::string, ScoreReport>> rows;
    for (const auto& [n, e] : evs) rows.emplace_back(n, e.report);
    os << format_report_table(rows);
  }
  for (const auto& a : assertions) {
    os << (a.passed ? "ok   " : "FAIL ") << a.description << "\n";
    for (const auto& d : a.per_seed) os << "     " << d << "\n";
  }
  os << "time " << fmt(seconds) << " s" << (within_time ? "" : " (over limit)") << "\n";
  return os.str();
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const ExperimentOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };
  ExperimentResult result;
  result.name = spec.name;
  if (spec.self_check) {
    const SelfCheckResult r = run_self_check(*spec.self_check);
    result.assertions.push_back({"self_check(" + to_string(spec.self_check->kind) + ")", r.passed, r.details});
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.within_time = spec.time_limit_s <= 0 || result.seconds <= spec.time_limit_s;
    return result;
  }
  if (!options.cache_dir.empty()) std::filesystem::create_directories(options.cache_dir);

  for (uint64_t seed : spec.seeds) {
    SyntheticCorpusConfig cc = spec.corpus;
    cc.seed = seed;
    SeedContext sc{synth_corpus(cc), {}, {}};
    sc.vocab = SubwordVocab::train(subword_training_counts(sc.corpus), spec.vocab_size);
    sc.rare = build_rare_set(transcripts(sc.corpus.data.train), cc.n_common_words);
    const uint64_t data_key =
        fnv1a(std::to_string(sc.vocab.hash()), fnv1a(corpus_config_to_json(cc).dump()));
    FitData data{sc.corpus.data.train, &sc.corpus.data.text, sc.vocab, sc.corpus.lexicon, sc.rare};

    std::map<std::string, ModelParams> models;
    std::map<std::string, uint64_t> keys;
    for (const auto& m : spec.models) {
      TrainRecipe r = m.recipe;
      // The run seed shifts every recipe seed so seeds differ end to end.
      r.seed += seed;
      const bool scratch = r.mode == TrainMode::kScratch || r.mode == TrainMode::kScratchUstr;
      if (scratch) r.model = sized_model_config(r.model, sc.vocab, sc.corpus.lexicon);
      const uint64_t key = fnv1a(recipe_to_json(r), m.init.empty() ? data_key : keys.at(m.init));
      keys[m.name] = key;
      const auto cached = options.cache_dir.empty() ? std::filesystem::path()
                                                    : options.cache_dir / ("model-" + hex(key) + ".ckpt");
      if (!cached.empty() && std::filesystem::exists(cached)) {
        models[m.name] = load_checkpoint(cached).params;
        log("seed " + std::to_string(seed) + " model " + m.name + ": cached");
        continue;
      }
      const auto ts = std::chrono::steady_clock::now();
      std::optional<ModelParams> init;
      if (!m.init.empty()) init = models.at(m.init);
      FitResult fr = fit(r, data, std::move(init));
      models[m.name] = round_to_float(fr.params);
      if (!cached.empty()) {
        save_checkpoint(cached, models[m.name], sc.vocab.hash(), sc.corpus.lexicon.hash(),
                        sc.corpus.lexicon.num_phonemes());
      }
      log("seed " + std::to_string(seed) + " model " + m.name + ": trained in " +
          fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - ts).count()) + " s");
    }

    const std::vector<Utterance> homophone = homophone_utterances(sc.corpus);
    std::vector<std::string> test_pool(sc.corpus.test_rare_words.begin(), sc.corpus.test_rare_words.end());
    std::vector<std::string> homophone_pool;
    for (const auto& [common, rare] : sc.corpus.homophones) {
      if (sc.rare.contains(rare)) homophone_pool.push_back(rare);
    }
    auto& evs = result.evals[seed];
    for (const auto& e : spec.evals) {
      ModelParams params = models.at(e.model);
      if (e.strip_biasing) params.biasing.reset();
      std::vector<Utterance> utts = e.subset == EvalSubset::kAll ? sc.corpus.data.test : homophone;
      if (e.max_utterances > 0 && utts.size() > static_cast<size_t>(e.max_utterances)) {
        utts.resize(static_cast<size_t>(e.max_utterances));
      }
      const auto& pool = e.subset == EvalSubset::kAll ? test_pool : homophone_pool;
      // Lists depend only on the seed and the plan, so evals sharing a plan
      // are scored against identical lists.
      Rng rng(fnv1a(to_string(e.plan.level) + "/" + std::to_string(e.plan.size) + "/" +
                        std::to_string(e.plan.size_is_total) + "/" + std::to_string(static_cast<int>(e.subset)),
                    seed));
      const auto utt_keys = utterance_keys(utts);
      std::vector<BiasListStats> stats;
      const auto lists = build_bias_lists(utt_keys, sc.rare, pool, e.plan, rng, &stats);
      EvalOutcome out;
      for (const auto& s : stats) {
        out.list_stats.rare_words += s.rare_words;
        out.list_stats.distractors += s.distractors;
        out.list_stats.requested_distractors += s.requested_distractors;
        out.list_stats.pool_exhausted = out.list_stats.pool_exhausted || s.pool_exhausted;
      }
      std::vector<ScoredPair> pairs;
      for (const auto& u : utts) {
        const auto& words = lists.at(u.id);
        const auto entries = make_bias_entries(words, sc.vocab, sc.corpus.lexicon);
        DecodeInput in{encode_audio(u.features, params), std::nullopt};
        if (params.biasing) in.bias_embeddings = compute_bias_embeddings(entries, *params.biasing);
        UtteranceOutput uo;
        uo.id = u.id;
        if (e.decoder == DecoderKind::kGreedy) {
          auto g = greedy_decode(in, params);
          uo.tokens = std::move(g.tokens);
          uo.log_score = g.log_score;
        } else {
          std::optional<BiasBoostFst> fst;
          if (e.fst_boost) fst = BiasBoostFst::build(entries, *e.fst_boost);
          auto hyps = beam_search(in, params, {e.beam_width, 5, 1}, fst ? &*fst : nullptr);
          uo.tokens = std::move(hyps.front().tokens);
          uo.log_score = hyps.front().log_score;
        }
        uo.encoder_frames = in.encoder_states.rows();
        if (e.count_attention) {
          AttentionCounter counter;
          score_alignment_lattice(in, uo.tokens, params, &counter);
          uo.attention_queries = counter.total();
        }
        pairs.push_back({u.words, sc.vocab.decode_words(uo.tokens), std::set<std::string>(words.begin(), words.end())});
        out.utterances.push_back(std::move(uo));
      }
      out.report = score(pairs, &sc.rare);
      log("seed " + std::to_string(seed) + " eval " + e.name + ": " + out.report.cell());
      evs[e.name] = std::move(out);
    }
  }

  for (const auto& a : spec.assertions) {
    AssertionOutcome ao;
    ao.description = describe(a);
    size_t ok = 0;
    for (const auto& [seed, evs] : result.evals) {
      const auto [pass, detail] = check(a, evs);
      ok += pass;
      ao.per_seed.push_back("seed " + std::to_string(seed) + (pass ? " ok: " : " fail: ") + detail);
    }
    const size_t n = result.evals.size();
    ao.passed = a.aggregate == Aggregate::kAll ? ok == n : 2 * ok > n;
    result.assertions.push_back(std::move(ao));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.within_time = spec.time_limit_s <= 0 || result.seconds <= spec.time_limit_s;
  return result;
}

}  // namespace dbias
