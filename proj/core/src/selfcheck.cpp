#include "dbias/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dbias/losses.hpp"
#include "dbias/training.hpp"

namespace dbias {

Matrix random_log_probs(int rows, int V, Rng& rng) {
  Matrix m(rows, V + 1);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = 2.0 * normal(rng);
    const double lse = log_sum_exp(m.row(r));
    m.row(r).array() -= lse;
  }
  return m;
}

Matrix random_lattice(int T, int U, int V, Rng& rng) { return random_log_probs(T * (U + 1), V, rng); }

namespace {

void rnnt_paths(const Matrix& lp, int T, std::span<const int> y, int t, int u, double acc, std::vector<double>& out) {
  const int U1 = static_cast<int>(y.size()) + 1;
  const auto row = static_cast<Index>(t * U1 + u);
  if (t == T - 1 && u == U1 - 1) {
    out.push_back(acc + lp(row, 0));
    return;
  }
  if (u < U1 - 1) rnnt_paths(lp, T, y, t, u + 1, acc + lp(row, y[static_cast<size_t>(u)]), out);
  if (t < T - 1) rnnt_paths(lp, T, y, t + 1, u, acc + lp(row, 0), out);
}

}  // namespace

double brute_force_transducer_logp(const Matrix& log_probs, int T, std::span<const int> target) {
  std::vector<double> paths;
  rnnt_paths(log_probs, T, target, 0, 0, 0.0, paths);
  double total = kNegInf;
  for (double p : paths) total = log_add(total, p);
  return total;
}

double brute_force_ctc_logp(const Matrix& lp, std::span<const int> target) {
  const auto T = static_cast<int>(lp.rows());
  const auto K = static_cast<int>(lp.cols());
  std::vector<int> path(static_cast<size_t>(T), 0);
  double total = kNegInf;
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    double score = 0.0;
    for (int t = 0; t < T; ++t) {
      const int k = path[static_cast<size_t>(t)];
      score += lp(t, k);
      if (k != 0 && k != prev) collapsed.push_back(k);
      prev = k;
    }
    if (std::equal(collapsed.begin(), collapsed.end(), target.begin(), target.end())) {
      total = log_add(total, score);
    }
    int i = T - 1;
    while (i >= 0 && path[static_cast<size_t>(i)] == K - 1) path[static_cast<size_t>(i--)] = 0;
    if (i < 0) break;
    ++path[static_cast<size_t>(i)];
  }
  return total;
}

int brute_force_edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty()) return static_cast<int>(b.size());
  if (b.empty()) return static_cast<int>(a.size());
  const int diag = brute_force_edit_distance(a.subspan(1), b.subspan(1)) + (a[0] == b[0] ? 0 : 1);
  const int del = brute_force_edit_distance(a.subspan(1), b) + 1;
  const int ins = brute_force_edit_distance(a, b.subspan(1)) + 1;
  return std::min({diag, del, ins});
}

ModelConfig tiny_model_config(int vocab_size, int text_dim) {
  ModelConfig c;
  c.d_audio_in = 3;
  c.d_text_in = text_dim;
  c.d_hidden = 4;
  c.d_word_embed = 4;
  c.shared_layers = 1;
  c.predictor_layers = 1;
  c.heads = 2;
  c.vocab_size = vocab_size;
  c.lookahead_frames = {1};
  c.conv_channels = 4;
  c.ff_dim = 6;
  c.predictor_embed = 4;
  c.joint_dim = 5;
  return c;
}

GradCheck check_gradients(ModelParams& params, const std::function<Var(Tape&)>& loss, int per_tensor,
                          double eps, double floor) {
  GradCheck out;
  Tape tape;
  Var root = loss(tape);
  tape.backward(root);
  struct Entry {
    ParamGroup group;
    std::string name;
    Parameter* p;
    Matrix grad;
  };
  std::vector<Entry> entries;
  params.visit([&](ParamGroup g, const std::string& name, Parameter& p) {
    if (tape.used(p)) entries.push_back({g, name, &p, tape.grad(p)});
  });
  auto eval = [&]() {
    Tape t(false);
    return loss(t).scalar();
  };
  for (auto& e : entries) {
    if (std::find(out.groups_checked.begin(), out.groups_checked.end(), e.group) == out.groups_checked.end()) {
      out.groups_checked.push_back(e.group);
    }
    const Index n = e.p->value.size();
    const Index stride = std::max<Index>(1, n / per_tensor);
    for (Index i = 0, done = 0; i < n && done < per_tensor; i += stride, ++done) {
      double& v = e.p->value.data()[i];
      const double orig = v;
      v = orig + eps;
      const double up = eval();
      v = orig - eps;
      const double down = eval();
      v = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = e.grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = e.name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

SubwordVocab tiny_vocab() {
  std::vector<std::string> tokens{"<blank>", "<unk>"};
  for (char ch : std::string("abcdefgh")) {
    tokens.emplace_back(1, ch);
    tokens.push_back(std::string(1, ch) + "@@");
  }
  tokens.push_back("ab");
  tokens.push_back("ab@@");
  tokens.push_back("cd");
  return SubwordVocab(tokens, {{"a@@", "b"}, {"a@@", "b@@"}, {"c@@", "d"}});
}

PhonemeLexicon tiny_lexicon() {
  std::vector<std::string> inventory{"A", "B", "C", "D", "E", "F", "G", "H"};
  std::vector<PhonemeLexicon::Rule> rules;
  for (int i = 0; i < 8; ++i) rules.push_back({std::string(1, static_cast<char>('a' + i)), {i}});
  return PhonemeLexicon(inventory, {{"bead", {1, 4, 0, 3}}, {"cafe", {2, 0, 5, 4}}}, rules);
}

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(' ');
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(' ') - a + 1);
}

ErrorCounts parse_counts(const std::string& s) {
  ErrorCounts c;
  std::istringstream is(s);
  is >> c.subs >> c.dels >> c.ins;
  return c;
}

std::string show(const ErrorCounts& c) {
  return std::to_string(c.subs) + " " + std::to_string(c.dels) + " " + std::to_string(c.ins);
}

}  // namespace

std::vector<ScorerCase> load_scorer_cases(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<ScorerCase> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    size_t start = 0;
    for (size_t bar; (bar = line.find('|', start)) != std::string::npos; start = bar + 1) {
      f.push_back(trim(line.substr(start, bar - start)));
    }
    f.push_back(trim(line.substr(start)));
    if (f.size() != 13) throw InputError("bad scorer case: " + line);
    ScorerCase x;
    x.name = f[0];
    x.pair.ref = split_words(f[1]);
    x.pair.hyp = split_words(f[2]);
    for (const auto& w : split_words(f[3])) x.pair.bias.insert(w);
    x.all = parse_counts(f[4]);
    x.biased = parse_counts(f[5]);
    x.unbiased = parse_counts(f[6]);
    x.rare = parse_counts(f[7]);
    std::istringstream d(f[8]);
    d >> x.refs >> x.bias >> x.rare_refs;
    for (int i = 0; i < 4; ++i) x.rates[i] = f[9 + static_cast<size_t>(i)];
    out.push_back(std::move(x));
  }
  return out;
}

RareWordSet scorer_case_rare_set() {
  std::map<std::string, int64_t> counts;
  for (const char* w : {"the", "a", "play", "now", "to", "go", "i", "and", "it", "is"}) counts[w] = 1;
  return RareWordSet(static_cast<int>(counts.size()), counts);
}

std::vector<std::string> scorer_case_mismatches(const ScorerCase& x) {
  static const RareWordSet rare = scorer_case_rare_set();
  std::vector<std::string> bad;
  const ScoredPair pairs[] = {x.pair};
  const auto r = score(pairs, &rare);
  auto counts = [&](const char* what, const ErrorCounts& got, const ErrorCounts& want) {
    if (got.subs != want.subs || got.dels != want.dels || got.ins != want.ins) {
      bad.push_back(x.name + " " + what + ": got " + show(got) + " want " + show(want));
    }
  };
  counts("all", r.counts.all, x.all);
  counts("biased", r.counts.biased, x.biased);
  counts("unbiased", r.counts.unbiased, x.unbiased);
  counts("rare", r.counts.rare, x.rare);
  if (r.counts.ref_words != x.refs || r.counts.ref_bias_words != x.bias || r.counts.ref_rare_words != x.rare_refs) {
    bad.push_back(x.name + ": reference word counts differ");
  }
  const std::optional<double> rates[] = {r.wer, r.u_wer, r.b_wer, r.r_wer};
  const char* names[] = {"WER", "U-WER", "B-WER", "R-WER"};
  for (int i = 0; i < 4; ++i) {
    const std::string& want = x.rates[i];
    const auto& got = rates[i];
    if (want == "-") {
      if (got) bad.push_back(x.name + " " + names[i] + ": expected undefined");
      continue;
    }
    const auto slash = want.find('/');
    const double value = 100.0 * std::stod(want.substr(0, slash)) / std::stod(want.substr(slash + 1));
    if (!got || *got != value) bad.push_back(x.name + " " + names[i] + ": want " + want);
  }
  return bad;
}

std::vector<std::string> align_mismatches(int max_len, int reps, Rng& rng) {
  std::vector<std::string> bad;
  auto random_words = [&](int n) {
    std::vector<std::string> w;
    for (int i = 0; i < n; ++i) w.push_back(std::string(1, static_cast<char>('a' + uniform_int(rng, 0, 2))));
    return w;
  };
  for (int n = 0; n <= max_len; ++n) {
    for (int m = 0; m <= max_len; ++m) {
      for (int rep = 0; rep < reps; ++rep) {
        const auto a = random_words(n), b = random_words(m);
        const auto script = align(a, b);
        const std::string at = std::to_string(n) + "x" + std::to_string(m) + " #" + std::to_string(rep);
        if (script.cost() != brute_force_edit_distance(a, b)) bad.push_back(at + ": cost differs from brute force");
        std::vector<std::string> ra, rb;
        bool matches_ok = true;
        for (const auto& s : script.steps) {
          if (s.ref >= 0) ra.push_back(a[static_cast<size_t>(s.ref)]);
          if (s.hyp >= 0) rb.push_back(b[static_cast<size_t>(s.hyp)]);
          if (s.op == EditOp::kMatch && a[static_cast<size_t>(s.ref)] != b[static_cast<size_t>(s.hyp)]) {
            matches_ok = false;
          }
        }
        if (ra != a || rb != b || !matches_ok) bad.push_back(at + ": script does not replay the inputs");
      }
    }
  }
  return bad;
}

std::string to_string(SelfCheckKind k) {
  switch (k) {
    case SelfCheckKind::kLossOracles: return "loss-oracles";
    case SelfCheckKind::kGradients: return "gradients";
    case SelfCheckKind::kScorer: return "scorer";
  }
  return "?";
}

SelfCheckKind parse_self_check_kind(std::string_view s) {
  for (auto k : {SelfCheckKind::kLossOracles, SelfCheckKind::kGradients, SelfCheckKind::kScorer}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown self check '" + std::string(s) + "'");
}

namespace {

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

std::vector<int> random_target(int U, int V, Rng& rng) {
  std::vector<int> y(static_cast<size_t>(U));
  for (int& k : y) k = static_cast<int>(uniform_int(rng, 1, V));
  return y;
}

// Closed-form losses and their tape versions against enumeration, T <= 4,
// U <= 3, V <= 4.
SelfCheckResult loss_oracles(const SelfCheck& c) {
  Rng rng(c.seed);
  double worst_rnnt = 0.0, worst_ctc = 0.0;
  int infeasible = 0;
  bool flags_ok = true;
  for (int i = 0; i < c.instances; ++i) {
    const int T = static_cast<int>(uniform_int(rng, 1, 4));
    const int U = static_cast<int>(uniform_int(rng, 0, 3));
    const int V = static_cast<int>(uniform_int(rng, 1, 4));
    const auto y = random_target(U, V, rng);
    AlignmentLattice lat{random_lattice(T, U, V, rng), T, y};
    const double brute = -brute_force_transducer_logp(lat.log_probs, T, y);
    Tape tape;
    const double taped = transducer_loss(tape.constant(lat.log_probs), T, y).scalar();
    worst_rnnt = std::max({worst_rnnt, std::abs(transducer_loss(lat).loss - brute), std::abs(taped - brute)});
  }
  for (int i = 0; i < c.instances; ++i) {
    const int T = static_cast<int>(uniform_int(rng, 1, 4));
    const int U = static_cast<int>(uniform_int(rng, 0, 3));
    const int V = static_cast<int>(uniform_int(rng, 1, 4));
    const Matrix lp = random_log_probs(T, V, rng);
    const auto y = random_target(U, V, rng);
    const double brute = brute_force_ctc_logp(lp, y);
    const LossWithGrad got = ctc_loss(lp, y);
    Tape tape;
    bool feasible = false;
    const double taped = ctc_loss(tape.constant(lp), y, &feasible).scalar();
    if (std::isinf(brute)) {
      ++infeasible;
      flags_ok = flags_ok && !got.feasible && !feasible;
      continue;
    }
    flags_ok = flags_ok && got.feasible && feasible;
    worst_ctc = std::max({worst_ctc, std::abs(got.loss + brute), std::abs(taped + brute)});
  }
  SelfCheckResult r;
  r.passed = worst_rnnt <= c.tolerance && worst_ctc <= c.tolerance && flags_ok;
  r.details.push_back("transducer: " + std::to_string(c.instances) + " instances, max |diff| " + sci(worst_rnnt));
  r.details.push_back("ctc: " + std::to_string(c.instances) + " instances (" + std::to_string(infeasible) +
                      " infeasible, flags " + (flags_ok ? "agree" : "WRONG") + "), max |diff| " + sci(worst_ctc));
  return r;
}

// Combined training loss of one speech and one text item, for every query
// placement and word encoder.
SelfCheckResult gradient_suite(const SelfCheck& c) {
  const SubwordVocab vocab = tiny_vocab();
  const PhonemeLexicon lexicon = tiny_lexicon();
  const TrainContext ctx{vocab, lexicon};
  const ModelConfig config = tiny_model_config(vocab.num_labels(), text_feature_dim(lexicon));

  Rng data_rng(c.seed);
  Matrix audio(24, config.d_audio_in);
  for (Index i = 0; i < audio.size(); ++i) audio.data()[i] = normal(data_rng);
  const std::vector<TrainItem> speech{{"s0", audio, false, {"ab", "cd"}, Origin::kSpeech}};
  const std::vector<std::string> text_words{"cafe"};
  const auto ex = make_text_features(text_words, lexicon, vocab, 0.15, RepeatPolicy::uniform(1, 2), data_rng);
  const std::vector<TrainItem> text{{"t0", ex.features, true, text_words, Origin::kText}};
  const std::vector<std::string> surfaces{"ab", "cafe", "bead"};
  const auto bias = make_bias_entries(surfaces, vocab, lexicon);
  TrainRecipe recipe;
  recipe.bpe_dropout = 0.0;

  SelfCheckResult r;
  r.passed = true;
  for (BiasVariant variant : {BiasVariant::kPredictor, BiasVariant::kEncoder, BiasVariant::kEncPre,
                              BiasVariant::kJointer}) {
    for (WordEncoderKind kind : {WordEncoderKind::kTextual, WordEncoderKind::kTexPho, WordEncoderKind::kLearnable}) {
      Rng rng(c.seed + 1);
      ModelParams params = ModelParams::init(config, rng);
      params.attach_biasing({variant, kind, 2, 4, 4}, lexicon.num_phonemes(), rng);
      // zero final projections would zero every upstream biasing gradient
      params.visit([&](ParamGroup g, const std::string&, Parameter& p) {
        if (g != ParamGroup::kBiasing) return;
        for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.3 * normal(rng);
      });
      auto loss = [&](Tape& tape) {
        Rng fixed(c.seed + 2);
        return training_loss(tape, params, speech, text, bias, recipe, ctx, fixed).total;
      };
      const GradCheck g = check_gradients(params, loss, c.per_tensor);
      const std::set<ParamGroup> seen(g.groups_checked.begin(), g.groups_checked.end());
      const bool ok = g.max_rel_error < c.tolerance && seen.size() == kAllParamGroups.size();
      r.passed = r.passed && ok;
      r.details.push_back(to_string(variant) + "/" + to_string(kind) + ": " + std::to_string(g.checked) +
                          " entries in " + std::to_string(seen.size()) + " groups, max rel " +
                          sci(g.max_rel_error) + (ok ? "" : " at " + g.worst));
    }
  }
  return r;
}

SelfCheckResult scorer(const SelfCheck& c) {
  const auto cases = load_scorer_cases(c.cases);
  std::vector<std::string> bad;
  for (const auto& x : cases) {
    for (auto& m : scorer_case_mismatches(x)) bad.push_back(std::move(m));
  }
  const size_t case_errors = bad.size();
  Rng rng(c.seed);
  for (auto& m : align_mismatches(c.max_length, c.repeats, rng)) bad.push_back(std::move(m));
  SelfCheckResult r;
  r.passed = !cases.empty() && bad.empty();
  r.details.push_back(std::to_string(cases.size()) + " hand-scored cases, " + std::to_string(case_errors) +
                      " mismatches");
  r.details.push_back("alignment vs brute force, lengths 0.." + std::to_string(c.max_length) + ": " +
                      std::to_string(bad.size() - case_errors) + " mismatches");
  for (size_t i = 0; i < std::min<size_t>(bad.size(), 5); ++i) r.details.push_back(bad[i]);
  return r;
}

}  // namespace

SelfCheckResult run_self_check(const SelfCheck& check) {
  switch (check.kind) {
    case SelfCheckKind::kLossOracles: return loss_oracles(check);
    case SelfCheckKind::kGradients: return gradient_suite(check);
    case SelfCheckKind::kScorer: return scorer(check);
  }
  throw ConfigError("unknown self check");
}

}  // namespace dbias
