#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dbias/decoding.hpp"
#include "fixtures.hpp"

namespace dbias {
namespace {

BiasEntry entry(std::string surface, std::vector<int> ids) { return {std::move(surface), std::move(ids), {0}}; }

TEST(Fst, SharedPrefixTrie) {
  const std::vector<BiasEntry> e{entry("abut", {3, 4}), entry("able", {3, 5})};
  auto fst = BiasBoostFst::build(e, 1.0);
  ASSERT_EQ(fst.children(0).size(), 1u);
  const int shared = fst.child(0, 3);
  EXPECT_EQ(fst.children(shared).size(), 2u);
  EXPECT_TRUE(fst.is_final(fst.child(shared, 4)));
  EXPECT_FALSE(fst.is_final(shared));
  EXPECT_EQ(fst.num_nodes(), 4);
}

TEST(Fst, NodeCountsForSharedTwoTokenPrefix) {
  const std::vector<BiasEntry> e{entry("x", {1, 2, 3}), entry("y", {1, 2, 4}), entry("z", {1, 2, 5})};
  auto fst = BiasBoostFst::build(e, 1.0);
  EXPECT_EQ(fst.num_nodes(), 1 + 2 + 3);
  EXPECT_EQ(fst.num_edges(), 5);
}

TEST(Fst, EmptyListNeverBoosts) {
  auto fst = BiasBoostFst::build({}, 2.0);
  EXPECT_EQ(fst.num_nodes(), 1);
  for (int tok = 0; tok < 6; ++tok) {
    auto [d, s] = fst.advance({}, tok);
    EXPECT_EQ(d, 0.0);
    EXPECT_EQ(s, BiasBoostFst::State{});
  }
}

TEST(Fst, AdvanceRules) {
  const double b = 1.5;
  const std::vector<BiasEntry> e{entry("ab", {1, 2}), entry("cd", {3, 4})};
  auto fst = BiasBoostFst::build(e, b);
  auto [d0, s0] = fst.advance({}, 7);
  EXPECT_EQ(d0, 0.0);
  EXPECT_EQ(s0.node, 0);

  auto [d1, s1] = fst.advance({}, 1);
  auto [d2, s2] = fst.advance(s1, 2);
  EXPECT_EQ(d1, b);
  EXPECT_EQ(d2, b);
  EXPECT_EQ(s2, BiasBoostFst::State{});  // banked, back at root

  // 1, 3, 4: the mismatch at 3 revokes the pending +b, then 3 starts "cd".
  auto [m1, t1] = fst.advance({}, 1);
  auto [m2, t2] = fst.advance(t1, 3);
  auto [m3, t3] = fst.advance(t2, 4);
  EXPECT_EQ(m1, b);
  EXPECT_DOUBLE_EQ(m2, -b + b);
  EXPECT_EQ(t2.node, fst.child(0, 3));
  EXPECT_EQ(m3, b);
  EXPECT_EQ(t3, BiasBoostFst::State{});

  // 1, 5: revoke with nothing to retry.
  auto [n2, u2] = fst.advance(t1, 5);
  EXPECT_EQ(n2, -b);
  EXPECT_EQ(u2, BiasBoostFst::State{});
}

TEST(Fst, ReplayIsPure) {
  const std::vector<BiasEntry> e{entry("a", {1, 2, 1}), entry("b", {2, 1})};
  auto fst = BiasBoostFst::build(e, 0.7);
  Rng rng(1);
  std::vector<int> seq;
  for (int i = 0; i < 40; ++i) seq.push_back(static_cast<int>(uniform_int(rng, 1, 3)));
  auto replay = [&] {
    double total = 0;
    BiasBoostFst::State s;
    for (int t : seq) {
      auto [d, n] = fst.advance(s, t);
      total += d;
      s = n;
    }
    return std::make_pair(total, s);
  };
  EXPECT_EQ(replay(), replay());
}

struct Setup {
  ModelParams model;
  DecodeInput input;
};

Setup random_setup(uint64_t seed, int frames, int vocab = 5) {
  Rng rng(seed);
  Setup s;
  auto cfg = testing::tiny_config(vocab);
  s.model = ModelParams::init(cfg, rng);
  // Sharpen the output so decoding is not uniform noise.
  s.model.output_fc.weight.value *= 4.0;
  s.input.encoder_states = Matrix(frames, cfg.d_hidden);
  for (Index i = 0; i < s.input.encoder_states.size(); ++i) s.input.encoder_states.data()[i] = 2.0 * normal(rng);
  return s;
}

TEST(Greedy, AlwaysBlankGivesNothing) {
  auto s = random_setup(2, 6);
  s.model.output_fc.weight.value.setZero();
  s.model.output_fc.bias.value.setZero();
  s.model.output_fc.bias.value(0, 0) = 5.0;
  EXPECT_TRUE(greedy_decode(s.input, s.model).tokens.empty());
  EXPECT_TRUE(beam_search(s.input, s.model, {4, 5, 1})[0].tokens.empty());
}

TEST(Greedy, OneFrameTokenThenBlank) {
  auto s = random_setup(3, 1);
  auto& m = s.model;
  const int H = m.config.d_hidden;
  const int a = 2;
  m.predictor_embedding.value.setZero();
  m.predictor_embedding.value.row(a).setConstant(5.0);
  auto& l = m.predictor_lstm[0];
  l.w_input.value.setZero();
  l.w_hidden.value.setZero();
  l.bias.value.setZero();
  for (int j = 0; j < H; ++j) {
    l.w_input.value(j, 2 * H + j) = 1.0;
    l.bias.value(0, j) = 10.0;
    l.bias.value(0, 3 * H + j) = 10.0;
  }
  m.joint_enc.weight.value.setZero();
  m.joint_enc.bias.value.setZero();
  m.joint_pred.weight.value.setZero();
  m.joint_pred.weight.value(0, 0) = 1.0;
  m.output_fc.weight.value.setZero();
  m.output_fc.weight.value(0, 0) = 20.0;
  m.output_fc.bias.value.setZero();
  m.output_fc.bias.value(0, a) = 1.0;
  EXPECT_EQ(greedy_decode(s.input, m).tokens, std::vector<int>{a});
  EXPECT_EQ(beam_search(s.input, m, {1, 5, 1})[0].tokens, std::vector<int>{a});
}

TEST(Greedy, SymbolCapBoundsEmissions) {
  auto s = random_setup(4, 3);
  s.model.output_fc.weight.value.setZero();
  s.model.output_fc.bias.value.setZero();
  s.model.output_fc.bias.value(0, 1) = 5.0;
  EXPECT_EQ(greedy_decode(s.input, s.model, 2).tokens.size(), 6u);
}

TEST(Beam, WidthOneEqualsGreedy) {
  for (uint64_t seed = 10; seed < 30; ++seed) {
    auto s = random_setup(seed, 5);
    const auto g = greedy_decode(s.input, s.model, 3);
    const auto b = beam_search(s.input, s.model, {1, 3, 1});
    EXPECT_EQ(b[0].tokens, g.tokens) << seed;
    EXPECT_NEAR(b[0].log_score, g.log_score, 1e-9) << seed;
  }
}

TEST(Beam, DominatesGreedy) {
  for (uint64_t seed = 30; seed < 50; ++seed) {
    auto s = random_setup(seed, 5);
    const auto g = greedy_decode(s.input, s.model, 3);
    const auto b = beam_search(s.input, s.model, {4, 3, 1});
    EXPECT_GE(b[0].log_score, g.log_score - 1e-9) << seed;
  }
}

TEST(Beam, ZeroBoostMatchesNoFst) {
  for (uint64_t seed = 50; seed < 60; ++seed) {
    auto s = random_setup(seed, 5);
    const auto plain = beam_search(s.input, s.model, {4, 3, 4});
    auto words = std::vector<BiasEntry>{entry("x", plain[0].tokens.empty() ? std::vector<int>{1} : plain[0].tokens),
                                        entry("y", {2, 3})};
    auto fst = BiasBoostFst::build(words, 0.0);
    const auto fused = beam_search(s.input, s.model, {4, 3, 4}, &fst);
    ASSERT_EQ(plain.size(), fused.size());
    for (size_t i = 0; i < plain.size(); ++i) {
      EXPECT_EQ(plain[i].tokens, fused[i].tokens);
      EXPECT_NEAR(plain[i].log_score, fused[i].log_score, 1e-9);
    }
  }
}

// With two frames, three symbols per frame and a beam wide enough to never
// prune, every hypothesis of up to three tokens carries its full alignment
// mass, which the forced lattice pass computes independently.
TEST(Beam, UnprunedScoresMatchLattice) {
  for (uint64_t seed = 60; seed < 66; ++seed) {
    auto s = random_setup(seed, 2, 2);
    const auto all = beam_search(s.input, s.model, {500, 3, 500});
    int checked = 0;
    for (const auto& h : all) {
      if (h.tokens.size() > 3) continue;
      EXPECT_NEAR(h.log_score, score_alignment_lattice(s.input, h.tokens, s.model), 1e-9);
      ++checked;
    }
    EXPECT_EQ(checked, 1 + 2 + 4 + 8);
  }
}

double fused_score(const BiasBoostFst& fst, const Hypothesis& h) {
  double total = h.log_score;
  BiasBoostFst::State s;
  for (int t : h.tokens) {
    auto [d, n] = fst.advance(s, t);
    total += d;
    s = n;
  }
  return total - s.pending;
}

// One symbol per frame over two frames: the unpruned beam lists every
// hypothesis of at most two tokens, so the fused winner can be found by
// replaying the automaton over all of them.
TEST(Beam, BoostFlipsRankTwoBiasWord) {
  int flips = 0;
  for (uint64_t seed = 100; seed < 200 && flips < 3; ++seed) {
    auto s = random_setup(seed, 2, 4);
    const auto all = beam_search(s.input, s.model, {100, 1, 100});
    ASSERT_EQ(all.size(), 1u + 4u + 16u);
    size_t k = 1;
    while (all[k].tokens.size() != 2) ++k;
    const auto& word = all[k].tokens;
    auto fst = BiasBoostFst::build(std::vector<BiasEntry>{entry("w", word)}, 2.0);
    const Hypothesis* best = nullptr;
    double best_score = kNegInf;
    for (const auto& h : all) {
      const double f = fused_score(fst, h);
      if (f > best_score) {
        best_score = f;
        best = &h;
      }
    }
    const auto fused = beam_search(s.input, s.model, {100, 1, 1}, &fst);
    EXPECT_EQ(fused[0].tokens, best->tokens) << seed;
    EXPECT_NEAR(fused[0].log_score, best_score, 1e-9) << seed;
    if (best->tokens != word || all[0].tokens == word) continue;
    ++flips;
    const auto narrow = beam_search(s.input, s.model, {4, 1, 1}, &fst);
    EXPECT_EQ(narrow[0].tokens, word) << seed;
  }
  EXPECT_EQ(flips, 3);
}

TEST(Beam, RevocationLeavesIncompleteHypothesesUnboosted) {
  auto s = random_setup(7, 2, 2);
  const auto plain = beam_search(s.input, s.model, {500, 3, 500});
  auto fst = BiasBoostFst::build(std::vector<BiasEntry>{entry("w", {1, 2, 1, 2})}, 1.0);
  const auto fused = beam_search(s.input, s.model, {500, 3, 500}, &fst);
  std::map<std::vector<int>, double> base;
  for (const auto& h : plain) base[h.tokens] = h.log_score;
  int compared = 0;
  for (const auto& h : fused) {
    auto it = base.find(h.tokens);
    ASSERT_NE(it, base.end());
    EXPECT_NEAR(h.log_score, fused_score(fst, {h.tokens, it->second, {}, {}}), 1e-9);
    bool completes = false;
    for (size_t i = 0; i + 4 <= h.tokens.size(); ++i) {
      completes |= std::vector<int>(h.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                    h.tokens.begin() + static_cast<std::ptrdiff_t>(i) + 4) == std::vector<int>{1, 2, 1, 2};
    }
    if (!completes) {
      EXPECT_NEAR(h.log_score, it->second, 1e-9);
      ++compared;
    }
  }
  EXPECT_GT(compared, 10);
}

TEST(Decoding, AttentionCountsOnLattice) {
  for (auto [v, enc_pre] : {std::pair{BiasVariant::kEncPre, true}, std::pair{BiasVariant::kJointer, false}}) {
    auto s = random_setup(8, 4);
    Rng rng(9);
    s.model.attach_biasing(BiasingConfig{v, WordEncoderKind::kTexPho, 2, 4, 4}, 3, rng);
    const std::vector<BiasEntry> list{{"w", {1, 2}, {0, 1}}};
    s.input.bias_embeddings = compute_bias_embeddings(list, *s.model.biasing);
    const std::vector<int> tokens{3, 1, 4};
    AttentionCounter c;
    score_alignment_lattice(s.input, tokens, s.model, &c);
    const int64_t L = 4, U = 4;
    EXPECT_EQ(c.total(), enc_pre ? L + U : L * U);
  }
}

TEST(Decoding, BiasedModelNeedsEmbeddings) {
  auto s = random_setup(10, 4);
  Rng rng(11);
  s.model.attach_biasing(BiasingConfig{}, 3, rng);
  EXPECT_THROW(greedy_decode(s.input, s.model), ConfigError);
}

TEST(Decoding, ZeroInitBiasingKeepsGreedyOutput) {
  for (uint64_t seed = 12; seed < 20; ++seed) {
    auto s = random_setup(seed, 6);
    const auto before = greedy_decode(s.input, s.model);
    Rng rng(seed);
    for (auto v : {BiasVariant::kEncPre, BiasVariant::kJointer, BiasVariant::kPredictor, BiasVariant::kEncoder}) {
      auto m = s.model;
      m.attach_biasing(BiasingConfig{v, WordEncoderKind::kTexPho, 2, 4, 4}, 3, rng);
      auto in = s.input;
      const std::vector<BiasEntry> list{{"w", {1, 2}, {0, 1}}, {"z", {3}, {2}}};
      in.bias_embeddings = compute_bias_embeddings(list, *m.biasing);
      const auto after = greedy_decode(in, m);
      EXPECT_EQ(after.tokens, before.tokens);
      EXPECT_EQ(after.log_score, before.log_score);
    }
  }
}

}  // namespace
}  // namespace dbias
