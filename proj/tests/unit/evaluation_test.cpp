#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dbias/evaluation.hpp"
#include "dbias/vocab.hpp"
#include "fixtures.hpp"

namespace dbias {
namespace {

using testing::split_words;

std::vector<ScorerCase> load_fixtures() {
  return load_scorer_cases(std::filesystem::path(DBIAS_EXPERIMENTS_DIR) / "scorer_cases.txt");
}

TEST(Scorer, HandScoredFixtures) {
  const auto fixtures = load_fixtures();
  ASSERT_EQ(fixtures.size(), 20u);
  for (const auto& x : fixtures) {
    for (const auto& m : scorer_case_mismatches(x)) ADD_FAILURE() << m;
  }
}

TEST(Scorer, AggregateSumsCounts) {
  const auto fixtures = load_fixtures();
  std::vector<ScoredPair> pairs;
  ScoreCounts sum;
  const auto rare = scorer_case_rare_set();
  for (const auto& x : fixtures) {
    pairs.push_back(x.pair);
    sum += score_pair(x.pair, &rare);
  }
  const auto r = score(pairs, &rare);
  EXPECT_EQ(r.counts.all.total(), sum.all.total());
  EXPECT_EQ(r.counts.biased.total() + r.counts.unbiased.total(), r.counts.all.total());
  EXPECT_EQ(r.counts.ref_words, sum.ref_words);
  EXPECT_FALSE(score(pairs).r_wer.has_value());
}

TEST(Scorer, SpecExamplesAndCell) {
  const ScoredPair a{split_words("play abut now"), split_words("play about now"), {"abut"}};
  const ScoredPair pa[] = {a};
  const auto r = score(pa);
  EXPECT_EQ(r.cell(), "33.33(0.00/100.00)");
  const ScoredPair empty_bias{split_words("play abut now"), split_words("play about now"), {}};
  const ScoredPair pb[] = {empty_bias};
  const auto e = score(pb);
  EXPECT_EQ(e.u_wer, e.wer);
  EXPECT_FALSE(e.b_wer.has_value());
  EXPECT_EQ(e.cell(), "33.33(33.33/-)");
}

TEST(Scorer, IdenticalHypothesisHasNoErrors) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::string> ref;
    const int n = static_cast<int>(uniform_int(rng, 0, 8));
    for (int k = 0; k < n; ++k) ref.push_back(std::string(1, static_cast<char>('a' + uniform_int(rng, 0, 4))));
    const auto c = score_pair({ref, ref, {"a", "b"}});
    EXPECT_EQ(c.all.total(), 0);
  }
}

TEST(Align, MatchesBruteForceUpToSeven) {
  Rng rng(2);
  for (const auto& m : align_mismatches(7, 3, rng)) ADD_FAILURE() << m;
}

TEST(Align, TiePrefersSubstitution) {
  const auto s = align(split_words("x y"), split_words("z"));
  ASSERT_EQ(s.steps.size(), 2u);
  EXPECT_EQ(s.steps[0].op, EditOp::kDel);
  EXPECT_EQ(s.steps[1].op, EditOp::kSub);
}

RareWordSet letters_rare() {
  std::map<std::string, int64_t> counts{{"the", 9}, {"a", 8}, {"x", 1}, {"y", 1}, {"z", 1}};
  return RareWordSet(2, counts);
}

TEST(BiasLists, UtteranceLevelWithoutDistractors) {
  const auto rare = letters_rare();
  Rng rng(3);
  const std::vector<std::vector<std::string>> refs{split_words("the z a x z")};
  EXPECT_EQ(build_inference_bias_list(refs, rare, 0, {}, rng), split_words("z x"));
}

TEST(BiasLists, DistractorsExcludeIncludedWords) {
  const auto rare = letters_rare();
  std::vector<std::string> pool;
  for (int i = 0; i < 50; ++i) pool.push_back("w" + std::to_string(i));
  pool.push_back("x");
  const std::vector<std::vector<std::string>> refs{split_words("the x")};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    BiasListStats st;
    auto list = build_inference_bias_list(refs, rare, 10, pool, rng, &st);
    EXPECT_EQ(list.size(), 11u);
    EXPECT_EQ(list[0], "x");
    EXPECT_EQ(std::set<std::string>(list.begin(), list.end()).size(), list.size());
    EXPECT_EQ(st.rare_words, 1u);
    EXPECT_EQ(st.distractors, 10u);
  }
  Rng rng(1);
  BiasListStats st;
  auto all = build_inference_bias_list(refs, rare, 500, pool, rng, &st);
  EXPECT_EQ(all.size(), 51u);
  EXPECT_TRUE(st.pool_exhausted);
}

TEST(BiasLists, SeededAndSizedAndGrouped) {
  const auto rare = letters_rare();
  std::vector<std::string> pool;
  for (int i = 0; i < 3000; ++i) pool.push_back("p" + std::to_string(i));
  std::vector<UtteranceKey> utts{{"u1", split_words("the x"), "c1", "b1"},
                                 {"u2", split_words("y a"), "c1", "b1"},
                                 {"u3", split_words("z"), "c2", "b1"}};
  for (int n : {100, 500, 1000, 2000}) {
    Rng r1(4), r2(4);
    auto a = build_bias_lists(utts, rare, pool, {BiasListLevel::kUtterance, n, true}, r1);
    auto b = build_bias_lists(utts, rare, pool, {BiasListLevel::kUtterance, n, true}, r2);
    EXPECT_EQ(a, b);
    for (const auto& [id, list] : a) EXPECT_EQ(list.size(), static_cast<size_t>(n)) << id;
  }
  Rng rng(5);
  auto chap = build_bias_lists(utts, rare, pool, {BiasListLevel::kChapter, 5, false}, rng);
  EXPECT_EQ(chap["u1"], chap["u2"]);
  EXPECT_EQ(chap["u1"].size(), 7u);
  EXPECT_EQ(chap["u1"][0], "x");
  EXPECT_EQ(chap["u1"][1], "y");
  EXPECT_EQ(chap["u3"].size(), 6u);
  auto book = build_bias_lists(utts, rare, pool, {BiasListLevel::kBook, 0, false}, rng);
  EXPECT_EQ(book["u3"], split_words("x y z"));
  EXPECT_EQ(parse_bias_list_level(to_string(BiasListLevel::kChapter)), BiasListLevel::kChapter);
}

}  // namespace
}  // namespace dbias
