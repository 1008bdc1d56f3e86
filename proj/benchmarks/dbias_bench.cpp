#include <benchmark/benchmark.h>

#include "dbias/decoding.hpp"
#include "dbias/evaluation.hpp"
#include "dbias/losses.hpp"
#include "dbias/model.hpp"

namespace {

using namespace dbias;

Matrix gaussian(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Matrix normalized(Matrix m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const double lse = log_sum_exp(m.row(r));
    m.row(r).array() -= lse;
  }
  return m;
}

std::vector<int> random_tokens(int n, int V, Rng& rng) {
  std::vector<int> y(static_cast<size_t>(n));
  for (int& k : y) k = static_cast<int>(uniform_int(rng, 1, V));
  return y;
}

constexpr int kVocab = 63;
constexpr int kPhonemes = 12;

ModelParams biased_model(BiasVariant variant, Rng& rng) {
  ModelConfig config;
  config.vocab_size = kVocab;
  config.d_text_in = kPhonemes + 1;
  ModelParams p = ModelParams::init(config, rng);
  p.attach_biasing({variant, WordEncoderKind::kTexPho, 1, 32, 32}, kPhonemes, rng);
  return p;
}

std::vector<BiasEntry> random_entries(int n, Rng& rng) {
  std::vector<BiasEntry> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({"w" + std::to_string(i), random_tokens(static_cast<int>(uniform_int(rng, 2, 4)), kVocab, rng),
                   random_tokens(static_cast<int>(uniform_int(rng, 3, 6)), kPhonemes - 1, rng)});
  }
  return out;
}

void BM_TransducerLoss(benchmark::State& state) {
  Rng rng(1);
  const int T = static_cast<int>(state.range(0)), U = static_cast<int>(state.range(1));
  AlignmentLattice lat{normalized(gaussian(T * (U + 1), kVocab + 1, rng)), T, random_tokens(U, kVocab, rng)};
  for (auto _ : state) benchmark::DoNotOptimize(transducer_loss(lat));
  state.SetComplexityN(static_cast<int64_t>(T) * (U + 1));
}
BENCHMARK(BM_TransducerLoss)->Args({25, 10})->Args({50, 20})->Args({100, 40})->Complexity(benchmark::oN);

void BM_CtcLoss(benchmark::State& state) {
  Rng rng(2);
  const int T = static_cast<int>(state.range(0)), U = static_cast<int>(state.range(1));
  const Matrix lp = normalized(gaussian(T, kVocab + 1, rng));
  const auto y = random_tokens(U, kVocab, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss(lp, y));
}
BENCHMARK(BM_CtcLoss)->Args({25, 10})->Args({100, 40});

// Forced lattice pass: Enc-Pre attends L + U times, Jointer L * U times.
void BM_ScoreLattice(benchmark::State& state) {
  Rng rng(3);
  const auto variant = static_cast<BiasVariant>(state.range(0));
  const ModelParams params = biased_model(variant, rng);
  const auto entries = random_entries(static_cast<int>(state.range(1)), rng);
  const DecodeInput input{gaussian(25, params.config.d_hidden, rng), compute_bias_embeddings(entries, params.biasing.value())};
  const auto tokens = random_tokens(10, kVocab, rng);
  for (auto _ : state) benchmark::DoNotOptimize(score_alignment_lattice(input, tokens, params));
}
BENCHMARK(BM_ScoreLattice)
    ->ArgNames({"variant", "list"})
    ->Args({static_cast<int>(BiasVariant::kEncPre), 10})
    ->Args({static_cast<int>(BiasVariant::kEncPre), 100})
    ->Args({static_cast<int>(BiasVariant::kJointer), 10})
    ->Args({static_cast<int>(BiasVariant::kJointer), 100});

void BM_BiasEmbeddings(benchmark::State& state) {
  Rng rng(4);
  const ModelParams params = biased_model(BiasVariant::kEncPre, rng);
  const auto entries = random_entries(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(compute_bias_embeddings(entries, params.biasing.value()));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BiasEmbeddings)->RangeMultiplier(10)->Range(10, 1000)->Complexity(benchmark::oN);

void BM_EncodeAudio(benchmark::State& state) {
  Rng rng(5);
  const ModelParams params = biased_model(BiasVariant::kEncPre, rng);
  const Matrix features = gaussian(state.range(0), params.config.d_audio_in, rng);
  for (auto _ : state) benchmark::DoNotOptimize(encode_audio(features, params));
}
BENCHMARK(BM_EncodeAudio)->Arg(100)->Arg(400);

void BM_GreedyDecode(benchmark::State& state) {
  Rng rng(6);
  const ModelParams params = biased_model(BiasVariant::kEncPre, rng);
  const auto entries = random_entries(static_cast<int>(state.range(0)), rng);
  const DecodeInput input{gaussian(25, params.config.d_hidden, rng), compute_bias_embeddings(entries, params.biasing.value())};
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(input, params));
}
BENCHMARK(BM_GreedyDecode)->Arg(10)->Arg(100);

void BM_BeamSearch(benchmark::State& state) {
  Rng rng(7);
  const ModelParams params = biased_model(BiasVariant::kEncPre, rng);
  const auto entries = random_entries(100, rng);
  const DecodeInput input{gaussian(25, params.config.d_hidden, rng), compute_bias_embeddings(entries, params.biasing.value())};
  const BiasBoostFst fst = BiasBoostFst::build(entries, 1.5);
  DecodeOptions opts;
  opts.beam_width = static_cast<int>(state.range(0));
  const bool fused = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(input, params, opts, fused ? &fst : nullptr));
}
BENCHMARK(BM_BeamSearch)->ArgNames({"beam", "fst"})->Args({4, 0})->Args({4, 1})->Args({8, 1});

void BM_Align(benchmark::State& state) {
  Rng rng(8);
  auto words = [&](int n) {
    std::vector<std::string> w;
    for (int i = 0; i < n; ++i) w.push_back("w" + std::to_string(uniform_int(rng, 0, 20)));
    return w;
  };
  const auto ref = words(static_cast<int>(state.range(0))), hyp = words(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(align(ref, hyp));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Align)->RangeMultiplier(4)->Range(8, 512)->Complexity(benchmark::oNSquared);

}  // namespace

BENCHMARK_MAIN();
