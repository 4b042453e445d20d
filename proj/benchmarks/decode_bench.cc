#include <benchmark/benchmark.h>

#include "ncm/decode.h"

namespace {

void BM_Greedy(benchmark::State& state) {
  ncm::ModelConfig c;
  c.vocab_size = 2000;
  c.embedding_size = 64;
  c.hidden_size = 128;
  const auto p = ncm::Params<float>::initialize(c);
  const std::vector<ncm::TokenId> context = {10, 20, 30, 40, 50};
  ncm::DecodeConfig d;
  d.max_len = 20;
  for (auto _ : state) benchmark::DoNotOptimize(ncm::greedy_decode<float>(context, p, c, d).logprob);
}
BENCHMARK(BM_Greedy);

void BM_Beam(benchmark::State& state) {
  ncm::ModelConfig c;
  c.vocab_size = 2000;
  c.embedding_size = 64;
  c.hidden_size = 128;
  const auto p = ncm::Params<float>::initialize(c);
  const std::vector<ncm::TokenId> context = {10, 20, 30, 40, 50};
  ncm::DecodeConfig d;
  d.max_len = 20;
  d.beam_width = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ncm::beam_search<float>(context, p, c, d).size());
}
BENCHMARK(BM_Beam)->Arg(2)->Arg(5)->Arg(10);

}  // namespace
