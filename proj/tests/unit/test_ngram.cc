#include <doctest.h>

#include <cmath>
#include <sstream>

#include "generators.h"
#include "ncm/error.h"
#include "ncm/ngram.h"
#include "oracles.h"

using namespace ncm;

namespace {

constexpr TokenId kEos = special::kEos;
constexpr TokenId kPad = special::kPad;

std::vector<TokenId> h(std::initializer_list<TokenId> ids) { return ids; }

}  // namespace

TEST_CASE("counting one pair") {
  const std::vector<TrainingPair> pairs = {{{6}, {7}, "d"}};
  const auto counts = train_ngram(pairs, 2, 10);
  CHECK(counts.order() == 2);
  CHECK(counts.token_count() == 4);
  CHECK(counts.count(h({}), kEos) == 2);
  CHECK(counts.count(h({}), 6) == 1);
  CHECK(counts.total(h({})) == 4);
  CHECK(counts.count(h({kPad}), 6) == 1);
  CHECK(counts.count(h({6}), kEos) == 1);
  CHECK(counts.count(h({kEos}), 7) == 1);
  CHECK(counts.count(h({7}), kEos) == 1);
  CHECK(counts.total(h({8})) == 0);
  CHECK(counts.table(2).size() == 4);
}

TEST_CASE("empty counts fall back to uniform") {
  const NGramCounts counts(3, 20);
  const auto s = SmoothingConfig::defaults(3);
  for (TokenId t = 0; t < 20; ++t) CHECK(ngram_prob(counts, s, h({6, 7}), t) == doctest::Approx(0.05));
  const std::vector<TrainingPair> eval = {{{6, 7}, {8, 9, 10}, "e"}};
  const auto report = ngram_perplexity(counts, s, eval);
  CHECK(report.perplexity == doctest::Approx(20.0));
  CHECK(report.token_count == 4);
}

TEST_CASE("agrees with brute-force counting") {
  const auto train = testgen::random_pairs(30, 9, 4, 4, 4);
  const auto eval = testgen::random_pairs(10, 9, 5, 4, 4);
  const std::vector<double> w = {0.1, 0.3, 0.6};
  const auto counts = train_ngram(train, 2, 9);
  const SmoothingConfig s{w};
  for (TokenId prev = 0; prev < 9; ++prev)
    for (TokenId t = 0; t < 9; ++t) {
      const auto hist = h({prev});
      const double expect = oracle::ngram_prob(train, 2, 9, w, hist, t);
      CHECK(std::abs(ngram_prob(counts, s, hist, t) - expect) <= 1e-12 * expect);
    }
  const double expect = oracle::ngram_perplexity(train, 2, 9, w, eval);
  CHECK(ngram_perplexity(counts, s, eval).perplexity == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("distributions sum to one for any history") {
  Rng rng(8);
  for (std::size_t order : {1u, 2u, 3u, 5u}) {
    const auto counts = train_ngram(testgen::random_pairs(40, 15, order), order, 15);
    const auto s = SmoothingConfig::defaults(order);
    for (int trial = 0; trial < 250; ++trial) {
      const auto hist = testgen::random_tokens(rng, 15, 0, 6);
      double sum = 0.0;
      for (TokenId t = 0; t < 15; ++t) sum += ngram_prob(counts, s, hist, t);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("merging shards equals counting everything at once") {
  const auto pairs = testgen::random_pairs(50, 12, 9);
  const std::span<const TrainingPair> all(pairs);
  auto left = train_ngram(all.subspan(0, 20), 3, 12);
  left.merge(train_ngram(all.subspan(20), 3, 12));
  CHECK(left == train_ngram(pairs, 3, 12));
  CHECK_THROWS_AS(left.merge(NGramCounts(2, 12)), ConfigError);
}

TEST_CASE("counts file round trip") {
  const auto counts = train_ngram(testgen::random_pairs(20, 12, 1), 3, 12);
  std::stringstream ss;
  counts.write(ss);
  CHECK(ss.str().rfind("ngram\t3\t12\n", 0) == 0);
  CHECK(NGramCounts::read(ss) == counts);
  std::stringstream empty;
  CHECK_THROWS_AS(NGramCounts::read(empty), DataError);
  std::stringstream bad("ngram 2 5\n2\t1 2\t3\t4\n");
  CHECK_THROWS_AS(NGramCounts::read(bad), DataError);
}

TEST_CASE("higher order helps on the key corpus") {
  testgen::KeyCorpusLayout layout;
  const auto train = testgen::key_corpus(400, 1, layout);
  const auto eval = testgen::key_corpus(100, 2, layout);
  const auto V = layout.vocab_size();
  const double one = ngram_perplexity(train_ngram(train, 1, V), SmoothingConfig::defaults(1), eval).perplexity;
  const double five = ngram_perplexity(train_ngram(train, 5, V), SmoothingConfig::defaults(5), eval).perplexity;
  CHECK(five <= one);
}

TEST_CASE("grid search never loses to a grid point") {
  const auto train = testgen::random_pairs(60, 10, 3);
  const auto eval = testgen::random_pairs(20, 10, 4);
  const auto counts = train_ngram(train, 2, 10);
  const auto tuned = grid_search_weights(counts, eval, 0.1);
  CHECK_NOTHROW(tuned.validate(2));
  CHECK(ngram_perplexity(counts, tuned, eval).perplexity <=
        ngram_perplexity(counts, SmoothingConfig{{0.2, 0.3, 0.5}}, eval).perplexity + 1e-12);
  CHECK_THROWS_AS(grid_search_weights(counts, eval, 0.0), ConfigError);
}

TEST_CASE("smoothing validation") {
  CHECK(SmoothingConfig::defaults(5).weights == std::vector<double>{0.1, 0.1, 0.15, 0.2, 0.2, 0.25});
  CHECK_THROWS_AS((SmoothingConfig{{0.5, 0.5}}).validate(2), ConfigError);
  CHECK_THROWS_AS((SmoothingConfig{{0.0, 0.5, 0.5}}).validate(2), ConfigError);
  CHECK_THROWS_AS((SmoothingConfig{{0.2, 0.5, 0.5}}).validate(2), ConfigError);
  CHECK_THROWS_AS((SmoothingConfig{{0.5, -0.5, 1.0}}).validate(2), ConfigError);
  CHECK_THROWS_AS(NGramCounts(0, 10), ConfigError);
  NGramCounts counts(2, 10);
  const TrainingPair out_of_range{{6}, {10}, "d"};
  CHECK_THROWS_AS(counts.add_pair(out_of_range), IndexError);
  CHECK_THROWS_AS(ngram_prob(counts, SmoothingConfig::defaults(2), h({}), 10), IndexError);
}
