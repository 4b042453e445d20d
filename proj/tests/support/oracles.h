#ifndef NCM_TESTS_ORACLES_H_
#define NCM_TESTS_ORACLES_H_

// Reference implementations written straight from the defining formulas,
// sharing no code with the library beyond its data containers.

#include <span>
#include <vector>

#include "ncm/model.h"
#include "ncm/ngram.h"

namespace ncm::oracle {

// Mean cross-entropy over reply + eos, computed with scalar loops.
double pair_loss(const Params<double>& params, const ModelConfig& config, const TrainingPair& pair);

// log P(sequence | context) where sequence is emitted token by token after
// the context and eos have been read.
double sequence_logprob(const Params<double>& params, const ModelConfig& config,
                        std::span<const TokenId> context, std::span<const TokenId> sequence);

struct Scored {
  std::vector<TokenId> tokens;  // ends with eos unless it hit max_len
  double logprob = 0.0;
};

// Every sequence over `alphabet` that ends in eos within max_len tokens or
// has exactly max_len tokens without eos, sorted by logprob descending, then
// length, then token ids.
std::vector<Scored> enumerate_replies(const Params<double>& params, const ModelConfig& config,
                                      std::span<const TokenId> context,
                                      std::span<const TokenId> alphabet, std::size_t max_len);

// Interpolated n-gram probability by scanning the raw training streams for
// every query.
double ngram_prob(std::span<const TrainingPair> training, std::size_t order, std::size_t vocab_size,
                  std::span<const double> weights, std::span<const TokenId> history, TokenId token);

double ngram_perplexity(std::span<const TrainingPair> training, std::size_t order,
                        std::size_t vocab_size, std::span<const double> weights,
                        std::span<const TrainingPair> eval);

}  // namespace ncm::oracle

#endif  // NCM_TESTS_ORACLES_H_
