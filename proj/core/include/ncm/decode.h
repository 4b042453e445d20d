#ifndef NCM_DECODE_H_
#define NCM_DECODE_H_

#include <cstddef>
#include <span>
#include <vector>

#include "ncm/model.h"

namespace ncm {

struct DecodeConfig {
  std::size_t max_len = 64;  // emission steps, the final eos included
  std::size_t beam_width = 1;
  bool ban_unk = true;  // pad is always banned
  // Rank by logprob / length instead of the raw sequence logprob.
  bool length_normalize = false;

  void validate() const;
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // without the terminating eos
  double logprob = 0.0;         // includes the eos step when emitted
};

// Feeds back the argmax token (lowest id on ties) until eos or max_len.
template <typename T>
DecodeResult greedy_decode(std::span<const TokenId> context, const Params<T>& params,
                           const ModelConfig& config, const DecodeConfig& dconfig);

template <typename T>
struct BeamHypothesis {
  std::vector<TokenId> tokens;  // emitted tokens; ends with eos when finished by eos
  double logprob = 0.0;
  SequenceState<T> state;
  bool finished = false;

  // Tokens without a trailing eos.
  std::vector<TokenId> reply() const;
};

// Each step expands every live hypothesis over all permitted tokens and keeps
// the best beam_width candidates, ordered by score, then shorter length, then
// lexicographic token ids. Candidates ending in eos or reaching max_len
// retire to the finished pool. Stops once beam_width hypotheses have
// finished or nothing is live. Returns at most beam_width hypotheses, best
// first.
template <typename T>
std::vector<BeamHypothesis<T>> beam_search(std::span<const TokenId> context,
                                           const Params<T>& params, const ModelConfig& config,
                                           const DecodeConfig& dconfig);

}  // namespace ncm

#endif  // NCM_DECODE_H_
