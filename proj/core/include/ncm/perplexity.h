#ifndef NCM_PERPLEXITY_H_
#define NCM_PERPLEXITY_H_

#include <cmath>
#include <cstddef>

namespace ncm {

// Scored tokens are always the reply tokens plus the closing eos, for both
// the neural model and the n-gram baseline.
struct PerplexityReport {
  double total_nll = 0.0;
  std::size_t token_count = 0;
  double perplexity = 0.0;
  std::size_t pair_count = 0;

  static PerplexityReport from_totals(double total_nll, std::size_t tokens, std::size_t pairs) {
    return {total_nll, tokens, std::exp(total_nll / static_cast<double>(tokens)), pairs};
  }
};

}  // namespace ncm

#endif  // NCM_PERPLEXITY_H_
