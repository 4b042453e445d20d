#ifndef NCM_NGRAM_H_
#define NCM_NGRAM_H_

// Interpolated n-gram baseline with a uniform floor:
//
//   P(w | h) = l0 / V + sum_{k=1..n} l_k * count_k(h_k, w) / total_k(h_k)
//
// where h_k is the last k-1 tokens of the history. An order whose history
// was never seen contributes nothing and its weight moves to the floor, so
// every query is a proper distribution over the V ids.
//
// Each pair is counted as the stream  <pad>^(n-1) context <eos> reply <eos>.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ncm/perplexity.h"
#include "ncm/text.h"

namespace ncm {

class NGramCounts {
 public:
  struct HistoryCounts {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;

    bool operator==(const HistoryCounts&) const = default;
  };
  using Table = std::map<std::vector<TokenId>, HistoryCounts>;

  NGramCounts(std::size_t order, std::size_t vocab_size);

  std::size_t order() const { return tables_.size(); }
  std::size_t vocab_size() const { return vocab_size_; }
  // Number of predicted tokens counted (order-1 total).
  std::uint64_t token_count() const;

  void add_pair(const TrainingPair& pair);
  // Adds another shard's counts; orders and vocab sizes must agree.
  void merge(const NGramCounts& other);

  // Table for order k in [1, order]; keys are histories of length k-1.
  const Table& table(std::size_t k) const { return tables_.at(k - 1); }

  std::uint64_t count(std::span<const TokenId> history, TokenId token) const;
  std::uint64_t total(std::span<const TokenId> history) const;

  // Sorted text: header "ngram\t<order>\t<vocab>", then one line per entry
  // "<k>\t<history ids space-separated>\t<token>\t<count>".
  void write(std::ostream& out) const;
  static NGramCounts read(std::istream& in);
  void save(const std::string& path) const;
  static NGramCounts load(const std::string& path);

  bool operator==(const NGramCounts&) const = default;

 private:
  std::size_t vocab_size_;
  std::vector<Table> tables_;
};

struct SmoothingConfig {
  std::vector<double> weights;  // l0 (floor), l1 .. ln

  // (0.1, 0.1, 0.15, 0.2, 0.2, 0.25) for order 5, uniform otherwise.
  static SmoothingConfig defaults(std::size_t order);
  void validate(std::size_t order) const;
};

NGramCounts train_ngram(std::span<const TrainingPair> pairs, std::size_t order,
                        std::size_t vocab_size);

// history: the most recent tokens, oldest first; only the last n-1 are used
// and shorter histories are left-padded with <pad>.
double ngram_prob(const NGramCounts& counts, const SmoothingConfig& smoothing,
                  std::span<const TokenId> history, TokenId token);

PerplexityReport ngram_perplexity(const NGramCounts& counts, const SmoothingConfig& smoothing,
                                  std::span<const TrainingPair> pairs);

// Exhaustive search over weight vectors on a grid of `step` (l0 >= step),
// minimizing perplexity on pairs. Ties keep the first grid point visited.
SmoothingConfig grid_search_weights(const NGramCounts& counts, std::span<const TrainingPair> pairs,
                                    double step = 0.1);

}  // namespace ncm

#endif  // NCM_NGRAM_H_
