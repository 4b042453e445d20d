#include "ncm/ngram.h"

#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "ncm/error.h"

namespace ncm {

namespace {

std::vector<TokenId> pair_stream(const TrainingPair& pair, std::size_t order) {
  std::vector<TokenId> stream(order - 1, special::kPad);
  stream.insert(stream.end(), pair.context.begin(), pair.context.end());
  stream.push_back(special::kEos);
  stream.insert(stream.end(), pair.reply.begin(), pair.reply.end());
  stream.push_back(special::kEos);
  return stream;
}

// Maximum-likelihood terms for one query: ml[k-1] is count/total for order
// k, or NaN when the order-k history was never seen.
std::vector<double> ml_terms(const NGramCounts& counts, std::span<const TokenId> full_history,
                             TokenId token) {
  const std::size_t n = counts.order();
  std::vector<double> ml(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 1; k <= n; ++k) {
    auto h = full_history.subspan(full_history.size() - (k - 1));
    const auto& table = counts.table(k);
    auto it = table.find(std::vector<TokenId>(h.begin(), h.end()));
    if (it == table.end() || it->second.total == 0) continue;
    auto c = it->second.next.find(token);
    const double count = c == it->second.next.end() ? 0.0 : static_cast<double>(c->second);
    ml[k - 1] = count / static_cast<double>(it->second.total);
  }
  return ml;
}

double combine(const std::vector<double>& ml, const std::vector<double>& weights,
               std::size_t vocab_size) {
  double floor = weights[0];
  double sum = 0.0;
  for (std::size_t k = 0; k < ml.size(); ++k) {
    if (std::isnan(ml[k]))
      floor += weights[k + 1];
    else
      sum += weights[k + 1] * ml[k];
  }
  return floor / static_cast<double>(vocab_size) + sum;
}

std::vector<TokenId> padded_history(std::span<const TokenId> history, std::size_t order) {
  const std::size_t want = order - 1;
  std::vector<TokenId> full(want, special::kPad);
  const std::size_t take = std::min(want, history.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
            full.end() - static_cast<std::ptrdiff_t>(take));
  return full;
}

}  // namespace

NGramCounts::NGramCounts(std::size_t order, std::size_t vocab_size)
    : vocab_size_(vocab_size), tables_(order) {
  if (order < 1) throw ConfigError("ngram: order must be at least 1");
  if (vocab_size < 1) throw ConfigError("ngram: vocab_size must be positive");
}

std::uint64_t NGramCounts::token_count() const {
  auto it = tables_[0].find({});
  return it == tables_[0].end() ? 0 : it->second.total;
}

void NGramCounts::add_pair(const TrainingPair& pair) {
  const std::size_t n = order();
  auto stream = pair_stream(pair, n);
  for (TokenId id : stream)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_)
      throw IndexError("ngram: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab_size_));
  for (std::size_t pos = n - 1; pos < stream.size(); ++pos) {
    for (std::size_t k = 1; k <= n; ++k) {
      std::vector<TokenId> h(stream.begin() + static_cast<std::ptrdiff_t>(pos - (k - 1)),
                             stream.begin() + static_cast<std::ptrdiff_t>(pos));
      auto& entry = tables_[k - 1][std::move(h)];
      ++entry.total;
      ++entry.next[stream[pos]];
    }
  }
}

void NGramCounts::merge(const NGramCounts& other) {
  if (other.order() != order() || other.vocab_size_ != vocab_size_)
    throw ConfigError("ngram merge: order/vocab mismatch");
  for (std::size_t k = 0; k < tables_.size(); ++k) {
    for (const auto& [h, entry] : other.tables_[k]) {
      auto& mine = tables_[k][h];
      mine.total += entry.total;
      for (const auto& [tok, c] : entry.next) mine.next[tok] += c;
    }
  }
}

std::uint64_t NGramCounts::count(std::span<const TokenId> history, TokenId token) const {
  if (history.size() >= order()) return 0;
  const auto& t = tables_[history.size()];
  auto it = t.find(std::vector<TokenId>(history.begin(), history.end()));
  if (it == t.end()) return 0;
  auto c = it->second.next.find(token);
  return c == it->second.next.end() ? 0 : c->second;
}

std::uint64_t NGramCounts::total(std::span<const TokenId> history) const {
  if (history.size() >= order()) return 0;
  const auto& t = tables_[history.size()];
  auto it = t.find(std::vector<TokenId>(history.begin(), history.end()));
  return it == t.end() ? 0 : it->second.total;
}

void NGramCounts::write(std::ostream& out) const {
  out << "ngram\t" << order() << '\t' << vocab_size_ << '\n';
  for (std::size_t k = 0; k < tables_.size(); ++k) {
    for (const auto& [h, entry] : tables_[k]) {
      std::string hist;
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (i > 0) hist.push_back(' ');
        hist += std::to_string(h[i]);
      }
      for (const auto& [tok, c] : entry.next)
        out << (k + 1) << '\t' << hist << '\t' << tok << '\t' << c << '\n';
    }
  }
}

NGramCounts NGramCounts::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("ngram counts: empty input");
  std::istringstream header(line);
  std::string magic;
  std::size_t order = 0, vocab = 0;
  if (!(header >> magic >> order >> vocab) || magic != "ngram")
    throw DataError("ngram counts: bad header line '" + line + "'");
  NGramCounts counts(order, vocab);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    if (fields.size() != 4) throw DataError("ngram counts line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      const std::size_t k = std::stoul(fields[0]);
      std::vector<TokenId> h;
      std::istringstream hs(fields[1]);
      for (TokenId id; hs >> id;) h.push_back(id);
      const auto tok = static_cast<TokenId>(std::stol(fields[2]));
      const std::uint64_t c = std::stoull(fields[3]);
      if (k < 1 || k > order || h.size() != k - 1)
        throw DataError("ngram counts line " + std::to_string(line_no) + ": order/history mismatch");
      auto& entry = counts.tables_[k - 1][std::move(h)];
      entry.total += c;
      entry.next[tok] += c;
    } catch (const std::logic_error&) {
      throw DataError("ngram counts line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return counts;
}

void NGramCounts::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write ngram counts " + path);
  write(out);
}

NGramCounts NGramCounts::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ngram counts " + path);
  return read(in);
}

SmoothingConfig SmoothingConfig::defaults(std::size_t order) {
  if (order == 5) return {{0.1, 0.1, 0.15, 0.2, 0.2, 0.25}};
  return {std::vector<double>(order + 1, 1.0 / static_cast<double>(order + 1))};
}

void SmoothingConfig::validate(std::size_t order) const {
  if (weights.size() != order + 1)
    throw ConfigError("smoothing: expected " + std::to_string(order + 1) + " weights, got " +
                      std::to_string(weights.size()));
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("smoothing: weights must be non-negative");
    sum += w;
  }
  if (!(weights[0] > 0.0)) throw ConfigError("smoothing: floor weight must be positive");
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("smoothing: weights must sum to 1");
}

NGramCounts train_ngram(std::span<const TrainingPair> pairs, std::size_t order,
                        std::size_t vocab_size) {
  NGramCounts counts(order, vocab_size);
  for (const auto& p : pairs) counts.add_pair(p);
  return counts;
}

double ngram_prob(const NGramCounts& counts, const SmoothingConfig& smoothing,
                  std::span<const TokenId> history, TokenId token) {
  smoothing.validate(counts.order());
  if (token < 0 || static_cast<std::size_t>(token) >= counts.vocab_size())
    throw IndexError("ngram_prob: token id " + std::to_string(token) + " outside vocabulary");
  auto full = padded_history(history, counts.order());
  return combine(ml_terms(counts, full, token), smoothing.weights, counts.vocab_size());
}

namespace {

struct ScoredToken {
  std::vector<double> ml;
};

std::vector<ScoredToken> scored_tokens(const NGramCounts& counts,
                                       std::span<const TrainingPair> pairs) {
  const std::size_t n = counts.order();
  std::vector<ScoredToken> out;
  for (const auto& pair : pairs) {
    auto stream = pair_stream(pair, n);
    const std::size_t first = n - 1 + pair.context.size() + 1;
    for (std::size_t pos = first; pos < stream.size(); ++pos) {
      std::span<const TokenId> h(stream.data() + pos - (n - 1), n - 1);
      out.push_back({ml_terms(counts, h, stream[pos])});
    }
  }
  return out;
}

}  // namespace

PerplexityReport ngram_perplexity(const NGramCounts& counts, const SmoothingConfig& smoothing,
                                  std::span<const TrainingPair> pairs) {
  smoothing.validate(counts.order());
  if (pairs.empty()) throw DataError("ngram_perplexity: no evaluation pairs");
  double nll = 0.0;
  for (const auto& t : scored_tokens(counts, pairs))
    nll -= std::log(combine(t.ml, smoothing.weights, counts.vocab_size()));
  std::size_t tokens = 0;
  for (const auto& p : pairs) tokens += p.reply.size() + 1;
  return PerplexityReport::from_totals(nll, tokens, pairs.size());
}

SmoothingConfig grid_search_weights(const NGramCounts& counts, std::span<const TrainingPair> pairs,
                                    double step) {
  if (!(step > 0.0 && step <= 0.5)) throw ConfigError("grid search: step must be in (0, 0.5]");
  if (pairs.empty()) throw DataError("grid search: no evaluation pairs");
  const auto units = static_cast<int>(std::lround(1.0 / step));
  const std::size_t slots = counts.order() + 1;
  auto tokens = scored_tokens(counts, pairs);

  SmoothingConfig best;
  double best_nll = std::numeric_limits<double>::infinity();
  std::vector<int> parts(slots, 0);

  std::function<void(std::size_t, int)> visit = [&](std::size_t slot, int remaining) {
    if (slot + 1 == slots) {
      parts[slot] = remaining;
      if (parts[0] < 1) return;
      std::vector<double> w(slots);
      double acc = 0.0;
      for (std::size_t i = 0; i + 1 < slots; ++i) {
        w[i] = static_cast<double>(parts[i]) / units;
        acc += w[i];
      }
      w[slots - 1] = 1.0 - acc;
      if (w[slots - 1] < 0.0) w[slots - 1] = 0.0;
      double nll = 0.0;
      for (const auto& t : tokens) nll -= std::log(combine(t.ml, w, counts.vocab_size()));
      if (nll < best_nll) {
        best_nll = nll;
        best.weights = std::move(w);
      }
      return;
    }
    for (int u = 0; u <= remaining; ++u) {
      parts[slot] = u;
      visit(slot + 1, remaining - u);
    }
  };
  visit(0, units);
  return best;
}

}  // namespace ncm
