#include "ncm/decode.h"

#include <algorithm>

#include "ncm/error.h"

namespace ncm {

namespace {

bool banned(TokenId id, const DecodeConfig& d) {
  return id == special::kPad || (d.ban_unk && id == special::kUnk);
}

double score(double logprob, std::size_t length, const DecodeConfig& d) {
  if (!d.length_normalize || length == 0) return logprob;
  return logprob / static_cast<double>(length);
}

struct Candidate {
  std::size_t parent;
  TokenId token;
  double logprob;
  double score;
  std::size_t length;
};

}  // namespace

void DecodeConfig::validate() const {
  if (max_len < 1) throw ConfigError("decode: max_len must be at least 1");
  if (beam_width < 1) throw ConfigError("decode: beam_width must be at least 1");
}

template <typename T>
std::vector<TokenId> BeamHypothesis<T>::reply() const {
  std::vector<TokenId> out = tokens;
  if (!out.empty() && out.back() == special::kEos) out.pop_back();
  return out;
}

template <typename T>
DecodeResult greedy_decode(std::span<const TokenId> context, const Params<T>& params,
                           const ModelConfig& config, const DecodeConfig& dconfig) {
  dconfig.validate();
  auto state = encode_context(context, params, config);
  DecodeResult result;
  for (std::size_t step = 0; step < dconfig.max_len; ++step) {
    auto logp = predict_log_distribution(state, params, config);
    TokenId best = -1;
    for (std::size_t id = 0; id < logp.size(); ++id) {
      auto tok = static_cast<TokenId>(id);
      if (banned(tok, dconfig)) continue;
      if (best < 0 || logp[id] > logp[static_cast<std::size_t>(best)]) best = tok;
    }
    result.logprob += static_cast<double>(logp[static_cast<std::size_t>(best)]);
    if (best == special::kEos) break;
    result.tokens.push_back(best);
    step_token(best, state, params, config);
  }
  return result;
}

template <typename T>
std::vector<BeamHypothesis<T>> beam_search(std::span<const TokenId> context,
                                           const Params<T>& params, const ModelConfig& config,
                                           const DecodeConfig& dconfig) {
  dconfig.validate();
  const std::size_t width = dconfig.beam_width;

  std::vector<BeamHypothesis<T>> live;
  live.push_back({{}, 0.0, encode_context(context, params, config), false});
  std::vector<BeamHypothesis<T>> pool;

  auto before = [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.length != b.length) return a.length < b.length;
    const auto& ta = live[a.parent].tokens;
    const auto& tb = live[b.parent].tokens;
    if (ta != tb) return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
    return a.token < b.token;
  };

  while (!live.empty() && pool.size() < width) {
    std::vector<Candidate> candidates;
    for (std::size_t p = 0; p < live.size(); ++p) {
      auto logp = predict_log_distribution(live[p].state, params, config);
      const std::size_t length = live[p].tokens.size() + 1;
      for (std::size_t id = 0; id < logp.size(); ++id) {
        auto tok = static_cast<TokenId>(id);
        if (banned(tok, dconfig)) continue;
        const double lp = live[p].logprob + static_cast<double>(logp[id]);
        candidates.push_back({p, tok, lp, score(lp, length, dconfig), length});
      }
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), before);

    std::vector<BeamHypothesis<T>> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = candidates[k];
      const auto& parent = live[c.parent];
      BeamHypothesis<T> h;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      h.state = parent.state;
      h.finished = c.token == special::kEos || h.tokens.size() >= dconfig.max_len;
      if (c.token != special::kEos) step_token(c.token, h.state, params, config);
      (h.finished ? pool : next).push_back(std::move(h));
    }
    live = std::move(next);
  }

  std::stable_sort(pool.begin(), pool.end(), [&](const auto& a, const auto& b) {
    const double sa = score(a.logprob, a.tokens.size(), dconfig);
    const double sb = score(b.logprob, b.tokens.size(), dconfig);
    if (sa != sb) return sa > sb;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  });
  if (pool.size() > width) pool.resize(width);
  return pool;
}

#define NCM_INSTANTIATE(T)                                                                  \
  template struct BeamHypothesis<T>;                                                        \
  template DecodeResult greedy_decode<T>(std::span<const TokenId>, const Params<T>&,        \
                                         const ModelConfig&, const DecodeConfig&);          \
  template std::vector<BeamHypothesis<T>> beam_search<T>(                                   \
      std::span<const TokenId>, const Params<T>&, const ModelConfig&, const DecodeConfig&);

NCM_INSTANTIATE(float)
NCM_INSTANTIATE(double)

#undef NCM_INSTANTIATE

}  // namespace ncm
