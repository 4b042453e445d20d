#include "ncm/chat.h"

#include "ncm/error.h"

namespace ncm {

Model Model::from_checkpoint(Checkpoint checkpoint) {
  return {checkpoint.config, std::move(checkpoint.params), std::move(checkpoint.vocab)};
}

namespace {

std::string render(const Vocabulary& vocab, std::span<const TokenId> tokens) {
  const auto words = vocab.decode(tokens);
  return detokenize(words);
}

}  // namespace

ChatReply decode_reply(const Model& model, std::span<const TokenId> context,
                       const DecodeConfig& dconfig) {
  dconfig.validate();
  ChatReply reply;
  if (dconfig.beam_width == 1) {
    const auto r = greedy_decode(context, model.params, model.config, dconfig);
    reply.tokens = r.tokens;
    reply.text = render(model.vocab, r.tokens);
    reply.logprob = r.logprob;
    reply.candidates.push_back({reply.text, r.logprob});
    return reply;
  }
  const auto hyps = beam_search(context, model.params, model.config, dconfig);
  if (hyps.empty()) throw NumericError("beam search returned no hypotheses");
  for (const auto& h : hyps) reply.candidates.push_back({render(model.vocab, h.reply()), h.logprob});
  reply.tokens = hyps.front().reply();
  reply.text = reply.candidates.front().text;
  reply.logprob = reply.candidates.front().logprob;
  return reply;
}

std::string to_string(Speaker speaker) { return speaker == Speaker::kHuman ? "human" : "model"; }

ChatSession::ChatSession(std::string id, ChatOptions options)
    : id_(std::move(id)), options_(options), created_(Clock::now()), last_active_(created_) {
  if (options_.context_cap < 3) throw ConfigError("chat: context cap must be at least 3 tokens");
}

std::vector<TokenId> ChatSession::context() const {
  const std::size_t cap = options_.context_cap;
  std::size_t total = 0;
  std::size_t first = turns_.size();
  while (first > 0 && total + turns_[first - 1].size() <= cap) {
    --first;
    total += turns_[first].size();
  }
  std::vector<TokenId> out;
  if (first == turns_.size() && !turns_.empty()) {
    const auto& last = turns_.back();
    out.push_back(last.front());
    out.insert(out.end(), last.end() - static_cast<std::ptrdiff_t>(cap - 1), last.end());
    return out;
  }
  out.reserve(total);
  for (std::size_t i = first; i < turns_.size(); ++i)
    out.insert(out.end(), turns_[i].begin(), turns_[i].end());
  return out;
}

void ChatSession::add_turn(Speaker speaker, const std::string& text, const Vocabulary& vocab,
                           std::optional<double> logprob) {
  push_turn(speaker, vocab.encode(tokenize(text, options_.tokenizer)), text, logprob);
}

void ChatSession::push_turn(Speaker speaker, std::span<const TokenId> ids, const std::string& text,
                            std::optional<double> logprob) {
  std::vector<TokenId> turn{speaker == Speaker::kHuman ? special::kActorA : special::kActorB};
  // Special ids inside a turn become <unk>.
  for (TokenId id : ids)
    turn.push_back(static_cast<std::size_t>(id) < special::kCount ? special::kUnk : id);
  turn.push_back(special::kTurn);
  turns_.push_back(std::move(turn));
  transcript_.push_back({speaker, text, logprob});
  last_active_ = Clock::now();
}

ChatReply ChatSession::respond(const Model& model, const std::string& message,
                               const DecodeConfig& dconfig) {
  dconfig.validate();
  add_turn(Speaker::kHuman, message, model.vocab);
  const auto context_ids = context();
  auto reply = decode_reply(model, context_ids, dconfig);
  push_turn(Speaker::kModel, reply.tokens, reply.text, reply.logprob);
  return reply;
}

}  // namespace ncm
