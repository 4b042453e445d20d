#ifndef NCM_CHAT_H_
#define NCM_CHAT_H_

// Interactive sessions. The running context is the sequence of turns
// encoded the same way helpdesk training contexts are: each turn is
// <actor> tokens <turn>, the human speaking as actor_a and the model as
// actor_b.

#include <chrono>
#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncm/checkpoint.h"
#include "ncm/decode.h"
#include "ncm/model.h"
#include "ncm/text.h"

namespace ncm {

// Immutable inference bundle shared by every session.
struct Model {
  ModelConfig config;
  Params<float> params;
  Vocabulary vocab;

  static Model from_checkpoint(Checkpoint checkpoint);
};

struct Candidate {
  std::string text;
  double logprob = 0.0;
};

struct ChatReply {
  std::vector<TokenId> tokens;  // best reply, without eos
  std::string text;
  double logprob = 0.0;
  std::vector<Candidate> candidates;  // best first; one entry for greedy
};

// Replies for a context of token ids: greedy when beam_width is 1, beam
// search otherwise.
ChatReply decode_reply(const Model& model, std::span<const TokenId> context,
                       const DecodeConfig& dconfig);

enum class Speaker { kHuman, kModel };
std::string to_string(Speaker speaker);

struct TranscriptEntry {
  Speaker speaker = Speaker::kHuman;
  std::string text;
  std::optional<double> logprob;  // model turns only
};

struct ChatOptions {
  std::size_t context_cap = 256;  // tokens, at least 3
  TokenizerOptions tokenizer;
};

class ChatSession {
 public:
  using Clock = std::chrono::system_clock;

  ChatSession(std::string id, ChatOptions options = {});

  const std::string& id() const { return id_; }
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }
  std::size_t turn_count() const { return transcript_.size(); }
  Clock::time_point created() const { return created_; }
  Clock::time_point last_active() const { return last_active_; }

  // Concatenated turns, oldest whole turns dropped until the cap is met. A
  // single turn longer than the cap keeps its actor token, its most recent
  // words and its <turn> marker.
  std::vector<TokenId> context() const;

  void add_turn(Speaker speaker, const std::string& text, const Vocabulary& vocab,
                std::optional<double> logprob = std::nullopt);

  // Appends the message, decodes against the updated context and appends
  // the reply.
  ChatReply respond(const Model& model, const std::string& message, const DecodeConfig& dconfig);

 private:
  void push_turn(Speaker speaker, std::span<const TokenId> ids, const std::string& text,
                 std::optional<double> logprob);

  std::string id_;
  ChatOptions options_;
  std::deque<std::vector<TokenId>> turns_;
  std::vector<TranscriptEntry> transcript_;
  Clock::time_point created_;
  Clock::time_point last_active_;
};

}  // namespace ncm

#endif  // NCM_CHAT_H_
