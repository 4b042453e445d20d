#ifndef NCM_EVALUATION_H_
#define NCM_EVALUATION_H_

// Perplexity for the neural model and the blind side-by-side judging
// protocol: four judges per question pick answer A, answer B or a tie, and
// an item is scored only when at least three of them agree.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncm/model.h"
#include "ncm/perplexity.h"

namespace ncm {

template <typename T>
PerplexityReport model_perplexity(const Params<T>& params, const ModelConfig& config,
                                  std::span<const TrainingPair> pairs, std::size_t threads = 1);

inline constexpr std::size_t kJudgesPerItem = 4;
inline constexpr std::size_t kAgreementNeeded = 3;

enum class Choice { kA, kB, kTie };

std::string to_string(Choice choice);
Choice parse_choice(std::string_view text);  // "A", "B" or "tie"

struct ComparisonItem {
  std::string id;
  std::string question;
  std::string answer_a;
  std::string answer_b;
  std::string source_a;  // never shown to judges
  std::string source_b;

  bool operator==(const ComparisonItem&) const = default;
};

struct JudgeVote {
  std::string item_id;
  std::string judge_id;
  Choice choice = Choice::kTie;

  bool operator==(const JudgeVote&) const = default;
};

struct ComparisonTally {
  std::size_t preferred_a = 0;
  std::size_t preferred_b = 0;
  std::size_t ties = 0;
  std::size_t disagreements = 0;

  std::size_t total() const { return preferred_a + preferred_b + ties + disagreements; }
  bool operator==(const ComparisonTally&) const = default;
};

enum class Outcome { kPreferredA, kPreferredB, kTie, kDisagreement };

// Category named by at least three of the four votes, else disagreement.
Outcome resolve_item(std::span<const Choice> votes);

// Every item needs exactly four votes from four distinct judges; otherwise
// DataError naming the item. Votes for unknown items are rejected as well.
ComparisonTally aggregate_judgments(std::span<const std::string> item_ids,
                                    std::span<const JudgeVote> votes);
ComparisonTally aggregate_judgments(std::span<const ComparisonItem> items,
                                    std::span<const JudgeVote> votes);
// Items are the distinct ids appearing in votes.
ComparisonTally aggregate_votes(std::span<const JudgeVote> votes);

// Something that answers questions: the local model, a frozen answer list, or
// an external HTTP bot. nullopt means the answer is unavailable.
class Responder {
 public:
  virtual ~Responder() = default;
  virtual std::string name() const = 0;
  virtual std::optional<std::string> respond(const std::string& question) = 0;
};

class FunctionResponder : public Responder {
 public:
  using Fn = std::function<std::optional<std::string>(const std::string&)>;
  FunctionResponder(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  std::optional<std::string> respond(const std::string& q) override { return fn_(q); }

 private:
  std::string name_;
  Fn fn_;
};

struct ComparisonBuild {
  std::vector<ComparisonItem> items;
  std::vector<std::string> unavailable;  // questions dropped for a missing answer
};

// One item per question, ids "<prefix><n>" from 1. Each responder is asked
// exactly once per question; answers are frozen into the items.
ComparisonBuild build_comparison(std::span<const std::string> questions, Responder& responder_a,
                                 Responder& responder_b, const std::string& id_prefix = "q");

// Per-judge presentation order. swapped means answer B is shown on the left.
struct Presentation {
  std::string item_id;
  std::string judge_id;
  bool swapped = false;
};

enum class Side { kLeft, kRight, kTie };

Presentation present(const std::string& item_id, const std::string& judge_id, std::uint64_t seed);
// Maps a left/right/tie pick back to A/B/tie.
Choice resolve_side(Side side, bool swapped);
// Inverse of resolve_side.
Side side_of(Choice choice, bool swapped);

// Line-delimited JSON. Export records carry id, question, answer_a, answer_b
// and nothing about the responders.
void write_comparison_export(std::ostream& out, std::span<const ComparisonItem> items);
std::vector<ComparisonItem> read_comparison_export(std::istream& in);
// Full records including sources, for the operator's own bookkeeping.
void write_comparison_items(std::ostream& out, std::span<const ComparisonItem> items);
std::vector<ComparisonItem> read_comparison_items(std::istream& in);

// {"item_id": ..., "judge_id": ..., "choice": "A" | "B" | "tie"}
void write_votes(std::ostream& out, std::span<const JudgeVote> votes);
std::vector<JudgeVote> read_votes(std::istream& in);

}  // namespace ncm

#endif  // NCM_EVALUATION_H_
