#ifndef NCM_TEXT_H_
#define NCM_TEXT_H_

// Tokenization, vocabulary, corpus ingestion and training-pair construction.
//
// Tokenizer rules (normative):
//   * ASCII letters are lowercased; bytes >= 0x80 pass through untouched.
//   * Whitespace separates tokens and is never part of one.
//   * ASCII punctuation is split off as standalone tokens; a run of the same
//     punctuation character stays together ("..." is one token).
//   * An apostrophe followed by a letter or digit starts a clitic token:
//     "i'm" -> "i" "'m", "don't" -> "don" "'t". Any other apostrophe is
//     punctuation.
//   * A marker of the form <name> (lowercase letters, digits, '_' between
//     angle brackets) is kept whole, so "<url>" and "<eos>" survive.
//   * Digit runs are one token unless TokenizerOptions::split_digits is set.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ncm {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kTurn = 3;
inline constexpr TokenId kActorA = 4;  // client / human
inline constexpr TokenId kActorB = 5;  // agent / model
inline constexpr std::size_t kCount = 6;
inline constexpr std::array<std::string_view, kCount> kSurface = {
    "<pad>", "<unk>", "<eos>", "<turn>", "<actor_a>", "<actor_b>"};
}  // namespace special

struct TokenizerOptions {
  bool split_digits = false;
};

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options = {});

// Tokens joined by single spaces.
std::string detokenize(std::span<const std::string> tokens);

class Vocabulary {
 public:
  // Specials only.
  Vocabulary();

  // From an id-ordered token list whose first six entries are the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return id_to_word_.size(); }
  bool contains(std::string_view token) const;
  // Unknown tokens map to special::kUnk.
  TokenId id(std::string_view token) const;
  // Throws IndexError for ids outside [0, size).
  const std::string& word(TokenId id) const;

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const { return id_to_word_; }

  // One token per line; line number - 1 is the id.
  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const { return id_to_word_ == other.id_to_word_; }

 private:
  void add(std::string token);

  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, TokenId> word_to_id_;
};

// The cap - 6 most frequent non-special tokens plus the specials. Frequency
// ties are broken by byte-wise lexicographic order.
Vocabulary build_vocabulary(std::span<const std::string> tokens, std::size_t cap);

enum class Actor { kUnknown, kClient, kAgent };

struct Utterance {
  Actor actor = Actor::kUnknown;
  std::string text;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
};

// Dialogue corpus format: UTF-8, conversations separated by blank lines, one
// utterance per line with an optional "A:" (client) or "B:" (agent) prefix,
// '#' lines are comments. Conversation ids are "d<ordinal>" from 1.
std::vector<Conversation> parse_dialogue_corpus(std::istream& in);
std::vector<Conversation> read_dialogue_corpus(const std::string& path);

struct MarkupStats {
  std::size_t malformed_tags = 0;
  std::size_t url_lines = 0;
};

// Subtitle-style input: one subtitle per line with <tag> markup. Removes
// tags, drops lines containing a scheme:// URL, returns the non-empty lines.
// An unclosed '<' drops the remainder of its line and counts as malformed.
std::vector<std::string> strip_markup(std::string_view raw, MarkupStats* stats = nullptr);

// Builds one Conversation (actor unknown) from a subtitle document.
Conversation subtitle_document(std::string id, std::string_view raw, MarkupStats* stats = nullptr);

bool contains_url(std::string_view text);

using NameLexicon = std::set<std::string, std::less<>>;

// One lowercase name per line; blank and '#' lines ignored.
NameLexicon read_name_lexicon(const std::string& path);

// Token-level replacement: lexicon names -> <name>, digit-only tokens ->
// <number>. Idempotent.
std::vector<std::string> anonymize_tokens(std::span<const std::string> tokens,
                                          const NameLexicon& names);

// Whitespace chunks containing a URL become <url>, then the text is
// tokenized and passed through anonymize_tokens. Returns detokenized text.
std::string anonymize(std::string_view text, const NameLexicon& names,
                      const TokenizerOptions& options = {});

// Token-level pair; encoded against a vocabulary once one exists.
struct TextPair {
  std::vector<std::string> context;
  std::vector<std::string> reply;
  std::string source_doc;

  bool operator==(const TextPair&) const = default;
};

struct TrainingPair {
  std::vector<TokenId> context;
  std::vector<TokenId> reply;
  std::string source_doc;

  bool operator==(const TrainingPair&) const = default;
};

struct PairingOptions {
  TokenizerOptions tokenizer;
  const NameLexicon* names = nullptr;  // anonymize when set
};

// Sentence i -> sentence i+1 for every consecutive pair of utterances.
// Utterances that tokenize to nothing are skipped before pairing.
std::vector<TextPair> pair_consecutive(const Conversation& conversation,
                                       const PairingOptions& options = {});

// One pair per agent turn that has at least one prior turn. The context is
// every earlier turn rendered as [actor, tokens..., <turn>], keeping only the
// newest context_cap tokens. Unlabelled utterances count as client turns.
std::vector<TextPair> build_helpdesk_pairs(const Conversation& conversation,
                                           std::size_t context_cap = 256,
                                           const PairingOptions& options = {});

enum class PairingStyle { kConsecutive, kHelpdesk };

struct DocumentSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};

// Assigns whole documents to one side via a seeded shuffle. The validation
// side gets round(valid_fraction * n) documents, clamped to [1, n - 1].
DocumentSplit split_documents(std::size_t document_count, double valid_fraction,
                              std::uint64_t seed);

struct PairSplit {
  std::vector<TextPair> train;
  std::vector<TextPair> valid;
};

PairSplit split_pairs(std::span<const Conversation> conversations, double valid_fraction,
                      std::uint64_t seed, PairingStyle style, std::size_t context_cap = 256,
                      const PairingOptions& options = {});

TrainingPair encode_pair(const TextPair& pair, const Vocabulary& vocab);
std::vector<TrainingPair> encode_pairs(std::span<const TextPair> pairs, const Vocabulary& vocab);

// Pair file: one pair per line, "doc<TAB>context tokens<TAB>reply tokens".
void write_pairs(std::ostream& out, std::span<const TextPair> pairs);
std::vector<TextPair> read_pairs(std::istream& in);
void save_pairs(const std::string& path, std::span<const TextPair> pairs);
std::vector<TextPair> load_pairs(const std::string& path);

}  // namespace ncm

#endif  // NCM_TEXT_H_
