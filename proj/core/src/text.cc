#include "ncm/text.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ncm/error.h"
#include "ncm/math.h"

namespace ncm {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_alpha(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_word_char(unsigned char c) { return c >= 0x80 || is_alpha(c) || is_digit(c) || c == '_'; }
bool is_punct(unsigned char c) { return c > ' ' && c < 0x7f && !is_word_char(c); }
bool is_marker_char(unsigned char c) { return (c >= 'a' && c <= 'z') || is_digit(c) || c == '_'; }

// s[i] == '<'. Returns the index one past the closing '>' of a marker, or 0.
std::size_t marker_end(std::string_view s, std::size_t i) {
  std::size_t j = i + 1;
  while (j < s.size() && is_marker_char(static_cast<unsigned char>(s[j]))) ++j;
  if (j == i + 1 || j >= s.size() || s[j] != '>') return 0;
  return j + 1;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char ch : s) {
    if (is_space(static_cast<unsigned char>(ch))) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(ch);
  }
  return out;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

std::vector<std::string> split_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_special_surface(std::string_view token) {
  return std::find(special::kSurface.begin(), special::kSurface.end(), token) !=
         special::kSurface.end();
}

std::vector<std::string> prepare_utterance(const std::string& text, const PairingOptions& options) {
  if (options.names != nullptr) return tokenize(anonymize(text, *options.names, options.tokenizer));
  return tokenize(text, options.tokenizer);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options) {
  std::string s(text);
  for (char& ch : s)
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');

  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };

  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (is_space(c)) {
      flush();
      ++i;
    } else if (c == '<' && marker_end(s, i) != 0) {
      flush();
      std::size_t e = marker_end(s, i);
      out.push_back(s.substr(i, e - i));
      i = e;
    } else if (c == '\'' && i + 1 < n && is_word_char(static_cast<unsigned char>(s[i + 1]))) {
      flush();
      word = "'";
      ++i;
    } else if (is_punct(c)) {
      flush();
      std::size_t j = i;
      while (j < n && s[j] == s[i]) ++j;
      out.push_back(s.substr(i, j - i));
      i = j;
    } else if (options.split_digits && is_digit(c)) {
      flush();
      out.emplace_back(1, s[i]);
      ++i;
    } else {
      word.push_back(s[i]);
      ++i;
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (auto surface : special::kSurface) add(std::string(surface));
}

void Vocabulary::add(std::string token) {
  if (token.empty()) throw DataError("vocabulary: empty token");
  for (char ch : token)
    if (is_space(static_cast<unsigned char>(ch)))
      throw DataError("vocabulary: token contains whitespace: '" + token + "'");
  auto id = static_cast<TokenId>(id_to_word_.size());
  if (!word_to_id_.emplace(token, id).second)
    throw DataError("vocabulary: duplicate token '" + token + "'");
  id_to_word_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < special::kCount)
    throw DataError("vocabulary: expected the " + std::to_string(special::kCount) +
                    " special tokens first, got " + std::to_string(tokens.size()) + " entries");
  for (std::size_t i = 0; i < special::kCount; ++i)
    if (tokens[i] != special::kSurface[i])
      throw DataError("vocabulary: line " + std::to_string(i + 1) + " must be " +
                      std::string(special::kSurface[i]) + ", found '" + tokens[i] + "'");
  Vocabulary vocab;
  for (std::size_t i = special::kCount; i < tokens.size(); ++i) vocab.add(std::move(tokens[i]));
  return vocab;
}

bool Vocabulary::contains(std::string_view token) const {
  return word_to_id_.find(std::string(token)) != word_to_id_.end();
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = word_to_id_.find(std::string(token));
  return it == word_to_id_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size())
    throw IndexError("vocabulary: id " + std::to_string(id) + " outside [0, " +
                     std::to_string(id_to_word_.size()) + ")");
  return id_to_word_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (TokenId i : ids) tokens.push_back(word(i));
  return tokens;
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& w : id_to_word_) out << w << '\n';
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path);
  write(out);
  if (!out) throw DataError("failed writing vocabulary file " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary file " + path);
  return read(in);
}

Vocabulary build_vocabulary(std::span<const std::string> tokens, std::size_t cap) {
  if (cap <= special::kCount)
    throw ConfigError("build_vocabulary: cap must exceed " + std::to_string(special::kCount));
  std::map<std::string_view, std::size_t> counts;
  for (const auto& t : tokens)
    if (!is_special_surface(t)) ++counts[t];

  std::vector<std::pair<std::string_view, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  std::vector<std::string> all = vocab.tokens();
  const std::size_t keep = std::min(ranked.size(), cap - special::kCount);
  for (std::size_t i = 0; i < keep; ++i) all.emplace_back(ranked[i].first);
  return Vocabulary::from_tokens(std::move(all));
}

// ---------------------------------------------------------------------------
// Corpora

std::vector<Conversation> parse_dialogue_corpus(std::istream& in) {
  std::vector<Conversation> corpus;
  Conversation current;
  auto finish = [&] {
    if (current.utterances.empty()) return;
    current.id = "d" + std::to_string(corpus.size() + 1);
    corpus.push_back(std::move(current));
    current = Conversation{};
  };

  std::string line;
  while (std::getline(in, line)) {
    std::string text = trim(line);
    if (text.empty()) {
      finish();
      continue;
    }
    if (text.front() == '#') continue;
    Utterance u;
    if (text.size() >= 2 && text[1] == ':' && (text[0] == 'A' || text[0] == 'B')) {
      u.actor = text[0] == 'A' ? Actor::kClient : Actor::kAgent;
      text = trim(std::string_view(text).substr(2));
    }
    if (text.empty()) continue;
    u.text = std::move(text);
    current.utterances.push_back(std::move(u));
  }
  finish();
  return corpus;
}

std::vector<Conversation> read_dialogue_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file " + path);
  return parse_dialogue_corpus(in);
}

bool contains_url(std::string_view text) {
  for (std::size_t p = text.find("://"); p != std::string_view::npos;
       p = text.find("://", p + 1)) {
    std::size_t b = p;
    while (b > 0) {
      auto c = static_cast<unsigned char>(text[b - 1]);
      if (is_alpha(c) || is_digit(c) || c == '+' || c == '.' || c == '-')
        --b;
      else
        break;
    }
    // The scheme must start with a letter; walk forward past leading junk.
    while (b < p && !is_alpha(static_cast<unsigned char>(text[b]))) ++b;
    if (b < p) return true;
  }
  return false;
}

std::vector<std::string> strip_markup(std::string_view raw, MarkupStats* stats) {
  std::vector<std::string> sentences;
  for (std::string line : split_on(raw, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (contains_url(line)) {
      if (stats) ++stats->url_lines;
      continue;
    }
    std::string kept;
    std::size_t i = 0;
    while (i < line.size()) {
      if (line[i] != '<') {
        kept.push_back(line[i++]);
        continue;
      }
      std::size_t close = line.find('>', i);
      if (close == std::string::npos) {
        if (stats) ++stats->malformed_tags;
        break;
      }
      // Tags separate words: "<s>a</s><s>b</s>" must not glue a and b.
      kept.push_back(' ');
      i = close + 1;
    }
    std::string sentence = collapse_spaces(kept);
    if (!sentence.empty()) sentences.push_back(std::move(sentence));
  }
  return sentences;
}

Conversation subtitle_document(std::string id, std::string_view raw, MarkupStats* stats) {
  Conversation doc;
  doc.id = std::move(id);
  for (auto& s : strip_markup(raw, stats)) doc.utterances.push_back({Actor::kUnknown, std::move(s)});
  return doc;
}

NameLexicon read_name_lexicon(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open name lexicon " + path);
  NameLexicon names;
  std::string line;
  while (std::getline(in, line)) {
    std::string name = trim(line);
    if (name.empty() || name.front() == '#') continue;
    for (auto& t : tokenize(name)) names.insert(std::move(t));
  }
  return names;
}

std::vector<std::string> anonymize_tokens(std::span<const std::string> tokens,
                                          const NameLexicon& names) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (names.contains(t)) {
      out.emplace_back("<name>");
    } else if (!t.empty() && std::all_of(t.begin(), t.end(), [](char c) {
                 return is_digit(static_cast<unsigned char>(c));
               })) {
      out.emplace_back("<number>");
    } else {
      out.push_back(t);
    }
  }
  return out;
}

std::string anonymize(std::string_view text, const NameLexicon& names,
                      const TokenizerOptions& options) {
  std::vector<std::string> tokens;
  for (const auto& chunk : split_tokens(text)) {
    if (contains_url(chunk)) {
      tokens.emplace_back("<url>");
      continue;
    }
    for (auto& t : tokenize(chunk, options)) tokens.push_back(std::move(t));
  }
  return detokenize(anonymize_tokens(tokens, names));
}

// ---------------------------------------------------------------------------
// Pairs

std::vector<TextPair> pair_consecutive(const Conversation& conversation,
                                       const PairingOptions& options) {
  std::vector<std::vector<std::string>> sentences;
  for (const auto& u : conversation.utterances) {
    auto tokens = prepare_utterance(u.text, options);
    if (!tokens.empty()) sentences.push_back(std::move(tokens));
  }
  std::vector<TextPair> pairs;
  for (std::size_t i = 0; i + 1 < sentences.size(); ++i)
    pairs.push_back({sentences[i], sentences[i + 1], conversation.id});
  return pairs;
}

std::vector<TextPair> build_helpdesk_pairs(const Conversation& conversation,
                                           std::size_t context_cap,
                                           const PairingOptions& options) {
  if (context_cap == 0) throw ConfigError("build_helpdesk_pairs: context_cap must be positive");
  std::vector<TextPair> pairs;
  std::vector<std::string> history;
  for (const auto& u : conversation.utterances) {
    auto tokens = prepare_utterance(u.text, options);
    if (tokens.empty()) continue;
    const bool agent = u.actor == Actor::kAgent;
    if (agent && !history.empty()) {
      std::size_t start = history.size() > context_cap ? history.size() - context_cap : 0;
      pairs.push_back({std::vector<std::string>(history.begin() + static_cast<std::ptrdiff_t>(start),
                                                history.end()),
                       tokens, conversation.id});
    }
    history.emplace_back(agent ? special::kSurface[special::kActorB]
                               : special::kSurface[special::kActorA]);
    history.insert(history.end(), tokens.begin(), tokens.end());
    history.emplace_back(special::kSurface[special::kTurn]);
  }
  return pairs;
}

DocumentSplit split_documents(std::size_t document_count, double valid_fraction,
                              std::uint64_t seed) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    throw ConfigError("split: valid_fraction must be in (0, 1)");
  if (document_count < 2)
    throw DataError("split: need at least 2 documents, got " + std::to_string(document_count));
  std::vector<std::size_t> order(document_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(document_count)));
  n_valid = std::clamp<std::size_t>(n_valid, 1, document_count - 1);

  DocumentSplit split;
  split.valid.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_valid), order.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

PairSplit split_pairs(std::span<const Conversation> conversations, double valid_fraction,
                      std::uint64_t seed, PairingStyle style, std::size_t context_cap,
                      const PairingOptions& options) {
  DocumentSplit docs = split_documents(conversations.size(), valid_fraction, seed);
  auto pairs_of = [&](const Conversation& c) {
    return style == PairingStyle::kHelpdesk ? build_helpdesk_pairs(c, context_cap, options)
                                            : pair_consecutive(c, options);
  };
  PairSplit split;
  for (std::size_t i : docs.train)
    for (auto& p : pairs_of(conversations[i])) split.train.push_back(std::move(p));
  for (std::size_t i : docs.valid)
    for (auto& p : pairs_of(conversations[i])) split.valid.push_back(std::move(p));
  return split;
}

TrainingPair encode_pair(const TextPair& pair, const Vocabulary& vocab) {
  if (pair.context.empty() || pair.reply.empty())
    throw DataError("pair from '" + pair.source_doc + "' has an empty side");
  TrainingPair out{vocab.encode(pair.context), vocab.encode(pair.reply), pair.source_doc};
  auto has_pad = [](const std::vector<TokenId>& ids) {
    return std::find(ids.begin(), ids.end(), special::kPad) != ids.end();
  };
  if (has_pad(out.context) || has_pad(out.reply))
    throw DataError("pair from '" + pair.source_doc + "' contains the padding token");
  return out;
}

std::vector<TrainingPair> encode_pairs(std::span<const TextPair> pairs, const Vocabulary& vocab) {
  std::vector<TrainingPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, vocab));
  return out;
}

void write_pairs(std::ostream& out, std::span<const TextPair> pairs) {
  for (const auto& p : pairs)
    out << p.source_doc << '\t' << detokenize(p.context) << '\t' << detokenize(p.reply) << '\n';
}

std::vector<TextPair> read_pairs(std::istream& in) {
  std::vector<TextPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 3)
      throw DataError("pairs line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    TextPair p{split_tokens(fields[1]), split_tokens(fields[2]), fields[0]};
    if (p.context.empty() || p.reply.empty())
      throw DataError("pairs line " + std::to_string(line_no) + ": empty context or reply");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_pairs(const std::string& path, std::span<const TextPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write pairs file " + path);
  write_pairs(out, pairs);
}

std::vector<TextPair> load_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open pairs file " + path);
  return read_pairs(in);
}

}  // namespace ncm
