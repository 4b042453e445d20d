#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "generators.h"
#include "ncm/error.h"
#include "ncm/text.h"

using namespace ncm;
using Tokens = std::vector<std::string>;

TEST_CASE("tokenize examples") {
  CHECK(tokenize("Hello!") == Tokens{"hello", "!"});
  CHECK(tokenize("I'm Julia.") == Tokens{"i", "'m", "julia", "."});
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \t\n").empty());
}

TEST_CASE("tokenize rules") {
  CHECK(tokenize("don't STOP") == Tokens{"don", "'t", "stop"});
  CHECK(tokenize("wait... what?!") == Tokens{"wait", "...", "what", "?", "!"});
  CHECK(tokenize("'quoted'") == Tokens{"'quoted", "'"});
  CHECK(tokenize("see <url> and <number>") == Tokens{"see", "<url>", "and", "<number>"});
  CHECK(tokenize("a < b") == Tokens{"a", "<", "b"});
  CHECK(tokenize("call 5551234") == Tokens{"call", "5551234"});
  TokenizerOptions split;
  split.split_digits = true;
  CHECK(tokenize("15 minutes", split) == Tokens{"1", "5", "minutes"});
  CHECK(tokenize("Caf\xc3\xa9") == Tokens{"caf\xc3\xa9"});
}

TEST_CASE("tokens never contain whitespace and are never empty") {
  Rng rng(12);
  const std::string alphabet = "abcXYZ019 .,!?'<>_-\t\n";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const auto n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
    for (const auto& t : tokenize(s)) {
      CHECK_FALSE(t.empty());
      CHECK(t.find_first_of(" \t\n") == std::string::npos);
    }
  }
}

TEST_CASE("detokenize") {
  CHECK(detokenize(Tokens{"i", "'m", "julia", "."}) == "i 'm julia .");
  CHECK(detokenize(Tokens{}).empty());
  for (const std::string s : {"i 'm julia .", "what is the purpose of life ?", "ok"})
    CHECK(detokenize(tokenize(s)) == s);
}

TEST_CASE("build_vocabulary examples") {
  auto v = build_vocabulary(Tokens{"a", "a", "b"}, 7);
  CHECK(v.size() == 7);
  CHECK(v.id("a") == 6);
  CHECK(v.encode(Tokens{"b"}) == std::vector<TokenId>{special::kUnk});

  auto tie = build_vocabulary(Tokens{"y", "x", "x", "y"}, 7);
  CHECK(tie.word(6) == "x");

  auto both = build_vocabulary(Tokens{"a", "a", "b"}, 8);
  CHECK(both.tokens() == Tokens{"<pad>", "<unk>", "<eos>", "<turn>", "<actor_a>", "<actor_b>", "a", "b"});

  CHECK(build_vocabulary(Tokens{}, 100).size() == special::kCount);
  CHECK_THROWS_AS(build_vocabulary(Tokens{"a"}, 6), ConfigError);
}

TEST_CASE("vocabulary is deterministic and bijective") {
  Rng rng(4);
  Tokens corpus;
  for (int i = 0; i < 2000; ++i) corpus.push_back("w" + std::to_string(rng.below(300)));
  const auto a = build_vocabulary(corpus, 120);
  const auto b = build_vocabulary(corpus, 120);
  CHECK(a == b);
  CHECK(a.size() == 120);
  for (std::size_t id = 0; id < a.size(); ++id)
    CHECK(a.id(a.word(static_cast<TokenId>(id))) == static_cast<TokenId>(id));

  std::vector<TokenId> ids;
  for (int i = 0; i < 200; ++i) ids.push_back(static_cast<TokenId>(rng.below(a.size())));
  CHECK(a.encode(a.decode(ids)) == ids);
}

TEST_CASE("encode and decode") {
  const auto v = build_vocabulary(Tokens{"a", "b", "c"}, 10);
  CHECK(v.encode(Tokens{"a"}) == std::vector<TokenId>{v.id("a")});
  CHECK(v.encode(Tokens{"zzz"}) == std::vector<TokenId>{1});
  const Tokens t = {"c", "a", "b"};
  CHECK(v.decode(v.encode(t)) == t);
  const std::vector<TokenId> unk = {special::kUnk};
  CHECK(v.decode(unk) == Tokens{"<unk>"});
  const std::vector<TokenId> bad = {static_cast<TokenId>(v.size())};
  CHECK_THROWS_AS(v.decode(bad), IndexError);
}

TEST_CASE("vocabulary file format") {
  const auto v = build_vocabulary(Tokens{"hello", "world", "hello"}, 50);
  std::stringstream ss;
  v.write(ss);
  CHECK(ss.str().rfind("<pad>\n<unk>\n<eos>\n<turn>\n<actor_a>\n<actor_b>\nhello\n", 0) == 0);
  CHECK(Vocabulary::read(ss) == v);

  std::stringstream wrong("<unk>\n<pad>\n<eos>\n<turn>\n<actor_a>\n<actor_b>\n");
  CHECK_THROWS_AS(Vocabulary::read(wrong), DataError);
}

TEST_CASE("strip_markup examples") {
  CHECK(strip_markup("<s>hello there</s>") == Tokens{"hello there"});
  CHECK(strip_markup("visit http://x.com now").empty());
  CHECK(strip_markup("<s>hi</s>\n<s>bye</s>") == Tokens{"hi", "bye"});

  MarkupStats stats;
  CHECK(strip_markup("good line\nbroken <i tag\nsee https://a.b\n<p></p>\n", &stats) ==
        Tokens{"good line", "broken"});
  CHECK(stats.malformed_tags == 1);
  CHECK(stats.url_lines == 1);

  const auto doc = subtitle_document("movie", "<s>one</s>\n<s>two</s>\n<s>three</s>");
  CHECK(doc.id == "movie");
  CHECK(doc.utterances.size() == 3);
}

TEST_CASE("anonymize examples and idempotence") {
  const NameLexicon names = {"bob", "alice"};
  CHECK(anonymize("call bob at 5551234", names) == "call <name> at <number>");
  CHECK(anonymize("goto http://a.b/c", names) == "goto <url>");
  CHECK(anonymize("nothing to see here .", names) == "nothing to see here .");

  Rng rng(21);
  const Tokens words = {"bob", "alice", "42", "x", "http://q.r/s", "Bob's", "7up", "ok", "."};
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (std::size_t i = 0, n = rng.below(8); i < n; ++i) s += words[rng.below(words.size())] + " ";
    const auto once = anonymize(s, names);
    CHECK(anonymize(once, names) == once);
  }
}

TEST_CASE("dialogue corpus parsing") {
  std::istringstream in(
      "# comment\n"
      "A: Describe your problem:\n"
      "B: what is the error ?\n"
      "\n\n"
      "just a line\n"
      "another one\n");
  const auto convs = parse_dialogue_corpus(in);
  REQUIRE(convs.size() == 2);
  CHECK(convs[0].id == "d1");
  CHECK(convs[1].id == "d2");
  REQUIRE(convs[0].utterances.size() == 2);
  CHECK(convs[0].utterances[0].actor == Actor::kClient);
  CHECK(convs[0].utterances[0].text == "Describe your problem:");
  CHECK(convs[0].utterances[1].actor == Actor::kAgent);
  CHECK(convs[1].utterances[0].actor == Actor::kUnknown);
}

namespace {

Conversation conv(std::initializer_list<std::pair<Actor, std::string>> turns) {
  Conversation c{"c", {}};
  for (const auto& [a, t] : turns) c.utterances.push_back({a, t});
  return c;
}

}  // namespace

TEST_CASE("pair_consecutive examples") {
  const auto three = pair_consecutive(conv({{Actor::kUnknown, "a"}, {Actor::kUnknown, "b"}, {Actor::kUnknown, "c"}}));
  REQUIRE(three.size() == 2);
  CHECK(three[0].context == Tokens{"a"});
  CHECK(three[0].reply == Tokens{"b"});
  CHECK(three[1].context == Tokens{"b"});
  CHECK(three[1].reply == Tokens{"c"});
  CHECK(pair_consecutive(conv({{Actor::kUnknown, "a"}, {Actor::kUnknown, "b"}})).size() == 1);
  CHECK(pair_consecutive(conv({{Actor::kUnknown, "a"}})).empty());
}

TEST_CASE("pair_consecutive counts and double use") {
  Rng rng(31);
  std::size_t expected = 0, produced = 0;
  for (int d = 0; d < 100; ++d) {
    Conversation c{"d" + std::to_string(d), {}};
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i)
      c.utterances.push_back({Actor::kUnknown, "u" + std::to_string(d) + "_" + std::to_string(i)});
    const auto pairs = pair_consecutive(c);
    expected += n - 1;
    produced += pairs.size();
    std::multiset<Tokens> as_context, as_reply;
    for (const auto& p : pairs) {
      as_context.insert(p.context);
      as_reply.insert(p.reply);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Tokens s = {"u" + std::to_string(d) + "_" + std::to_string(i)};
      CHECK(as_context.count(s) == (i + 1 < n ? 1u : 0u));
      CHECK(as_reply.count(s) == (i > 0 ? 1u : 0u));
    }
  }
  CHECK(produced == expected);
}

TEST_CASE("build_helpdesk_pairs examples") {
  const auto one = build_helpdesk_pairs(conv({{Actor::kClient, "hi"}, {Actor::kAgent, "hello"}}));
  REQUIRE(one.size() == 1);
  CHECK(one[0].context == Tokens{"<actor_a>", "hi", "<turn>"});
  CHECK(one[0].reply == Tokens{"hello"});

  const auto two = build_helpdesk_pairs(conv({{Actor::kClient, "my vpn fails"},
                                              {Actor::kAgent, "which os ?"},
                                              {Actor::kClient, "linux"},
                                              {Actor::kAgent, "run the script"}}));
  REQUIRE(two.size() == 2);
  CHECK(two[1].context == Tokens{"<actor_a>", "my", "vpn", "fails", "<turn>", "<actor_b>", "which",
                                 "os", "?", "<turn>", "<actor_a>", "linux", "<turn>"});
  CHECK(std::equal(two[0].context.begin(), two[0].context.end(), two[1].context.begin()));

  const auto capped = build_helpdesk_pairs(conv({{Actor::kClient, "one two three four"},
                                                 {Actor::kAgent, "ok"}}),
                                           4);
  REQUIRE(capped.size() == 1);
  CHECK(capped[0].context == Tokens{"two", "three", "four", "<turn>"});

  CHECK(build_helpdesk_pairs(conv({{Actor::kClient, "hello?"}, {Actor::kClient, "anyone"}})).empty());
}

TEST_CASE("split examples") {
  std::vector<Conversation> docs;
  for (int d = 0; d < 10; ++d)
    docs.push_back(conv({{Actor::kUnknown, "q" + std::to_string(d)}, {Actor::kUnknown, "r" + std::to_string(d)}}));
  const auto split = split_pairs(docs, 0.2, 7, PairingStyle::kConsecutive);
  CHECK(split.train.size() == 8);
  CHECK(split.valid.size() == 2);
  const auto again = split_pairs(docs, 0.2, 7, PairingStyle::kConsecutive);
  CHECK(again.train == split.train);
  CHECK(again.valid == split.valid);

  CHECK_THROWS_AS(split_documents(1, 0.5, 1), DataError);
  CHECK_THROWS_AS(split_documents(10, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_documents(10, 1.0, 1), ConfigError);
}

TEST_CASE("split keeps sentence sets disjoint") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Conversation> docs;
    std::size_t serial = 0;
    const std::size_t n_docs = 2 + rng.below(30);
    for (std::size_t d = 0; d < n_docs; ++d) {
      Conversation c{"d" + std::to_string(d), {}};
      for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i)
        c.utterances.push_back({i % 2 ? Actor::kAgent : Actor::kClient, "s" + std::to_string(serial++)});
      docs.push_back(std::move(c));
    }
    const double fraction = 0.05 + 0.9 * rng.uniform01();
    const auto style = trial % 2 ? PairingStyle::kHelpdesk : PairingStyle::kConsecutive;
    const auto split = split_pairs(docs, fraction, trial, style);
    std::set<std::string> train_words, valid_words;
    for (const auto& p : split.train) {
      train_words.insert(p.context.begin(), p.context.end());
      train_words.insert(p.reply.begin(), p.reply.end());
    }
    for (const auto& p : split.valid) {
      valid_words.insert(p.context.begin(), p.context.end());
      valid_words.insert(p.reply.begin(), p.reply.end());
    }
    for (const auto& w : valid_words)
      if (w[0] == 's') CHECK(train_words.count(w) == 0);

    const auto ds = split_documents(n_docs, fraction, trial);
    const double target = fraction * static_cast<double>(n_docs);
    CHECK(std::abs(static_cast<double>(ds.valid.size()) - target) <= 1.0);
    CHECK(ds.train.size() + ds.valid.size() == n_docs);
  }
}

TEST_CASE("encode_pair and pair files") {
  const auto vocab = build_vocabulary(Tokens{"hi", "there", "you"}, 20);
  const TextPair tp{{"hi", "there"}, {"you", "unknownword"}, "doc1"};
  const auto enc = encode_pair(tp, vocab);
  CHECK(enc.context == std::vector<TokenId>{vocab.id("hi"), vocab.id("there")});
  CHECK(enc.reply == std::vector<TokenId>{vocab.id("you"), special::kUnk});
  CHECK_THROWS_AS(encode_pair({{}, {"you"}, "d"}, vocab), DataError);
  CHECK_THROWS_AS(encode_pair({{"<pad>"}, {"you"}, "d"}, vocab), DataError);

  const std::vector<TextPair> pairs = {tp, {{"a", "b"}, {"c"}, "doc2"}};
  std::stringstream ss;
  write_pairs(ss, pairs);
  CHECK(ss.str() == "doc1\thi there\tyou unknownword\ndoc2\ta b\tc\n");
  CHECK(read_pairs(ss) == pairs);

  std::stringstream bad("only\ttwo\n");
  CHECK_THROWS_AS(read_pairs(bad), DataError);
}
