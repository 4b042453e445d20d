#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "generators.h"
#include "ncm/error.h"
#include "ncm/evaluation.h"
#include "ncm/train.h"

using namespace ncm;

namespace {

ModelConfig eval_config() {
  ModelConfig c;
  c.vocab_size = 13;
  c.embedding_size = 4;
  c.hidden_size = 5;
  c.seed = 6;
  return c;
}

std::vector<JudgeVote> votes_for(const std::string& item, std::initializer_list<Choice> choices) {
  std::vector<JudgeVote> out;
  int j = 0;
  for (Choice c : choices) out.push_back({item, "j" + std::to_string(++j), c});
  return out;
}

}  // namespace

TEST_CASE("model perplexity is exp of the token-weighted loss") {
  const auto c = eval_config();
  const auto p = Params<double>::initialize(c);
  const auto pairs = testgen::random_pairs(30, c.vocab_size, 2);
  const auto report = model_perplexity(p, c, pairs);
  std::size_t tokens = 0;
  for (const auto& pr : pairs) tokens += pr.reply.size() + 1;
  CHECK(report.token_count == tokens);
  CHECK(report.pair_count == 30);
  CHECK(std::log(report.perplexity) == doctest::Approx(mean_token_loss(p, c, pairs)).epsilon(1e-9));
  CHECK(report.perplexity == doctest::Approx(model_perplexity(p, c, pairs, 3).perplexity).epsilon(1e-12));

  const auto zero = Params<double>::zeros(c);
  CHECK(model_perplexity(zero, c, pairs).perplexity == doctest::Approx(13.0));
  CHECK_THROWS_AS(model_perplexity(p, c, std::span<const TrainingPair>{}), DataError);
}

TEST_CASE("three of four agreement") {
  using C = Choice;
  auto resolve = [](std::initializer_list<Choice> v) {
    const std::vector<Choice> votes(v);
    return resolve_item(votes);
  };
  CHECK(resolve({C::kA, C::kA, C::kA, C::kB}) == Outcome::kPreferredA);
  CHECK(resolve({C::kB, C::kB, C::kB, C::kB}) == Outcome::kPreferredB);
  CHECK(resolve({C::kTie, C::kA, C::kTie, C::kTie}) == Outcome::kTie);
  CHECK(resolve({C::kA, C::kA, C::kB, C::kB}) == Outcome::kDisagreement);
  CHECK(resolve({C::kA, C::kB, C::kTie, C::kA}) == Outcome::kDisagreement);

  const std::vector<std::string> items = {"x"};
  const auto tally = aggregate_judgments(items, votes_for("x", {C::kA, C::kA, C::kA, C::kB}));
  CHECK(tally == ComparisonTally{1, 0, 0, 0});
}

TEST_CASE("tally does not depend on vote order") {
  Rng rng(10);
  std::vector<std::string> items;
  std::vector<JudgeVote> votes;
  for (int i = 0; i < 40; ++i) {
    items.push_back("i" + std::to_string(i));
    for (int j = 0; j < 4; ++j)
      votes.push_back({items.back(), "j" + std::to_string(j), static_cast<Choice>(rng.below(3))});
  }
  const auto base = aggregate_judgments(items, votes);
  CHECK(base.total() == 40);
  CHECK(aggregate_votes(votes) == base);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(votes.begin(), votes.end());
    CHECK(aggregate_judgments(items, votes) == base);
  }
}

TEST_CASE("malformed vote sets are rejected") {
  const std::vector<std::string> items = {"x"};
  auto three = votes_for("x", {Choice::kA, Choice::kA, Choice::kA});
  CHECK_THROWS_AS(aggregate_judgments(items, three), DataError);
  auto five = votes_for("x", {Choice::kA, Choice::kA, Choice::kA, Choice::kA, Choice::kA});
  CHECK_THROWS_AS(aggregate_judgments(items, five), DataError);
  auto dup = votes_for("x", {Choice::kA, Choice::kA, Choice::kA, Choice::kA});
  dup[3].judge_id = "j1";
  CHECK_THROWS_AS(aggregate_judgments(items, dup), DataError);
  auto stray = votes_for("x", {Choice::kA, Choice::kA, Choice::kA, Choice::kA});
  stray.push_back({"y", "j1", Choice::kA});
  CHECK_THROWS_AS(aggregate_judgments(items, stray), DataError);
  CHECK(parse_choice("tie") == Choice::kTie);
  CHECK(to_string(Choice::kB) == "B");
  CHECK_THROWS_AS(parse_choice("C"), DataError);
}

TEST_CASE("building comparisons") {
  int calls_a = 0, calls_b = 0;
  FunctionResponder a("model", [&](const std::string& q) -> std::optional<std::string> {
    ++calls_a;
    return "a:" + q;
  });
  FunctionResponder b("bot", [&](const std::string& q) -> std::optional<std::string> {
    ++calls_b;
    if (q == "timeout?") return std::nullopt;
    return "b:" + q;
  });
  const std::vector<std::string> questions = {"hi", "timeout?", "bye"};
  const auto build = build_comparison(questions, a, b);
  CHECK(calls_a == 3);
  CHECK(calls_b == 3);
  REQUIRE(build.items.size() == 2);
  CHECK(build.unavailable == std::vector<std::string>{"timeout?"});
  CHECK(build.items[0] == ComparisonItem{"q1", "hi", "a:hi", "b:hi", "model", "bot"});
  CHECK(build.items[1].id == "q3");
}

TEST_CASE("presentation is stable, invertible and mixed") {
  std::size_t swapped = 0;
  for (int i = 0; i < 200; ++i) {
    const auto item = "q" + std::to_string(i);
    const auto p = present(item, "judge", 1);
    CHECK(p.swapped == present(item, "judge", 1).swapped);
    swapped += p.swapped;
    for (Choice c : {Choice::kA, Choice::kB, Choice::kTie})
      CHECK(resolve_side(side_of(c, p.swapped), p.swapped) == c);
  }
  CHECK(swapped > 60);
  CHECK(swapped < 140);
  CHECK(resolve_side(Side::kLeft, true) == Choice::kB);
  CHECK(resolve_side(Side::kTie, true) == Choice::kTie);
}

TEST_CASE("jsonl round trips") {
  const std::vector<ComparisonItem> items = {{"q1", "what \"now\"?", "a\nb", "c", "model", "bot"},
                                             {"q2", "x", "y", "z", "model", "bot"}};
  std::stringstream full;
  write_comparison_items(full, items);
  CHECK(read_comparison_items(full) == items);

  std::stringstream blind;
  write_comparison_export(blind, items);
  CHECK(blind.str().find("model") == std::string::npos);
  const auto back = read_comparison_export(blind);
  REQUIRE(back.size() == 2);
  CHECK(back[0].answer_a == "a\nb");
  CHECK(back[0].source_a.empty());

  const std::vector<JudgeVote> votes = {{"q1", "j1", Choice::kA}, {"q1", "j2", Choice::kTie}};
  std::stringstream vs;
  write_votes(vs, votes);
  CHECK(read_votes(vs) == votes);
  std::stringstream bad("{\"item_id\":\"q1\",\"judge_id\":\"j\",\"choice\":\"maybe\"}\n");
  CHECK_THROWS_AS(read_votes(bad), DataError);
}

TEST_CASE("fixture vote file tallies to 97 60 20 23") {
  std::ifstream in(std::string(NCM_TEST_FIXTURES) + "/judged_votes.jsonl");
  REQUIRE(in);
  const auto votes = read_votes(in);
  CHECK(votes.size() == 800);
  CHECK(aggregate_votes(votes) == ComparisonTally{97, 60, 20, 23});
}
