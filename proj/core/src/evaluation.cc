#include "ncm/evaluation.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

#include "ncm/error.h"
#include "parallel.h"

namespace ncm {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename F>
void for_each_json_line(std::istream& in, const char* what, F&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

template <typename T>
PerplexityReport model_perplexity(const Params<T>& params, const ModelConfig& config,
                                  std::span<const TrainingPair> pairs, std::size_t threads) {
  if (pairs.empty()) throw DataError("model_perplexity: no pairs");
  std::vector<double> nll(pairs.size());
  internal::parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const auto trace = forward_pair(pairs[i], params, config);
    nll[i] = static_cast<double>(trace.loss) * static_cast<double>(trace.targets.size());
  });
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!std::isfinite(nll[i]))
      throw NumericError("non-finite NLL for pair " + std::to_string(i) + " (doc '" +
                         pairs[i].source_doc + "')");
    total += nll[i];
    tokens += pairs[i].reply.size() + 1;
  }
  return PerplexityReport::from_totals(total, tokens, pairs.size());
}

template PerplexityReport model_perplexity<float>(const Params<float>&, const ModelConfig&,
                                                  std::span<const TrainingPair>, std::size_t);
template PerplexityReport model_perplexity<double>(const Params<double>&, const ModelConfig&,
                                                   std::span<const TrainingPair>, std::size_t);

std::string to_string(Choice choice) {
  switch (choice) {
    case Choice::kA:
      return "A";
    case Choice::kB:
      return "B";
    case Choice::kTie:
      return "tie";
  }
  return "tie";
}

Choice parse_choice(std::string_view text) {
  if (text == "A" || text == "a") return Choice::kA;
  if (text == "B" || text == "b") return Choice::kB;
  if (text == "tie") return Choice::kTie;
  throw DataError("unknown choice '" + std::string(text) + "' (expected A, B or tie)");
}

Outcome resolve_item(std::span<const Choice> votes) {
  std::size_t a = 0, b = 0, tie = 0;
  for (Choice c : votes) {
    if (c == Choice::kA) ++a;
    else if (c == Choice::kB) ++b;
    else ++tie;
  }
  if (a >= kAgreementNeeded) return Outcome::kPreferredA;
  if (b >= kAgreementNeeded) return Outcome::kPreferredB;
  if (tie >= kAgreementNeeded) return Outcome::kTie;
  return Outcome::kDisagreement;
}

ComparisonTally aggregate_judgments(std::span<const std::string> item_ids,
                                    std::span<const JudgeVote> votes) {
  std::map<std::string, std::vector<const JudgeVote*>> by_item;
  for (const auto& id : item_ids)
    if (!by_item.emplace(id, std::vector<const JudgeVote*>{}).second)
      throw DataError("duplicate comparison item '" + id + "'");
  for (const auto& v : votes) {
    auto it = by_item.find(v.item_id);
    if (it == by_item.end()) throw DataError("vote for unknown item '" + v.item_id + "'");
    it->second.push_back(&v);
  }

  ComparisonTally tally;
  for (const auto& [id, item_votes] : by_item) {
    if (item_votes.size() != kJudgesPerItem)
      throw DataError("item '" + id + "' has " + std::to_string(item_votes.size()) +
                      " votes, expected " + std::to_string(kJudgesPerItem));
    std::set<std::string> judges;
    std::vector<Choice> choices;
    for (const auto* v : item_votes) {
      if (!judges.insert(v->judge_id).second)
        throw DataError("item '" + id + "' has two votes from judge '" + v->judge_id + "'");
      choices.push_back(v->choice);
    }
    switch (resolve_item(choices)) {
      case Outcome::kPreferredA:
        ++tally.preferred_a;
        break;
      case Outcome::kPreferredB:
        ++tally.preferred_b;
        break;
      case Outcome::kTie:
        ++tally.ties;
        break;
      case Outcome::kDisagreement:
        ++tally.disagreements;
        break;
    }
  }
  return tally;
}

ComparisonTally aggregate_judgments(std::span<const ComparisonItem> items,
                                    std::span<const JudgeVote> votes) {
  std::vector<std::string> ids;
  ids.reserve(items.size());
  for (const auto& i : items) ids.push_back(i.id);
  return aggregate_judgments(std::span<const std::string>(ids), votes);
}

ComparisonTally aggregate_votes(std::span<const JudgeVote> votes) {
  std::set<std::string> ids;
  for (const auto& v : votes) ids.insert(v.item_id);
  std::vector<std::string> list(ids.begin(), ids.end());
  return aggregate_judgments(std::span<const std::string>(list), votes);
}

ComparisonBuild build_comparison(std::span<const std::string> questions, Responder& responder_a,
                                 Responder& responder_b, const std::string& id_prefix) {
  ComparisonBuild build;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    auto a = responder_a.respond(questions[i]);
    auto b = responder_b.respond(questions[i]);
    if (!a || !b || a->empty() || b->empty()) {
      build.unavailable.push_back(questions[i]);
      continue;
    }
    build.items.push_back({id_prefix + std::to_string(i + 1), questions[i], std::move(*a),
                           std::move(*b), responder_a.name(), responder_b.name()});
  }
  return build;
}

Presentation present(const std::string& item_id, const std::string& judge_id, std::uint64_t seed) {
  const std::uint64_t h = splitmix64(fnv1a(judge_id, fnv1a(item_id) ^ splitmix64(seed)));
  return {item_id, judge_id, (h & 1) != 0};
}

Choice resolve_side(Side side, bool swapped) {
  switch (side) {
    case Side::kLeft:
      return swapped ? Choice::kB : Choice::kA;
    case Side::kRight:
      return swapped ? Choice::kA : Choice::kB;
    case Side::kTie:
      return Choice::kTie;
  }
  return Choice::kTie;
}

Side side_of(Choice choice, bool swapped) {
  switch (choice) {
    case Choice::kA:
      return swapped ? Side::kRight : Side::kLeft;
    case Choice::kB:
      return swapped ? Side::kLeft : Side::kRight;
    case Choice::kTie:
      return Side::kTie;
  }
  return Side::kTie;
}

void write_comparison_export(std::ostream& out, std::span<const ComparisonItem> items) {
  for (const auto& i : items)
    out << json{{"item_id", i.id}, {"question", i.question}, {"answer_a", i.answer_a},
                {"answer_b", i.answer_b}}
               .dump()
        << '\n';
}

std::vector<ComparisonItem> read_comparison_export(std::istream& in) {
  std::vector<ComparisonItem> items;
  for_each_json_line(in, "comparison export", [&](const json& j) {
    items.push_back({j.at("item_id").get<std::string>(), j.at("question").get<std::string>(),
                     j.at("answer_a").get<std::string>(), j.at("answer_b").get<std::string>(),
                     "", ""});
  });
  return items;
}

void write_comparison_items(std::ostream& out, std::span<const ComparisonItem> items) {
  for (const auto& i : items)
    out << json{{"item_id", i.id},         {"question", i.question}, {"answer_a", i.answer_a},
                {"answer_b", i.answer_b}, {"source_a", i.source_a}, {"source_b", i.source_b}}
               .dump()
        << '\n';
}

std::vector<ComparisonItem> read_comparison_items(std::istream& in) {
  std::vector<ComparisonItem> items;
  for_each_json_line(in, "comparison items", [&](const json& j) {
    items.push_back({j.at("item_id").get<std::string>(), j.at("question").get<std::string>(),
                     j.at("answer_a").get<std::string>(), j.at("answer_b").get<std::string>(),
                     j.value("source_a", std::string()), j.value("source_b", std::string())});
  });
  return items;
}

void write_votes(std::ostream& out, std::span<const JudgeVote> votes) {
  for (const auto& v : votes)
    out << json{{"item_id", v.item_id}, {"judge_id", v.judge_id}, {"choice", to_string(v.choice)}}
               .dump()
        << '\n';
}

std::vector<JudgeVote> read_votes(std::istream& in) {
  std::vector<JudgeVote> votes;
  for_each_json_line(in, "votes", [&](const json& j) {
    votes.push_back({j.at("item_id").get<std::string>(), j.at("judge_id").get<std::string>(),
                     parse_choice(j.at("choice").get<std::string>())});
  });
  return votes;
}

}  // namespace ncm
