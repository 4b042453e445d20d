#include "cli.h"

#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "ncm/chat.h"
#include "ncm/checkpoint.h"
#include "ncm/decode.h"
#include "ncm/error.h"
#include "ncm/evaluation.h"
#include "ncm/ngram.h"
#include "ncm/service.h"
#include "ncm/text.h"
#include "ncm/train.h"

namespace ncm::cli {

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

std::vector<TrainingPair> load_encoded(const std::string& path, const Vocabulary& vocab) {
  const auto pairs = load_pairs(path);
  if (pairs.empty()) throw DataError(path + ": no pairs");
  return encode_pairs(pairs, vocab);
}

struct Ingest {
  std::vector<std::string> inputs;
  std::string format = "dialogue";
  std::string style = "consecutive";
  double valid_fraction = 0.1;
  std::uint64_t seed = 1;
  std::size_t context_cap = 256;
  std::string names;
  bool split_digits = false;
  std::string train_out;
  std::string valid_out;
};

int run_ingest(const Ingest& o, std::ostream& out) {
  std::vector<Conversation> docs;
  MarkupStats stats;
  for (const auto& path : o.inputs) {
    if (o.format == "dialogue") {
      auto convs = read_dialogue_corpus(path);
      for (auto& c : convs) {
        c.id = path + ":" + c.id;
        docs.push_back(std::move(c));
      }
    } else {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw DataError("cannot open " + path);
      std::ostringstream raw;
      raw << in.rdbuf();
      docs.push_back(subtitle_document(path, raw.str(), &stats));
    }
  }
  NameLexicon lexicon;
  PairingOptions popts;
  popts.tokenizer.split_digits = o.split_digits;
  if (!o.names.empty()) {
    lexicon = read_name_lexicon(o.names);
    popts.names = &lexicon;
  }
  const auto style = o.style == "helpdesk" ? PairingStyle::kHelpdesk : PairingStyle::kConsecutive;
  const auto split = split_pairs(docs, o.valid_fraction, o.seed, style, o.context_cap, popts);
  save_pairs(o.train_out, split.train);
  save_pairs(o.valid_out, split.valid);
  out << "documents=" << docs.size() << " train_pairs=" << split.train.size()
      << " valid_pairs=" << split.valid.size() << " malformed_tags=" << stats.malformed_tags
      << " url_lines=" << stats.url_lines << '\n';
  return kOk;
}

struct BuildVocab {
  std::vector<std::string> pairs;
  std::size_t cap = 20000;
  std::string out;
};

int run_build_vocab(const BuildVocab& o, std::ostream& out) {
  std::vector<std::string> tokens;
  for (const auto& path : o.pairs)
    for (const auto& p : load_pairs(path)) {
      tokens.insert(tokens.end(), p.context.begin(), p.context.end());
      tokens.insert(tokens.end(), p.reply.begin(), p.reply.end());
    }
  const auto vocab = build_vocabulary(tokens, o.cap);
  vocab.save(o.out);
  out << "vocab_size=" << vocab.size() << '\n';
  return kOk;
}

struct Train {
  std::string train_pairs;
  std::string valid_pairs;
  std::string vocab;
  std::string out;
  std::string log;
  ModelConfig config;
  std::string optimizer = "adagrad";
  std::optional<double> learning_rate;
  TrainSchedule schedule;
};

int run_train(Train o, std::ostream& out) {
  const auto vocab = Vocabulary::load(o.vocab);
  o.config.vocab_size = vocab.size();
  o.config.validate();
  const auto kind = parse_optimizer(o.optimizer);
  TrainSchedule schedule = o.schedule;
  schedule.optimizer = kind;
  schedule.learning_rate = o.learning_rate.value_or(TrainSchedule::defaults(kind).learning_rate);
  schedule.validate();

  const auto train_pairs = load_encoded(o.train_pairs, vocab);
  const auto valid_pairs = load_encoded(o.valid_pairs, vocab);

  std::unique_ptr<std::ofstream> log;
  if (!o.log.empty()) {
    log = std::make_unique<std::ofstream>(o.log);
    if (!*log) throw DataError("cannot write " + o.log);
  }
  const std::string header =
      "epoch\ttrain_loss\tvalid_loss\tvalid_perplexity\tlearning_rate\telapsed_seconds";
  out << header << '\n';
  if (log) *log << header << '\n';
  auto result = train<float>(o.config, Params<float>::initialize(o.config), train_pairs, valid_pairs,
                             schedule, [&](const EpochRecord& r) {
                               const auto line = format_epoch_line(r);
                               out << line << '\n' << std::flush;
                               if (log) *log << line << '\n' << std::flush;
                             });

  Checkpoint ck{o.config, std::move(result.params), vocab, std::nullopt, schedule};
  if (kind == OptimizerKind::kAdagrad) ck.optimizer = std::move(result.optimizer);
  save_checkpoint(o.out, ck);
  out << "best_epoch=" << result.best_epoch << " checkpoint=" << o.out << '\n';
  return kOk;
}

int run_ppl(const std::string& checkpoint, const std::string& pairs_path, std::size_t threads,
            std::ostream& out) {
  const auto ck = load_checkpoint(checkpoint);
  const auto pairs = load_encoded(pairs_path, ck.vocab);
  const auto report = model_perplexity(ck.params, ck.config, pairs, threads);
  out << "perplexity=" << format("%.6f", report.perplexity) << " tokens=" << report.token_count << '\n';
  return kOk;
}

struct NgramTrain {
  std::string pairs;
  std::string vocab;
  std::size_t order = 5;
  std::string out;
};

int run_ngram_train(const NgramTrain& o, std::ostream& out) {
  const auto vocab = Vocabulary::load(o.vocab);
  const auto pairs = load_encoded(o.pairs, vocab);
  const auto counts = train_ngram(pairs, o.order, vocab.size());
  counts.save(o.out);
  out << "order=" << o.order << " tokens=" << counts.token_count() << '\n';
  return kOk;
}

struct NgramPpl {
  std::string counts;
  std::string pairs;
  std::string vocab;
  std::vector<double> weights;
  std::string tune_pairs;
  double step = 0.1;
};

int run_ngram_ppl(const NgramPpl& o, std::ostream& out) {
  const auto counts = NGramCounts::load(o.counts);
  const auto vocab = Vocabulary::load(o.vocab);
  if (vocab.size() != counts.vocab_size())
    throw DataError("vocabulary has " + std::to_string(vocab.size()) + " entries, counts expect " +
                    std::to_string(counts.vocab_size()));
  SmoothingConfig smoothing = SmoothingConfig::defaults(counts.order());
  if (!o.weights.empty()) smoothing.weights = o.weights;
  if (!o.tune_pairs.empty()) {
    smoothing = grid_search_weights(counts, load_encoded(o.tune_pairs, vocab), o.step);
    out << "weights=";
    for (std::size_t i = 0; i < smoothing.weights.size(); ++i)
      out << (i ? "," : "") << format("%g", smoothing.weights[i]);
    out << '\n';
  }
  const auto report = ngram_perplexity(counts, smoothing, load_encoded(o.pairs, vocab));
  out << "perplexity=" << format("%.6f", report.perplexity) << " tokens=" << report.token_count << '\n';
  return kOk;
}

struct DecodeOpts {
  std::size_t beam = 1;
  std::size_t max_len = 64;
  bool allow_unk = false;
  bool length_normalize = false;

  DecodeConfig config() const {
    DecodeConfig d;
    d.beam_width = beam;
    d.max_len = max_len;
    d.ban_unk = !allow_unk;
    d.length_normalize = length_normalize;
    d.validate();
    return d;
  }
};

void add_decode_flags(CLI::App* cmd, DecodeOpts& d) {
  cmd->add_option("--beam", d.beam, "Beam width (1 = greedy)")->check(CLI::PositiveNumber);
  cmd->add_option("--max-len", d.max_len, "Maximum emitted tokens, eos included")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--allow-unk", d.allow_unk, "Let the decoder emit <unk>");
  cmd->add_flag("--length-normalize", d.length_normalize, "Rank beams by mean logprob");
}

int run_decode(const std::string& checkpoint, const std::string& text, const DecodeOpts& d,
               std::ostream& out) {
  const auto model = Model::from_checkpoint(load_checkpoint(checkpoint));
  const auto dconfig = d.config();
  const auto context = model.vocab.encode(tokenize(text));
  const auto reply = decode_reply(model, context, dconfig);
  for (std::size_t i = 0; i < reply.candidates.size(); ++i)
    out << (i + 1) << '\t' << format("%.6f", reply.candidates[i].logprob) << '\t'
        << reply.candidates[i].text << '\n';
  return kOk;
}

int run_chat(const std::string& checkpoint, const DecodeOpts& d, std::size_t cap, std::istream& in,
             std::ostream& out, std::ostream& err) {
  const auto model = Model::from_checkpoint(load_checkpoint(checkpoint));
  const auto dconfig = d.config();
  ChatSession session("terminal", {cap, {}});
  err << "type a message, or /quit to leave\n";
  for (std::string line; err << "> " << std::flush, std::getline(in, line);) {
    if (line == "/quit") break;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto reply = session.respond(model, line, dconfig);
    out << reply.text << '\n' << std::flush;
  }
  return kOk;
}

struct Serve {
  std::string checkpoint;
  std::string bind = "127.0.0.1:8080";
  std::string transcript_log;
  std::size_t context_cap = 256;
  std::uint64_t presentation_seed = 1;
  DecodeOpts decode;
};

int run_serve(const Serve& o, std::ostream& err) {
  ServiceOptions opts;
  opts.chat.context_cap = o.context_cap;
  opts.decode = o.decode.config();
  opts.transcript_log = o.transcript_log;
  opts.presentation_seed = o.presentation_seed;
  Service service(Model::from_checkpoint(load_checkpoint(o.checkpoint)), opts);
  HttpServer server(service);
  const auto address = resolve_bind_address(parse_bind_address(o.bind));
  const int port = server.start(address);
  err << "listening on " << address.host << ':' << port << '\n' << std::flush;
  server.wait();
  return kOk;
}

struct EvalExport {
  std::string checkpoint;
  std::string questions;
  std::string answers_b;
  std::string external_url;
  std::string out;
  std::string full;
  DecodeOpts decode;
  std::size_t context_cap = 256;
};

int run_eval_export(const EvalExport& o, std::ostream& out) {
  if (o.answers_b.empty() == o.external_url.empty())
    throw ConfigError("give exactly one of --answers-b or --external-url");
  const auto model = Model::from_checkpoint(load_checkpoint(o.checkpoint));
  const auto questions = read_lines(o.questions);
  ModelResponder a(model, {o.context_cap, {}}, o.decode.config());
  std::unique_ptr<Responder> b;
  if (!o.answers_b.empty()) {
    auto answers = read_lines(o.answers_b);
    if (answers.size() != questions.size())
      throw DataError("answers file has " + std::to_string(answers.size()) + " lines for " +
                      std::to_string(questions.size()) + " questions");
    b = std::make_unique<ListResponder>("answers", std::move(answers));
  } else {
    b = std::make_unique<HttpResponder>(o.external_url);
  }
  const auto build = build_comparison(questions, a, *b);
  {
    std::ofstream f(o.out);
    if (!f) throw DataError("cannot write " + o.out);
    write_comparison_export(f, build.items);
  }
  if (!o.full.empty()) {
    std::ofstream f(o.full);
    if (!f) throw DataError("cannot write " + o.full);
    write_comparison_items(f, build.items);
  }
  out << "items=" << build.items.size() << " unavailable=" << build.unavailable.size() << '\n';
  return kOk;
}

int run_eval_aggregate(const std::string& votes_path, const std::string& items_path,
                       std::ostream& out) {
  std::ifstream in(votes_path);
  if (!in) throw DataError("cannot open " + votes_path);
  const auto votes = read_votes(in);
  ComparisonTally tally;
  if (items_path.empty()) {
    tally = aggregate_votes(votes);
  } else {
    std::ifstream items_in(items_path);
    if (!items_in) throw DataError("cannot open " + items_path);
    const auto items = read_comparison_export(items_in);
    tally = aggregate_judgments(std::span<const ComparisonItem>(items), votes);
  }
  out << tally.preferred_a << ' ' << tally.preferred_b << ' ' << tally.ties << ' '
      << tally.disagreements << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Seq2seq dialogue toolkit", "ncm"};
  app.require_subcommand(1);
  int code = kOk;
  std::function<int()> action;

  Ingest ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Turn a corpus into train/valid pair files");
  c_ingest->add_option("--input", ingest.inputs, "Corpus file(s)")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--format", ingest.format, "dialogue (A:/B: lines) or subtitle (one document per file)")
      ->check(CLI::IsMember({"dialogue", "subtitle"}));
  c_ingest->add_option("--style", ingest.style, "consecutive or helpdesk pairing")
      ->check(CLI::IsMember({"consecutive", "helpdesk"}));
  c_ingest->add_option("--valid-fraction", ingest.valid_fraction, "Share of documents held out");
  c_ingest->add_option("--seed", ingest.seed, "Split seed");
  c_ingest->add_option("--context-cap", ingest.context_cap, "Helpdesk context length in tokens");
  c_ingest->add_option("--names", ingest.names, "Name lexicon for anonymization")->check(CLI::ExistingFile);
  c_ingest->add_flag("--split-digits", ingest.split_digits, "Tokenize digits one by one");
  c_ingest->add_option("--train-out", ingest.train_out, "Training pairs output")->required();
  c_ingest->add_option("--valid-out", ingest.valid_out, "Validation pairs output")->required();
  c_ingest->callback([&] { action = [&] { return run_ingest(ingest, out); }; });

  BuildVocab bv;
  auto* c_vocab = app.add_subcommand("build-vocab", "Build a capped vocabulary from pair files");
  c_vocab->add_option("--pairs", bv.pairs, "Pair file(s)")->required()->check(CLI::ExistingFile);
  c_vocab->add_option("--cap", bv.cap, "Vocabulary size including special tokens");
  c_vocab->add_option("--out", bv.out, "Vocabulary output")->required();
  c_vocab->callback([&] { action = [&] { return run_build_vocab(bv, out); }; });

  Train tr;
  tr.config.embedding_size = 64;
  tr.config.hidden_size = 128;
  auto* c_train = app.add_subcommand("train", "Train the recurrent model");
  c_train->add_option("--train", tr.train_pairs, "Training pairs")->required()->check(CLI::ExistingFile);
  c_train->add_option("--valid", tr.valid_pairs, "Validation pairs")->required()->check(CLI::ExistingFile);
  c_train->add_option("--vocab", tr.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Checkpoint output")->required();
  c_train->add_option("--log", tr.log, "Also write the epoch table here");
  c_train->add_option("--embedding", tr.config.embedding_size, "Embedding size")->check(CLI::PositiveNumber);
  c_train->add_option("--hidden", tr.config.hidden_size, "LSTM cells per layer")->check(CLI::PositiveNumber);
  c_train->add_option("--layers", tr.config.num_layers, "LSTM layers")->check(CLI::PositiveNumber);
  c_train->add_option("--projection", tr.config.projection_size, "Projection size, 0 for none");
  c_train->add_option("--seed", tr.config.seed, "Initialization seed");
  c_train->add_flag("--reverse-input", tr.config.reverse_input, "Feed the context reversed");
  c_train->add_option("--optimizer", tr.optimizer, "adagrad or sgd")->check(CLI::IsMember({"adagrad", "sgd"}));
  c_train->add_option("--lr", tr.learning_rate, "Learning rate (0.1 adagrad, 0.5 sgd)");
  c_train->add_option("--clip", tr.schedule.clip_threshold, "Global gradient norm threshold");
  c_train->add_option("--epochs", tr.schedule.epochs, "Maximum epochs");
  c_train->add_option("--batch", tr.schedule.batch_size, "Pairs per update")->check(CLI::PositiveNumber);
  c_train->add_option("--shuffle-seed", tr.schedule.shuffle_seed, "Epoch shuffle seed");
  c_train->add_flag("--lr-halving", tr.schedule.lr_halving, "Halve the rate when validation stalls");
  c_train->add_option("--patience", tr.schedule.patience, "Epochs without improvement before stopping, 0 never");
  c_train->add_option("--threads", tr.schedule.threads, "Worker threads")->check(CLI::PositiveNumber);
  c_train->callback([&] { action = [&] { return run_train(tr, out); }; });

  std::string ppl_ckpt, ppl_pairs;
  std::size_t ppl_threads = 1;
  auto* c_ppl = app.add_subcommand("ppl", "Perplexity of a checkpoint on a pair file");
  c_ppl->add_option("--checkpoint", ppl_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_ppl->add_option("--pairs", ppl_pairs, "Pair file")->required()->check(CLI::ExistingFile);
  c_ppl->add_option("--threads", ppl_threads, "Worker threads")->check(CLI::PositiveNumber);
  c_ppl->callback([&] { action = [&] { return run_ppl(ppl_ckpt, ppl_pairs, ppl_threads, out); }; });

  NgramTrain nt;
  auto* c_nt = app.add_subcommand("ngram-train", "Count n-grams over pair streams");
  c_nt->add_option("--pairs", nt.pairs, "Pair file")->required()->check(CLI::ExistingFile);
  c_nt->add_option("--vocab", nt.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  c_nt->add_option("--order", nt.order, "Model order")->check(CLI::PositiveNumber);
  c_nt->add_option("--out", nt.out, "Counts output")->required();
  c_nt->callback([&] { action = [&] { return run_ngram_train(nt, out); }; });

  NgramPpl np;
  auto* c_np = app.add_subcommand("ngram-ppl", "Perplexity of the interpolated n-gram model");
  c_np->add_option("--counts", np.counts, "Counts file")->required()->check(CLI::ExistingFile);
  c_np->add_option("--pairs", np.pairs, "Pair file")->required()->check(CLI::ExistingFile);
  c_np->add_option("--vocab", np.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  c_np->add_option("--weights", np.weights, "Interpolation weights, floor first")->delimiter(',');
  c_np->add_option("--tune", np.tune_pairs, "Grid-search the weights on these pairs first")
      ->check(CLI::ExistingFile);
  c_np->add_option("--step", np.step, "Grid step");
  c_np->callback([&] { action = [&] { return run_ngram_ppl(np, out); }; });

  std::string dec_ckpt, dec_text;
  DecodeOpts dec;
  auto* c_dec = app.add_subcommand("decode", "Decode a reply for one context");
  c_dec->add_option("--checkpoint", dec_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_dec->add_option("--text", dec_text, "Context text")->required();
  add_decode_flags(c_dec, dec);
  c_dec->callback([&] { action = [&] { return run_decode(dec_ckpt, dec_text, dec, out); }; });

  std::string chat_ckpt;
  std::size_t chat_cap = 256;
  DecodeOpts chat_dec;
  auto* c_chat = app.add_subcommand("chat", "Talk to a checkpoint on the terminal");
  c_chat->add_option("--checkpoint", chat_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_chat->add_option("--context-cap", chat_cap, "Context length in tokens")->check(CLI::Range(3, 1 << 20));
  add_decode_flags(c_chat, chat_dec);
  c_chat->callback([&] { action = [&] { return run_chat(chat_ckpt, chat_dec, chat_cap, in, out, err); }; });

  Serve sv;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP service");
  c_serve->add_option("--checkpoint", sv.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--bind", sv.bind, "host:port (NCM_BIND overrides)");
  c_serve->add_option("--transcript-log", sv.transcript_log, "Append chat turns here as JSON lines");
  c_serve->add_option("--context-cap", sv.context_cap, "Context length in tokens")->check(CLI::Range(3, 1 << 20));
  c_serve->add_option("--presentation-seed", sv.presentation_seed, "Seed for judge answer order");
  add_decode_flags(c_serve, sv.decode);
  c_serve->callback([&] { action = [&] { return run_serve(sv, err); }; });

  EvalExport ee;
  auto* c_ee = app.add_subcommand("eval-export", "Build side-by-side judging items");
  c_ee->add_option("--checkpoint", ee.checkpoint, "Checkpoint answering as A")->required()->check(CLI::ExistingFile);
  c_ee->add_option("--questions", ee.questions, "One question per line")->required()->check(CLI::ExistingFile);
  c_ee->add_option("--answers-b", ee.answers_b, "One B answer per line")->check(CLI::ExistingFile);
  c_ee->add_option("--external-url", ee.external_url, "HTTP bot answering as B");
  c_ee->add_option("--out", ee.out, "Judge-facing export (JSON lines)")->required();
  c_ee->add_option("--full", ee.full, "Operator copy including responder names");
  c_ee->add_option("--context-cap", ee.context_cap, "Context length in tokens")->check(CLI::Range(3, 1 << 20));
  add_decode_flags(c_ee, ee.decode);
  c_ee->callback([&] { action = [&] { return run_eval_export(ee, out); }; });

  std::string agg_votes, agg_items;
  auto* c_agg = app.add_subcommand("eval-aggregate", "Tally judge votes: A B tie disagreement");
  c_agg->add_option("--votes", agg_votes, "Votes (JSON lines)")->required()->check(CLI::ExistingFile);
  c_agg->add_option("--items", agg_items, "Export file listing every item")->check(CLI::ExistingFile);
  c_agg->callback([&] { action = [&] { return run_eval_aggregate(agg_votes, agg_items, out); }; });

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto used = app.get_subcommands();
    out << (used.empty() ? app.help() : used.back()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    const auto used = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (used.empty() ? app.help() : used.back()->help());
    return kUsage;
  }

  try {
    code = action ? action() : kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  return code;
}

}  // namespace ncm::cli
