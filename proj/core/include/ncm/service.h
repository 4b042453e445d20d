#ifndef NCM_SERVICE_H_
#define NCM_SERVICE_H_

// HTTP API over a loaded model. Bodies are JSON objects.
//
//   POST /api/session                 -> {"session_id"}
//   POST /api/chat                    {"session_id", "message", "beam_width"?, "max_len"?}
//                                     -> {"reply", "logprob", "candidates": [{"text", "logprob"}]}
//   GET  /api/session/<id>            -> {"session_id", "turn_count", "created", "last_active",
//                                         "context_tokens",
//                                         "transcript": [{"speaker", "text", "logprob"?}]}
//   POST /api/compare                 {"questions": [...], "external_url"? | "answers_b"?}
//                                     -> {"items": [{"item_id", "question", "answer_a", "answer_b"}],
//                                         "unavailable": [...]}
//   GET  /api/judging/<judge_id>      -> {"judge_id", "tasks": [{"item_id", "question", "left",
//                                         "right", "voted"}]}
//   POST /api/votes                   {"votes": [{"item_id", "judge_id", "choice" | "side"}]}
//                                     -> tally
//   GET  /api/tally                   -> tally
//   GET  /api/health                  -> {"status": "ok", ...}
//
// A tally is {"preferred_a", "preferred_b", "ties", "disagreements",
// "scored", "pending"}; only items holding all four votes are scored.
// "choice" is "A", "B" or "tie"; "side" is "left", "right" or "tie" relative
// to that judge's presentation and is resolved here.
//
// Errors: 400 {"error", "fields": {name: problem}} for malformed bodies,
// 404 for unknown sessions, items or routes, 409 for duplicate votes,
// 500 {"error", "id"} for failures whose details only go to the log.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ncm/chat.h"
#include "ncm/evaluation.h"

namespace ncm {

struct ServiceOptions {
  ChatOptions chat;
  DecodeConfig decode;                 // defaults for /api/chat
  std::size_t max_beam_width = 32;
  std::size_t max_decode_len = 256;
  std::uint64_t presentation_seed = 1;
  std::string transcript_log;          // append-only JSON lines; empty disables
  int external_timeout_seconds = 10;
  std::ostream* diagnostics = nullptr;  // 500 details; nullptr means stderr
};

struct HttpResponse {
  int status = 200;
  std::string body;
};

class Service {
 public:
  Service(Model model, ServiceOptions options = {});
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Thread-safe. Path excludes any query string.
  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body);

  const Model& model() const { return model_; }

 private:
  struct SessionSlot;
  struct Judging;

  HttpResponse create_session();
  HttpResponse chat(std::string_view body);
  HttpResponse get_session(const std::string& id);
  HttpResponse compare(std::string_view body);
  HttpResponse judging_tasks(const std::string& judge_id);
  HttpResponse post_votes(std::string_view body);
  HttpResponse tally();
  HttpResponse health();
  HttpResponse internal_error(const std::string& detail);

  std::shared_ptr<SessionSlot> find_session(const std::string& id);
  void log_turn(const ChatSession& session, std::size_t index);

  Model model_;
  ServiceOptions options_;

  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
  std::uint64_t next_session_ = 1;

  std::unique_ptr<Judging> judging_;

  std::mutex log_mutex_;
  std::unique_ptr<std::ostream> log_;
  std::uint64_t next_error_ = 1;
};

// Asks an external bot over HTTP: POST <url> {"question"} -> {"answer"}.
// Any transport error, non-200 status or missing answer yields nullopt.
class HttpResponder : public Responder {
 public:
  HttpResponder(std::string url, int timeout_seconds = 10);
  std::string name() const override { return "external"; }
  std::optional<std::string> respond(const std::string& question) override;

 private:
  std::string origin_;
  std::string path_;
  int timeout_seconds_;
};

// Answers from a fixed list, in question order.
class ListResponder : public Responder {
 public:
  ListResponder(std::string name, std::vector<std::string> answers)
      : name_(std::move(name)), answers_(std::move(answers)) {}
  std::string name() const override { return name_; }
  std::optional<std::string> respond(const std::string& question) override;

 private:
  std::string name_;
  std::vector<std::string> answers_;
  std::size_t next_ = 0;
};

// Answers with the model as if the question opened a fresh session.
class ModelResponder : public Responder {
 public:
  ModelResponder(const Model& model, ChatOptions chat, DecodeConfig decode)
      : model_(model), chat_(chat), decode_(decode) {}
  std::string name() const override { return "model"; }
  std::optional<std::string> respond(const std::string& question) override;

 private:
  const Model& model_;
  ChatOptions chat_;
  DecodeConfig decode_;
};

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// "host:port" or ":port"; ConfigError otherwise.
BindAddress parse_bind_address(std::string_view text);
// NCM_BIND when set, else the given address.
BindAddress resolve_bind_address(const BindAddress& fallback);

class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const BindAddress& address);
  // Blocks until stop() is called from another thread.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ncm

#endif  // NCM_SERVICE_H_
