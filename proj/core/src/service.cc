#include "ncm/service.h"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ncm/error.h"

namespace ncm {

namespace {

using nlohmann::json;

HttpResponse reply_json(int status, const json& body) { return {status, body.dump()}; }

HttpResponse bad_request(json fields) {
  return reply_json(400, {{"error", "malformed request"}, {"fields", std::move(fields)}});
}

HttpResponse not_found(const std::string& what) { return reply_json(404, {{"error", what}}); }

std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t secs = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<json> parse_object(std::string_view body, json& fields) {
  if (body.find_first_not_of(" \t\r\n") == std::string_view::npos) return json::object();
  try {
    auto j = json::parse(body);
    if (!j.is_object()) {
      fields["body"] = "expected a JSON object";
      return std::nullopt;
    }
    return j;
  } catch (const json::parse_error& e) {
    fields["body"] = std::string("invalid JSON: ") + e.what();
    return std::nullopt;
  }
}

// Optional positive integer field no larger than limit.
std::optional<std::size_t> bounded_count(const json& j, const char* key, std::size_t limit,
                                         json& fields) {
  if (!j.contains(key)) return std::nullopt;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() < 1 || v.get<std::uint64_t>() > limit) {
    fields[key] = "expected an integer in [1, " + std::to_string(limit) + "]";
    return std::nullopt;
  }
  return v.get<std::size_t>();
}

json tally_json(const ComparisonTally& t, std::size_t pending) {
  return {{"preferred_a", t.preferred_a}, {"preferred_b", t.preferred_b},
          {"ties", t.ties},               {"disagreements", t.disagreements},
          {"scored", t.total()},          {"pending", pending}};
}

}  // namespace

struct Service::SessionSlot {
  std::mutex mutex;
  ChatSession session;

  SessionSlot(std::string id, ChatOptions options) : session(std::move(id), options) {}
};

struct Service::Judging {
  std::mutex mutex;
  std::vector<ComparisonItem> items;
  std::map<std::string, std::size_t> index;                     // item id -> position
  std::map<std::string, std::map<std::string, Choice>> votes;  // item -> judge -> choice
  std::uint64_t next_item = 1;

  std::pair<ComparisonTally, std::size_t> tally() const {
    ComparisonTally t;
    std::size_t pending = 0;
    for (const auto& item : items) {
      auto it = votes.find(item.id);
      if (it == votes.end() || it->second.size() < kJudgesPerItem) {
        ++pending;
        continue;
      }
      std::vector<Choice> choices;
      for (const auto& [judge, c] : it->second) choices.push_back(c);
      switch (resolve_item(choices)) {
        case Outcome::kPreferredA:
          ++t.preferred_a;
          break;
        case Outcome::kPreferredB:
          ++t.preferred_b;
          break;
        case Outcome::kTie:
          ++t.ties;
          break;
        case Outcome::kDisagreement:
          ++t.disagreements;
          break;
      }
    }
    return {t, pending};
  }
};

Service::Service(Model model, ServiceOptions options)
    : model_(std::move(model)), options_(std::move(options)), judging_(std::make_unique<Judging>()) {
  options_.decode.validate();
  if (options_.chat.context_cap < 3) throw ConfigError("service: context cap must be at least 3");
  if (!options_.transcript_log.empty()) {
    auto out = std::make_unique<std::ofstream>(options_.transcript_log, std::ios::app);
    if (!*out) throw ConfigError("service: cannot open transcript log " + options_.transcript_log);
    log_ = std::move(out);
  }
}

Service::~Service() = default;

HttpResponse Service::handle(std::string_view method, std::string_view path, std::string_view body) {
  try {
    const bool get = method == "GET";
    const bool post = method == "POST";
    auto route = [&](std::string_view p) { return path == p; };
    auto prefixed = [&](std::string_view prefix) {
      return path.size() > prefix.size() && path.substr(0, prefix.size()) == prefix;
    };

    if (route("/api/session")) {
      if (post) return create_session();
    } else if (prefixed("/api/session/")) {
      if (get) return get_session(std::string(path.substr(13)));
    } else if (route("/api/chat")) {
      if (post) return chat(body);
    } else if (route("/api/compare")) {
      if (post) return compare(body);
    } else if (prefixed("/api/judging/")) {
      if (get) return judging_tasks(std::string(path.substr(13)));
    } else if (route("/api/votes")) {
      if (post) return post_votes(body);
    } else if (route("/api/tally")) {
      if (get) return tally();
    } else if (route("/api/health")) {
      if (get) return health();
    } else {
      return not_found("no route for " + std::string(path));
    }
    return reply_json(405, {{"error", "method not allowed"}});
  } catch (const std::exception& e) {
    return internal_error(e.what());
  }
}

HttpResponse Service::internal_error(const std::string& detail) {
  std::uint64_t n;
  {
    std::lock_guard lock(log_mutex_);
    n = next_error_++;
  }
  const std::string id = "e" + std::to_string(n);
  std::ostream& diag = options_.diagnostics ? *options_.diagnostics : std::cerr;
  diag << "error " << id << ": " << detail << std::endl;
  return reply_json(500, {{"error", "internal error"}, {"id", id}});
}

std::shared_ptr<Service::SessionSlot> Service::find_session(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse Service::create_session() {
  std::lock_guard lock(sessions_mutex_);
  const std::string id = "s" + std::to_string(next_session_++);
  sessions_.emplace(id, std::make_shared<SessionSlot>(id, options_.chat));
  return reply_json(201, {{"session_id", id}});
}

void Service::log_turn(const ChatSession& session, std::size_t index) {
  if (!log_) return;
  const auto& e = session.transcript()[index];
  json record = {{"session_id", session.id()},
                 {"turn", index + 1},
                 {"speaker", to_string(e.speaker)},
                 {"text", e.text},
                 {"time", iso_time(session.last_active())}};
  if (e.logprob) record["logprob"] = *e.logprob;
  std::lock_guard lock(log_mutex_);
  *log_ << record.dump() << '\n';
  log_->flush();
}

HttpResponse Service::chat(std::string_view body) {
  json fields = json::object();
  auto req = parse_object(body, fields);
  if (!req) return bad_request(fields);
  const json& j = *req;
  if (!j.contains("session_id") || !j["session_id"].is_string())
    fields["session_id"] = "required string";
  if (!j.contains("message") || !j["message"].is_string())
    fields["message"] = "required string";
  else if (j["message"].get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos)
    fields["message"] = "must not be blank";
  DecodeConfig dconfig = options_.decode;
  if (auto b = bounded_count(j, "beam_width", options_.max_beam_width, fields)) dconfig.beam_width = *b;
  if (auto m = bounded_count(j, "max_len", options_.max_decode_len, fields)) dconfig.max_len = *m;
  if (!fields.empty()) return bad_request(fields);

  const auto id = j["session_id"].get<std::string>();
  auto slot = find_session(id);
  if (!slot) return reply_json(404, {{"error", "unknown session"}, {"session_id", id}});

  std::lock_guard lock(slot->mutex);
  ChatSession& session = slot->session;
  const std::size_t before = session.turn_count();
  ChatReply reply;
  try {
    reply = session.respond(model_, j["message"].get<std::string>(), dconfig);
  } catch (const std::exception& e) {
    return internal_error("chat decode in session " + id + ": " + e.what());
  }
  for (std::size_t i = before; i < session.turn_count(); ++i) log_turn(session, i);

  json candidates = json::array();
  for (const auto& c : reply.candidates) candidates.push_back({{"text", c.text}, {"logprob", c.logprob}});
  return reply_json(200, {{"reply", reply.text}, {"logprob", reply.logprob}, {"candidates", candidates}});
}

HttpResponse Service::get_session(const std::string& id) {
  auto slot = find_session(id);
  if (!slot) return reply_json(404, {{"error", "unknown session"}, {"session_id", id}});
  std::lock_guard lock(slot->mutex);
  const ChatSession& s = slot->session;
  json transcript = json::array();
  for (const auto& e : s.transcript()) {
    json entry = {{"speaker", to_string(e.speaker)}, {"text", e.text}};
    if (e.logprob) entry["logprob"] = *e.logprob;
    transcript.push_back(std::move(entry));
  }
  return reply_json(200, {{"session_id", s.id()},
                          {"turn_count", s.turn_count()},
                          {"created", iso_time(s.created())},
                          {"last_active", iso_time(s.last_active())},
                          {"context_tokens", s.context().size()},
                          {"transcript", transcript}});
}

HttpResponse Service::compare(std::string_view body) {
  json fields = json::object();
  auto req = parse_object(body, fields);
  if (!req) return bad_request(fields);
  const json& j = *req;

  std::vector<std::string> questions;
  if (!j.contains("questions") || !j["questions"].is_array() || j["questions"].empty()) {
    fields["questions"] = "required non-empty array of strings";
  } else {
    for (const auto& q : j["questions"]) {
      if (!q.is_string() || q.get<std::string>().empty()) {
        fields["questions"] = "every question must be a non-empty string";
        break;
      }
      questions.push_back(q.get<std::string>());
    }
  }
  const bool has_url = j.contains("external_url");
  const bool has_answers = j.contains("answers_b");
  if (has_url && has_answers) {
    fields["external_url"] = "give either external_url or answers_b, not both";
  } else if (has_url) {
    if (!j["external_url"].is_string() || j["external_url"].get<std::string>().rfind("http://", 0) != 0)
      fields["external_url"] = "expected an http:// URL";
  } else if (has_answers) {
    const auto& a = j["answers_b"];
    if (!a.is_array() || a.size() != questions.size())
      fields["answers_b"] = "expected one string per question";
    else
      for (const auto& x : a)
        if (!x.is_string()) fields["answers_b"] = "expected one string per question";
  } else {
    fields["external_url"] = "required unless answers_b is given";
  }
  if (!fields.empty()) return bad_request(fields);

  ModelResponder a(model_, options_.chat, options_.decode);
  std::unique_ptr<Responder> b;
  if (has_url)
    b = std::make_unique<HttpResponder>(j["external_url"].get<std::string>(),
                                        options_.external_timeout_seconds);
  else
    b = std::make_unique<ListResponder>("answers", j["answers_b"].get<std::vector<std::string>>());
  auto build = build_comparison(questions, a, *b);

  json items = json::array();
  std::lock_guard lock(judging_->mutex);
  for (auto& item : build.items) {
    item.id = "q" + std::to_string(judging_->next_item++);
    judging_->index[item.id] = judging_->items.size();
    items.push_back({{"item_id", item.id},
                     {"question", item.question},
                     {"answer_a", item.answer_a},
                     {"answer_b", item.answer_b}});
    judging_->items.push_back(std::move(item));
  }
  return reply_json(200, {{"items", items}, {"unavailable", build.unavailable}});
}

HttpResponse Service::judging_tasks(const std::string& judge_id) {
  std::lock_guard lock(judging_->mutex);
  json tasks = json::array();
  for (const auto& item : judging_->items) {
    const auto p = present(item.id, judge_id, options_.presentation_seed);
    bool voted = false;
    if (auto it = judging_->votes.find(item.id); it != judging_->votes.end())
      voted = it->second.count(judge_id) > 0;
    tasks.push_back({{"item_id", item.id},
                     {"question", item.question},
                     {"left", p.swapped ? item.answer_b : item.answer_a},
                     {"right", p.swapped ? item.answer_a : item.answer_b},
                     {"voted", voted}});
  }
  return reply_json(200, {{"judge_id", judge_id}, {"tasks", tasks}});
}

HttpResponse Service::post_votes(std::string_view body) {
  json fields = json::object();
  auto req = parse_object(body, fields);
  if (!req) return bad_request(fields);
  const json& j = *req;
  if (!j.contains("votes") || !j["votes"].is_array() || j["votes"].empty())
    return bad_request({{"votes", "required non-empty array"}});

  struct Pending {
    std::string item_id;
    std::string judge_id;
    std::optional<Choice> choice;
    std::optional<Side> side;
  };
  std::vector<Pending> batch;
  for (std::size_t i = 0; i < j["votes"].size(); ++i) {
    const auto& v = j["votes"][i];
    const std::string at = "votes[" + std::to_string(i) + "]";
    if (!v.is_object()) {
      fields[at] = "expected an object";
      continue;
    }
    Pending p;
    if (!v.contains("item_id") || !v["item_id"].is_string())
      fields[at + ".item_id"] = "required string";
    else
      p.item_id = v["item_id"].get<std::string>();
    if (!v.contains("judge_id") || !v["judge_id"].is_string() || v["judge_id"].get<std::string>().empty())
      fields[at + ".judge_id"] = "required non-empty string";
    else
      p.judge_id = v["judge_id"].get<std::string>();
    const bool has_choice = v.contains("choice");
    const bool has_side = v.contains("side");
    if (has_choice == has_side) {
      fields[at] = "give exactly one of choice or side";
    } else if (has_choice) {
      const auto& c = v["choice"];
      if (c.is_string() && (c == "A" || c == "B" || c == "tie"))
        p.choice = parse_choice(c.get<std::string>());
      else
        fields[at + ".choice"] = "expected \"A\", \"B\" or \"tie\"";
    } else {
      const auto& s = v["side"];
      if (s == "left") p.side = Side::kLeft;
      else if (s == "right") p.side = Side::kRight;
      else if (s == "tie") p.side = Side::kTie;
      else fields[at + ".side"] = "expected \"left\", \"right\" or \"tie\"";
    }
    batch.push_back(std::move(p));
  }
  if (!fields.empty()) return bad_request(fields);

  std::lock_guard lock(judging_->mutex);
  std::map<std::string, std::set<std::string>> incoming;
  for (const auto& p : batch) {
    if (!judging_->index.count(p.item_id))
      return reply_json(404, {{"error", "unknown item"}, {"item_id", p.item_id}});
    const auto& existing = judging_->votes[p.item_id];
    auto& fresh = incoming[p.item_id];
    if (existing.count(p.judge_id) || !fresh.insert(p.judge_id).second)
      return reply_json(409, {{"error", "duplicate vote"}, {"item_id", p.item_id}, {"judge_id", p.judge_id}});
    if (existing.size() + fresh.size() > kJudgesPerItem)
      return reply_json(409, {{"error", "item already has four votes"}, {"item_id", p.item_id}});
  }
  for (const auto& p : batch) {
    const Choice c = p.choice ? *p.choice
                              : resolve_side(*p.side, present(p.item_id, p.judge_id, options_.presentation_seed).swapped);
    judging_->votes[p.item_id][p.judge_id] = c;
  }
  const auto [t, pending] = judging_->tally();
  return reply_json(200, tally_json(t, pending));
}

HttpResponse Service::tally() {
  std::lock_guard lock(judging_->mutex);
  const auto [t, pending] = judging_->tally();
  return reply_json(200, tally_json(t, pending));
}

HttpResponse Service::health() {
  return reply_json(200, {{"status", "ok"},
                          {"vocab_size", model_.config.vocab_size},
                          {"hidden_size", model_.config.hidden_size},
                          {"num_layers", model_.config.num_layers}});
}

HttpResponder::HttpResponder(std::string url, int timeout_seconds) : timeout_seconds_(timeout_seconds) {
  constexpr std::string_view scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("external responder: only http:// URLs are supported");
  const auto slash = url.find('/', scheme.size());
  origin_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (origin_.size() == scheme.size()) throw ConfigError("external responder: URL has no host");
}

std::optional<std::string> HttpResponder::respond(const std::string& question) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  client.set_write_timeout(timeout_seconds_, 0);
  auto res = client.Post(path_, json{{"question", question}}.dump(), "application/json");
  if (!res || res->status != 200) return std::nullopt;
  try {
    auto j = json::parse(res->body);
    if (!j.is_object() || !j.contains("answer") || !j["answer"].is_string()) return std::nullopt;
    return j["answer"].get<std::string>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::optional<std::string> ListResponder::respond(const std::string&) {
  if (next_ >= answers_.size()) return std::nullopt;
  return answers_[next_++];
}

std::optional<std::string> ModelResponder::respond(const std::string& question) {
  ChatSession session("compare", chat_);
  return session.respond(model_, question, decode_).text;
}

BindAddress parse_bind_address(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw ConfigError("bind address must look like host:port");
  BindAddress a;
  if (colon > 0) a.host = std::string(text.substr(0, colon));
  const std::string port(text.substr(colon + 1));
  try {
    std::size_t used = 0;
    const long p = std::stol(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::invalid_argument("range");
    a.port = static_cast<int>(p);
  } catch (const std::logic_error&) {
    throw ConfigError("bad port in bind address '" + std::string(text) + "'");
  }
  return a;
}

BindAddress resolve_bind_address(const BindAddress& fallback) {
  const char* env = std::getenv("NCM_BIND");
  if (env && *env) return parse_bind_address(env);
  return fallback;
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;
  std::mutex mutex;

  explicit Impl(Service& s) : service(s) {}
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = impl_->service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Get(".*", forward);
  svr.Post(".*", forward);
  svr.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const BindAddress& address) {
  auto& svr = impl_->server;
  int port = address.port;
  if (port == 0) {
    port = svr.bind_to_any_port(address.host);
    if (port < 0) throw Error("cannot bind " + address.host);
  } else if (!svr.bind_to_port(address.host, port)) {
    throw Error("cannot bind " + address.host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port;
}

void HttpServer::wait() {
  std::lock_guard lock(impl_->mutex);
  if (impl_->thread.joinable()) impl_->thread.join();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) {
    if (impl_->mutex.try_lock()) {
      if (impl_->thread.joinable()) impl_->thread.join();
      impl_->mutex.unlock();
    }
  }
}

}  // namespace ncm
