// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "service/session_service.hpp"

#include <random>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace diaformer::service {

using json = nlohmann::ordered_json;

namespace {

struct DialogueDeleter {
  void operator()(df_dialogue* d) const { df_dialogue_free(d); }
};

HttpResult error(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

int http_status_for(df_status s) {
  switch (s) {
    case DF_ERR_INVALID_ARGUMENT:
    case DF_ERR_PARSE: return 400;
    case DF_ERR_STATE: return 409;
    default: return 500;
  }
}

std::string take(char* s) {
  std::string out(s ? s : "");
  df_string_free(s);
  return out;
}

double unix_seconds(Clock::time_point t) {
  return std::chrono::duration<double>(t.time_since_epoch()).count();
}

}  // namespace

struct SessionService::Session {
  std::mutex mu;
  std::string id;
  std::unique_ptr<df_dialogue, DialogueDeleter> dialogue;
  json snapshot;  // last dialogue snapshot; kept after expiry
  Clock::time_point created;
  Clock::time_point updated;
  bool expired = false;

  json view() const {
    json out{{"id", id}};
    out.update(snapshot);
    if (expired) {
      out["status"] = "expired";
      out["pending_question"] = nullptr;
    }
    out["created_at"] = unix_seconds(created);
    out["updated_at"] = unix_seconds(updated);
    return out;
  }
};

SessionService::SessionService(const df_model* model, ServiceOptions options)
    : model_(model), options_(std::move(options)) {
  if (!model_) throw std::invalid_argument("session service needs a model");
}

SessionService::~SessionService() = default;

std::string SessionService::new_id() {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id(32, '0');
  for (auto& c : id) c = kHex[gen() & 15];
  return id;
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResult SessionService::create(const std::string& body) {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("explicit") || !req["explicit"].is_object()) {
    return error(400, "body must be {\"explicit\": {symptom: bool, ...}}");
  }
  for (const auto& [key, _] : req.items()) {
    if (key != "explicit") return error(400, "unknown field \"" + key + "\"");
  }
  if (req["explicit"].empty()) return error(400, "at least one explicit symptom is required");

  df_dialogue* raw = nullptr;
  const df_status st = df_dialogue_create(model_, req["explicit"].dump().c_str(),
                                          options_.inference_json.c_str(), &raw);
  if (st != DF_OK) return error(http_status_for(st), df_last_error());

  auto session = std::make_shared<Session>();
  session->dialogue.reset(raw);
  char* snap = nullptr;
  if (df_dialogue_snapshot(raw, &snap) != DF_OK) return error(500, df_last_error());
  session->snapshot = json::parse(take(snap));
  session->created = session->updated = options_.now();
  {
    std::lock_guard lock(mu_);
    do {
      session->id = new_id();
    } while (sessions_.count(session->id));
    sessions_.emplace(session->id, session);
  }
  std::lock_guard lock(session->mu);
  return {201, session->view().dump()};
}

HttpResult SessionService::answer(const std::string& id, const std::string& body) {
  const auto session = find(id);
  if (!session) return error(404, "unknown session " + id);

  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("answer") || req.size() != 1) {
    return error(400, "body must be {\"answer\": true | false | \"not_sure\"}");
  }
  std::string answer;
  const auto& a = req["answer"];
  if (a.is_boolean()) {
    answer = a.get<bool>() ? "true" : "false";
  } else if (a.is_string() && (a == "true" || a == "false" || a == "not_sure")) {
    answer = a.get<std::string>();
  } else {
    return error(400, "answer must be true, false or \"not_sure\"");
  }

  std::lock_guard lock(session->mu);
  const auto now = options_.now();
  if (!session->expired && now - session->updated > options_.ttl) {
    session->expired = true;
    session->dialogue.reset();
  }
  if (session->expired) return error(409, "session " + id + " has expired");
  const df_status st = df_dialogue_answer(session->dialogue.get(), answer.c_str());
  if (st != DF_OK) return error(http_status_for(st), df_last_error());
  char* snap = nullptr;
  if (df_dialogue_snapshot(session->dialogue.get(), &snap) != DF_OK) {
    return error(500, df_last_error());
  }
  session->snapshot = json::parse(take(snap));
  session->updated = now;
  return {200, session->view().dump()};
}

HttpResult SessionService::get(const std::string& id) {
  const auto session = find(id);
  if (!session) return error(404, "unknown session " + id);
  std::lock_guard lock(session->mu);
  if (!session->expired && options_.now() - session->updated > options_.ttl) {
    session->expired = true;
    session->dialogue.reset();
  }
  return {200, session->view().dump()};
}

HttpResult SessionService::vocab() const {
  char* out = nullptr;
  if (df_model_vocab_json(model_, &out) != DF_OK) return error(500, df_last_error());
  return {200, take(out)};
}

void SessionService::sweep() {
  const auto now = options_.now();
  std::lock_guard lock(mu_);
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    bool drop;
    {
      std::lock_guard session_lock(it->second->mu);
      drop = now - it->second->updated > 2 * options_.ttl;
    }
    it = drop ? sessions_.erase(it) : std::next(it);
  }
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

void SessionService::mount(httplib::Server& server) {
  auto reply = [](httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.Post("/sessions", [this, reply](const httplib::Request& req, httplib::Response& res) {
    sweep();
    reply(res, create(req.body));
  });
  server.Post(R"(/sessions/([^/]+)/answer)",
              [this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, answer(req.matches[1], req.body));
              });
  server.Get(R"(/sessions/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get(req.matches[1]));
  });
  server.Get("/vocab", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, vocab());
  });
}

std::pair<std::string, int> parse_bind_address(const std::string& text) {
  std::string host = "127.0.0.1";
  std::string port_text = text;
  if (const auto colon = text.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = text.substr(0, colon);
    port_text = text.substr(colon + 1);
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad bind address \"" + text + "\" (expected host:port)");
  }
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range in \"" + text + "\"");
  return {host, port};
}

}  // namespace diaformer::service
