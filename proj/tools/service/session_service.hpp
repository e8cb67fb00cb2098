// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP session service over the C API. One loaded model per process, shared
// read-only by all sessions; each session is mutated under its own lock.

#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "diaformer/diaformer.h"

namespace httplib {
class Server;
}

namespace diaformer::service {

using Clock = std::chrono::system_clock;

struct ServiceOptions {
  std::chrono::seconds ttl{30 * 60};
  /// Inference settings applied to every session (rho_e, rho_p, max_turns).
  std::string inference_json = "{}";
  /// Overridable for tests.
  std::function<Clock::time_point()> now = [] { return Clock::now(); };
};

struct HttpResult {
  int status = 200;
  std::string body;  // JSON
};

class SessionService {
 public:
  /// `model` must outlive the service.
  SessionService(const df_model* model, ServiceOptions options);
  ~SessionService();
  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  HttpResult create(const std::string& body);
  HttpResult answer(const std::string& id, const std::string& body);
  HttpResult get(const std::string& id);
  HttpResult vocab() const;

  /// Drops sessions that have been expired for longer than the TTL.
  void sweep();
  std::size_t session_count() const;

  /// Registers the routes on `server`.
  void mount(httplib::Server& server);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();

  const df_model* model_;
  ServiceOptions options_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
};

/// Parses "host:port" (or ":port", or "port"). Throws std::invalid_argument.
std::pair<std::string, int> parse_bind_address(const std::string& text);

}  // namespace diaformer::service
