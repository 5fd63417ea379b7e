#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dialog_forge/agent.hpp"

namespace dialog_forge {

/// Per-call identity handed to backends. Stochastic backends derive their
/// randomness from it, so a game replays identically no matter how it was
/// scheduled.
struct InvocationContext {
  std::string game_id;
  std::uint64_t seed = 0;
  std::uint32_t call_seq = 0;
};

class AgentBackend {
 public:
  virtual ~AgentBackend() = default;

  /// Raw model text. Must be safe to call concurrently.
  virtual std::string complete(const PromptPayload& payload, const InvocationContext& ctx) = 0;

  virtual bool healthy() { return true; }
  virtual std::string describe() const = 0;
};

/// A named backend plus its default sampling. Cheap to copy; copies share the backend.
class AgentEndpoint {
 public:
  AgentEndpoint() = default;
  AgentEndpoint(std::string name, std::shared_ptr<AgentBackend> backend,
                SamplingParams sampling_default = SamplingParams::generation());

  /// Throws EmptyResponse on blank text, InvalidPayload on malformed payloads,
  /// and whatever the backend raises.
  std::string invoke(const PromptPayload& payload, const InvocationContext& ctx = {}) const;

  const std::string& name() const noexcept { return name_; }
  const SamplingParams& sampling_default() const noexcept { return sampling_default_; }
  AgentBackend& backend() const { return *backend_; }
  explicit operator bool() const noexcept { return static_cast<bool>(backend_); }

 private:
  std::string name_;
  std::shared_ptr<AgentBackend> backend_;
  SamplingParams sampling_default_;
};

// ---------------------------------------------------------------------------
// Wire protocol

struct WireError {
  std::string code;
  std::string message;
  friend bool operator==(const WireError&, const WireError&) = default;
};

std::string encode_request(const PromptPayload& payload);
/// Throws InvalidPayload with the offending field named.
PromptPayload decode_request(std::string_view body);
std::string encode_response(std::string_view text);
std::string encode_error(const WireError& error);
/// Either {text} or {error:{code,message}}. Throws InvalidPayload otherwise.
std::variant<std::string, WireError> decode_response(std::string_view body);

// ---------------------------------------------------------------------------
// Remote backend

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Minimal HTTP seam so tests can observe every attempt. nullopt means the
/// connection itself failed.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::optional<HttpResponse> post(const std::string& path, const std::string& body,
                                           const std::string& bearer_token) = 0;
  virtual std::optional<HttpResponse> get(const std::string& path) = 0;
};

struct RemoteConfig {
  std::string base_uri;
  std::string auth_env;  // name of the env var holding a bearer token; empty for none
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  double rate_limit_per_sec = 0.0;  // 0 disables limiting
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds max_backoff{10000};
};

/// cpp-httplib client; one connection per call so it is trivially thread-safe.
std::shared_ptr<Transport> make_http_transport(const std::string& base_uri,
                                               std::chrono::milliseconds timeout);

/// Spaces request starts at least 1/rate apart; shared by all callers of one endpoint.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second) : per_second_(per_second) {}
  void acquire();

 private:
  double per_second_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

class RemoteBackend final : public AgentBackend {
 public:
  explicit RemoteBackend(RemoteConfig config, std::shared_ptr<Transport> transport = nullptr);

  /// At most 1 + max_retries attempts. Connection failures, 408, 429 and 5xx
  /// are retried with exponential backoff; other 4xx fail immediately.
  std::string complete(const PromptPayload& payload, const InvocationContext& ctx) override;
  bool healthy() override;
  std::string describe() const override { return "remote:" + config_.base_uri; }

  const RemoteConfig& config() const noexcept { return config_; }

 private:
  RemoteConfig config_;
  std::shared_ptr<Transport> transport_;
  RateLimiter limiter_;
};

// ---------------------------------------------------------------------------
// Scripted and callback backends

/// Replays canned responses in order. With per-game scripts each game id has
/// its own queue, which keeps concurrent runs deterministic.
class ScriptedBackend final : public AgentBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> script);
  explicit ScriptedBackend(std::map<std::string, std::vector<std::string>> per_game);

  std::string complete(const PromptPayload& payload, const InvocationContext& ctx) override;
  std::string describe() const override { return "scripted"; }

  /// Accepts a JSON array (global queue) or an object of game id -> array.
  static std::shared_ptr<ScriptedBackend> from_json_file(const std::string& path);

 private:
  std::mutex mutex_;
  std::vector<std::string> global_;
  std::size_t global_next_ = 0;
  std::map<std::string, std::vector<std::string>> per_game_;
  std::map<std::string, std::size_t> cursors_;
};

class CallbackBackend final : public AgentBackend {
 public:
  using Fn = std::function<std::string(const PromptPayload&, const InvocationContext&)>;
  explicit CallbackBackend(Fn fn, std::string label = "callback")
      : fn_(std::move(fn)), label_(std::move(label)) {}

  std::string complete(const PromptPayload& payload, const InvocationContext& ctx) override {
    return fn_(payload, ctx);
  }
  std::string describe() const override { return label_; }

 private:
  Fn fn_;
  std::string label_;
};

}  // namespace dialog_forge
