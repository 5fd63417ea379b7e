#include "dialog_forge/backends.hpp"

#include <cstdlib>
#include <fstream>
#include <cmath>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "dialog_forge/error.hpp"
#include "dialog_forge/rng.hpp"

namespace dialog_forge {

using ordered_json = nlohmann::ordered_json;

AgentEndpoint::AgentEndpoint(std::string name, std::shared_ptr<AgentBackend> backend,
                             SamplingParams sampling_default)
    : name_(std::move(name)), backend_(std::move(backend)), sampling_default_(sampling_default) {}

std::string AgentEndpoint::invoke(const PromptPayload& payload, const InvocationContext& ctx) const {
  if (!backend_) throw Error(ErrorKind::InvalidPayload, "endpoint has no backend");
  if (payload.text.empty()) throw Error(ErrorKind::InvalidPayload, "empty prompt text");
  if (!payload.sampling.valid()) throw Error(ErrorKind::InvalidPayload, "sampling out of range");
  std::string out = backend_->complete(payload, ctx);
  if (text::trim(out).empty()) {
    throw Error(ErrorKind::EmptyResponse, fmt::format("{} returned blank text", name_));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wire codec

std::string encode_request(const PromptPayload& payload) {
  ordered_json images = ordered_json::array();
  for (const auto& image : payload.images) {
    if (const auto* inl = std::get_if<InlineImage>(&image)) {
      images.push_back(ordered_json{{"b64", inl->b64}, {"media_type", inl->media_type}});
    } else {
      images.push_back(ordered_json{{"uri", std::get<UriImage>(image).uri}});
    }
  }
  ordered_json j;
  j["role"] = role_name(payload.role);
  j["text"] = payload.text;
  j["images"] = std::move(images);
  j["sampling"] = ordered_json{{"top_p", payload.sampling.top_p},
                               {"temperature", payload.sampling.temperature}};
  return j.dump();
}

PromptPayload decode_request(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::InvalidPayload, "body is not a JSON object");
  auto require = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw Error(ErrorKind::InvalidPayload, fmt::format("missing field `{}`", key));
    return j.at(key);
  };
  PromptPayload p;
  const auto& role = require("role");
  const auto parsed_role = role.is_string() ? parse_role(role.get<std::string>()) : std::nullopt;
  if (!parsed_role) throw Error(ErrorKind::InvalidPayload, "unknown `role`");
  p.role = *parsed_role;
  const auto& text = require("text");
  if (!text.is_string()) throw Error(ErrorKind::InvalidPayload, "`text` must be a string");
  p.text = text.get<std::string>();
  if (j.contains("images")) {
    if (!j["images"].is_array()) throw Error(ErrorKind::InvalidPayload, "`images` must be an array");
    for (const auto& img : j["images"]) {
      if (img.contains("uri") && img["uri"].is_string()) {
        p.images.emplace_back(UriImage{img["uri"].get<std::string>()});
      } else if (img.contains("b64") && img["b64"].is_string() && img.contains("media_type") &&
                 img["media_type"].is_string()) {
        p.images.emplace_back(InlineImage{img["b64"].get<std::string>(), img["media_type"].get<std::string>()});
      } else {
        throw Error(ErrorKind::InvalidPayload, "image needs {uri} or {b64, media_type}");
      }
    }
  }
  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    if (!s.is_object()) throw Error(ErrorKind::InvalidPayload, "`sampling` must be an object");
    if (s.contains("top_p")) p.sampling.top_p = s["top_p"].get<double>();
    if (s.contains("temperature")) p.sampling.temperature = s["temperature"].get<double>();
  }
  if (!p.sampling.valid()) throw Error(ErrorKind::InvalidPayload, "`sampling` out of range");
  return p;
}

std::string encode_response(std::string_view text) {
  ordered_json j;
  j["text"] = text;
  return j.dump();
}

std::string encode_error(const WireError& error) {
  ordered_json j;
  j["error"] = ordered_json{{"code", error.code}, {"message", error.message}};
  return j.dump();
}

std::variant<std::string, WireError> decode_response(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::InvalidPayload, "response is not a JSON object");
  if (j.contains("error")) {
    const auto& e = j["error"];
    if (!e.is_object()) throw Error(ErrorKind::InvalidPayload, "`error` must be an object");
    return WireError{e.value("code", std::string("unknown")), e.value("message", std::string())};
  }
  if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
  throw Error(ErrorKind::InvalidPayload, "response has neither `text` nor `error`");
}

// ---------------------------------------------------------------------------
// HTTP transport

namespace {

class HttplibTransport final : public Transport {
 public:
  HttplibTransport(std::string base_uri, std::chrono::milliseconds timeout)
      : timeout_(timeout) {
    // Split "http://host:port/prefix" into the client origin and a path prefix.
    const auto scheme = base_uri.find("://");
    const auto path_start = base_uri.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
      origin_ = base_uri;
    } else {
      origin_ = base_uri.substr(0, path_start);
      prefix_ = base_uri.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
  }

  std::optional<HttpResponse> post(const std::string& path, const std::string& body,
                                   const std::string& bearer_token) override {
    httplib::Client client(origin_);
    configure(client);
    httplib::Headers headers;
    if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
    auto res = client.Post(prefix_ + path, headers, body, "application/json");
    if (!res) return std::nullopt;
    return HttpResponse{res->status, res->body};
  }

  std::optional<HttpResponse> get(const std::string& path) override {
    httplib::Client client(origin_);
    configure(client);
    auto res = client.Get(prefix_ + path);
    if (!res) return std::nullopt;
    return HttpResponse{res->status, res->body};
  }

 private:
  void configure(httplib::Client& client) const {
    const auto secs = timeout_.count() / 1000;
    const auto usecs = (timeout_.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
  }

  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
};

bool is_transient(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

std::shared_ptr<Transport> make_http_transport(const std::string& base_uri,
                                               std::chrono::milliseconds timeout) {
  return std::make_shared<HttplibTransport>(base_uri, timeout);
}

void RateLimiter::acquire() {
  if (per_second_ <= 0.0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / per_second_));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

RemoteBackend::RemoteBackend(RemoteConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(transport ? std::move(transport) : make_http_transport(config_.base_uri, config_.timeout)),
      limiter_(config_.rate_limit_per_sec) {
  if (config_.timeout.count() <= 0) throw Error(ErrorKind::InvalidConfig, "remote timeout must be positive");
  if (config_.max_retries < 0) throw Error(ErrorKind::InvalidConfig, "max_retries must be >= 0");
}

std::string RemoteBackend::complete(const PromptPayload& payload, const InvocationContext& ctx) {
  const std::string body = encode_request(payload);
  std::string token;
  if (!config_.auth_env.empty()) {
    if (const char* value = std::getenv(config_.auth_env.c_str())) token = value;
  }
  Rng jitter(hash_combine(ctx.seed, ctx.call_seq));
  std::string last_failure = "no attempt made";
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double base = static_cast<double>(config_.initial_backoff.count()) * std::pow(2.0, attempt - 1);
      const double capped = std::min(base, static_cast<double>(config_.max_backoff.count()));
      const auto delay = std::chrono::duration<double, std::milli>(capped * (0.5 + 0.5 * jitter.uniform01()));
      std::this_thread::sleep_for(delay);
    }
    limiter_.acquire();
    const auto res = transport_->post("/invoke", body, token);
    if (!res) {
      last_failure = "connection failed";
      continue;
    }
    if (res->status == 200) {
      auto decoded = decode_response(res->body);
      if (auto* text = std::get_if<std::string>(&decoded)) return std::move(*text);
      const auto& err = std::get<WireError>(decoded);
      throw Error(ErrorKind::RemoteRejected, fmt::format("{}: {}", err.code, err.message));
    }
    std::string detail = res->body;
    try {
      if (auto decoded = decode_response(res->body); std::holds_alternative<WireError>(decoded)) {
        const auto& err = std::get<WireError>(decoded);
        detail = fmt::format("{}: {}", err.code, err.message);
      }
    } catch (const Error&) {
    }
    if (!is_transient(res->status)) {
      throw Error(ErrorKind::RemoteRejected, fmt::format("HTTP {} ({})", res->status, detail));
    }
    last_failure = fmt::format("HTTP {} ({})", res->status, detail);
  }
  throw Error(ErrorKind::RemoteUnavailable,
              fmt::format("{} after {} attempts: {}", config_.base_uri, config_.max_retries + 1, last_failure));
}

bool RemoteBackend::healthy() {
  const auto res = transport_->get("/healthz");
  return res && res->status == 200;
}

// ---------------------------------------------------------------------------
// Scripted

ScriptedBackend::ScriptedBackend(std::vector<std::string> script) : global_(std::move(script)) {}

ScriptedBackend::ScriptedBackend(std::map<std::string, std::vector<std::string>> per_game)
    : per_game_(std::move(per_game)) {}

std::string ScriptedBackend::complete(const PromptPayload&, const InvocationContext& ctx) {
  std::lock_guard lock(mutex_);
  if (!per_game_.empty()) {
    auto it = per_game_.find(ctx.game_id);
    auto& cursor = cursors_[ctx.game_id];
    if (it == per_game_.end() || cursor >= it->second.size()) {
      throw Error(ErrorKind::ScriptExhausted, fmt::format("no scripted response left for `{}`", ctx.game_id));
    }
    return it->second[cursor++];
  }
  if (global_next_ >= global_.size()) throw Error(ErrorKind::ScriptExhausted, "script exhausted");
  return global_[global_next_++];
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open script " + path);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_array()) return std::make_shared<ScriptedBackend>(j.get<std::vector<std::string>>());
  if (j.is_object()) {
    return std::make_shared<ScriptedBackend>(j.get<std::map<std::string, std::vector<std::string>>>());
  }
  throw Error(ErrorKind::ParseError, "script must be an array or an object of arrays: " + path);
}

}  // namespace dialog_forge
