#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <doctest.h>

#include "dialog_forge/backends.hpp"
#include "dialog_forge/corpus.hpp"
#include "dialog_forge/error.hpp"

namespace test_support {

namespace fs = std::filesystem;
namespace df = dialog_forge;

inline fs::path fixture(const std::string& rel) { return fs::path(DF_FIXTURE_DIR) / rel; }

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in, "cannot read " << path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& path, const std::string& body) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << body;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "dftest-XXXXXX").string();
    REQUIRE(::mkdtemp(tmpl.data()) != nullptr);
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

/// Wraps a backend, recording every payload and the peak number of calls in flight.
class RecordingBackend final : public df::AgentBackend {
 public:
  explicit RecordingBackend(std::shared_ptr<df::AgentBackend> inner, std::chrono::microseconds hold = {})
      : inner_(std::move(inner)), hold_(hold) {}

  std::string complete(const df::PromptPayload& payload, const df::InvocationContext& ctx) override {
    const int now = ++in_flight_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    {
      std::lock_guard lock(mutex_);
      payloads_.push_back(payload);
      contexts_.push_back(ctx);
    }
    if (hold_.count() > 0) std::this_thread::sleep_for(hold_);
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { --n; }
    } leave{in_flight_};
    return inner_->complete(payload, ctx);
  }
  std::string describe() const override { return inner_->describe(); }

  int peak() const { return peak_.load(); }
  std::vector<df::PromptPayload> payloads() const {
    std::lock_guard lock(mutex_);
    return payloads_;
  }
  std::vector<df::InvocationContext> contexts() const {
    std::lock_guard lock(mutex_);
    return contexts_;
  }

 private:
  std::shared_ptr<df::AgentBackend> inner_;
  std::chrono::microseconds hold_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
  mutable std::mutex mutex_;
  std::vector<df::PromptPayload> payloads_;
  std::vector<df::InvocationContext> contexts_;
};

inline df::AgentEndpoint endpoint(std::shared_ptr<df::AgentBackend> backend, std::string name = "test") {
  return df::AgentEndpoint(std::move(name), std::move(backend));
}

inline df::AgentEndpoint scripted(std::vector<std::string> script, std::string name = "scripted") {
  return endpoint(std::make_shared<df::ScriptedBackend>(std::move(script)), std::move(name));
}

inline df::AgentEndpoint callback(df::CallbackBackend::Fn fn, std::string name = "callback") {
  return endpoint(std::make_shared<df::CallbackBackend>(std::move(fn), name), name);
}

/// Plain corpus of `n` images img-1..img-n with file:// content refs.
inline df::Corpus plain_corpus(int n, const std::string& id = "plain") {
  std::vector<df::ImageRecord> records;
  for (int i = 1; i <= n; ++i) {
    df::ImageRecord r;
    r.image_id = "img-" + std::to_string(i);
    r.content_ref = "file://images/img-" + std::to_string(i) + ".png";
    records.push_back(std::move(r));
  }
  return df::Corpus(id, std::move(records));
}

/// Synthetic-world record with a `synth://<id>` content ref.
inline df::ImageRecord attr_record(const std::string& id, const std::string& background, const std::string& object,
                                   const std::string& shape, int count) {
  df::ImageRecord r;
  r.image_id = id;
  r.content_ref = "synth://" + id;
  r.attributes = {{"background_color", background}, {"object_color", object}, {"shape", shape},
                  {"count", std::to_string(count)}};
  return r;
}

template <typename Fn>
df::ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const df::Error& e) {
    return e.kind();
  }
  FAIL("expected a dialog_forge::Error");
  return df::ErrorKind::Io;
}

}  // namespace test_support
