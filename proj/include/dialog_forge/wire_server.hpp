#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "dialog_forge/backends.hpp"

namespace httplib {
class Server;
}

namespace dialog_forge {

/// Serves any in-process backend over the agent wire protocol:
/// POST /invoke and GET /healthz. Used to run the synthetic oracle
/// cross-process and by the protocol tests.
class WireServer {
 public:
  explicit WireServer(std::shared_ptr<AgentBackend> backend, int max_concurrent = 16);
  ~WireServer();

  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;

  /// Binds and starts serving on a background thread; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void listen_blocking(const std::string& host, int port);
  void stop();

  void set_ready(bool ready) noexcept { ready_ = ready; }
  std::string base_uri() const;

 private:
  void install_routes();

  std::shared_ptr<AgentBackend> backend_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> ready_{true};
  std::atomic<int> in_flight_{0};
  int max_concurrent_;
  std::string host_ = "127.0.0.1";
  int port_ = 0;
};

}  // namespace dialog_forge
