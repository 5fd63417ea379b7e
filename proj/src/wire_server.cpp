#include "dialog_forge/wire_server.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include "dialog_forge/error.hpp"

namespace dialog_forge {

WireServer::WireServer(std::shared_ptr<AgentBackend> backend, int max_concurrent)
    : backend_(std::move(backend)), server_(std::make_unique<httplib::Server>()), max_concurrent_(max_concurrent) {
  install_routes();
}

WireServer::~WireServer() { stop(); }

void WireServer::install_routes() {
  server_->Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    if (ready_) {
      res.status = 200;
      res.set_content(R"({"status":"ok"})", "application/json");
    } else {
      res.status = 503;
      res.set_content(encode_error({"not_ready", "backend is not ready"}), "application/json");
    }
  });

  server_->Post("/invoke", [this](const httplib::Request& req, httplib::Response& res) {
    if (!ready_) {
      res.status = 503;
      res.set_content(encode_error({"not_ready", "backend is not ready"}), "application/json");
      return;
    }
    if (in_flight_.fetch_add(1) >= max_concurrent_) {
      in_flight_.fetch_sub(1);
      res.status = 503;
      res.set_content(encode_error({"busy", "concurrent request cap reached"}), "application/json");
      return;
    }
    struct Release {
      std::atomic<int>& counter;
      ~Release() { counter.fetch_sub(1); }
    } release{in_flight_};

    PromptPayload payload;
    try {
      payload = decode_request(req.body);
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(encode_error({"bad_request", e.what()}), "application/json");
      return;
    }
    try {
      const std::string text = backend_->complete(payload, InvocationContext{});
      res.status = 200;
      res.set_content(encode_response(text), "application/json");
    } catch (const Error& e) {
      const bool client_side = e.kind() == ErrorKind::UnrecognizedQuestion || e.kind() == ErrorKind::InvalidPayload;
      res.status = client_side ? 422 : 500;
      res.set_content(encode_error({std::string(to_string(e.kind())), e.what()}), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(encode_error({"internal", e.what()}), "application/json");
    }
  });
}

int WireServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error(ErrorKind::Io, fmt::format("cannot bind {}:{}", host, port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void WireServer::listen_blocking(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) throw Error(ErrorKind::Io, fmt::format("cannot listen on {}:{}", host, port));
}

void WireServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string WireServer::base_uri() const { return fmt::format("http://{}:{}", host_, port_); }

}  // namespace dialog_forge
