#pragma once

// WebSocket transport for live sessions: one console at a time, text frames
// carrying one JSON message each.

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "daggerlab/bridge.hpp"

namespace daggerlab {

class WebSocketServer final : public Channel {
public:
    /// Binds immediately; port 0 picks a free port.
    explicit WebSocketServer(std::uint16_t port, const std::string& address = "127.0.0.1");
    ~WebSocketServer() override;

    std::uint16_t port() const;

    /// Blocks until a console completes the handshake. False on timeout.
    bool accept(std::chrono::milliseconds timeout);

    void send(const nlohmann::json& message) override;
    std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout) override;
    bool await_reconnect(std::chrono::milliseconds timeout) override;
    void close() override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Client side, used by tests and the headless console.
class WebSocketClient final : public Channel {
public:
    WebSocketClient(const std::string& host, std::uint16_t port);
    ~WebSocketClient() override;

    void send(const nlohmann::json& message) override;
    std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout) override;
    void close() override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace daggerlab
