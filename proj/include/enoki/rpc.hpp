#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "enoki/core.hpp"
#include "enoki/netem.hpp"

namespace enoki::rpc {

/// One message: a JSON control body plus an optional raw binary section
/// for bulk values, so shaped wire bytes track payload bytes.
///
/// Wire layout, all integers big-endian:
///   [4B payload_len][4B sender_index][4B json_len][json][bin]
/// payload_len = 4 + json_len + bin_len.
struct Frame {
    nlohmann::json body;
    std::string bin;

    Frame() = default;
    explicit Frame(nlohmann::json b, std::string binary = {})
        : body(std::move(b)), bin(std::move(binary)) {}

    std::string type() const { return body.value("type", ""); }
};

Frame make_error(ErrorKind kind, const std::string& detail);
bool is_error(const Frame& f);
/// Re-raises an Err frame as an EnokiError; no-op otherwise.
void throw_if_error(const Frame& f);

/// Synchronous client connection; one outstanding request at a time.
/// Responses are shaped on receipt against the responder's identity.
class Connection {
public:
    static Connection dial(const std::string& addr, netem::Shaper& shaper);  // Unavailable

    Connection(Connection&&) noexcept;
    Connection& operator=(Connection&&) noexcept;
    ~Connection();

    Frame call(const Frame& request);  // Unavailable on transport failure
    bool alive() const { return fd_ >= 0; }
    void close();

private:
    Connection(int fd, netem::Shaper* shaper) : fd_(fd), shaper_(shaper) {}
    int fd_ = -1;
    netem::Shaper* shaper_ = nullptr;
};

/// Small reuse pool of connections to one address.
class ConnectionPool {
public:
    ConnectionPool(std::string addr, netem::Shaper& shaper)
        : addr_(std::move(addr)), shaper_(&shaper) {}

    Frame call(const Frame& request);  // lease-or-dial, return on success
    const std::string& addr() const { return addr_; }

private:
    std::string addr_;
    netem::Shaper* shaper_;
    std::mutex mu_;
    std::vector<Connection> idle_;
};

using Handler = std::function<Frame(const Frame& request, std::uint32_t sender_index)>;

/// Thread-per-connection server. Each inbound frame is held for the netem
/// delay of its declared sender before the handler runs; replies carry this
/// process's own identity so the peer shapes them symmetrically.
class Server {
public:
    Server(const std::string& addr, netem::Shaper& shaper, Handler handler);  // Unavailable on bind
    ~Server();

    void stop();
    std::uint16_t port() const { return port_; }

private:
    void accept_loop();
    void serve(int fd);

    netem::Shaper* shaper_;
    Handler handler_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex conns_mu_;
    std::vector<int> conn_fds_;
    std::vector<std::thread> conn_threads_;
};

}  // namespace enoki::rpc
