#include "enoki/rpc.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include "enoki/log.hpp"
#include "enoki/util.hpp"

namespace enoki::rpc {

namespace {

constexpr std::uint64_t kMaxPayload = 256ull * 1024 * 1024;

void put_u32(std::string& out, std::uint32_t v) {
    out += static_cast<char>((v >> 24) & 0xff);
    out += static_cast<char>((v >> 16) & 0xff);
    out += static_cast<char>((v >> 8) & 0xff);
    out += static_cast<char>(v & 0xff);
}

std::uint32_t get_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

bool write_all(int fd, const char* data, std::size_t len) {
    while (len > 0) {
        const auto n = ::send(fd, data, len, MSG_NOSIGNAL);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        data += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

bool read_exact(int fd, char* data, std::size_t len) {
    while (len > 0) {
        const auto n = ::recv(fd, data, len, 0);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        data += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

struct RawFrame {
    std::uint32_t sender = netem::kControlSender;
    std::string json_text;
    std::string bin;
    std::uint64_t wire_bytes = 0;
};

bool read_raw_frame(int fd, RawFrame& out) {
    unsigned char header[8];
    if (!read_exact(fd, reinterpret_cast<char*>(header), sizeof(header))) return false;
    const std::uint64_t payload_len = get_u32(header);
    out.sender = get_u32(header + 4);
    if (payload_len < 4 || payload_len > kMaxPayload) return false;
    std::string payload(payload_len, '\0');
    if (!read_exact(fd, payload.data(), payload.size())) return false;
    const std::uint32_t json_len = get_u32(reinterpret_cast<const unsigned char*>(payload.data()));
    if (json_len > payload_len - 4) return false;
    out.json_text.assign(payload, 4, json_len);
    out.bin.assign(payload, 4 + json_len, payload_len - 4 - json_len);
    out.wire_bytes = payload_len + 8;
    return true;
}

bool write_frame(int fd, const Frame& frame, std::uint32_t sender) {
    const std::string json_text = frame.body.dump();
    std::string buf;
    buf.reserve(12 + json_text.size() + frame.bin.size());
    put_u32(buf, static_cast<std::uint32_t>(4 + json_text.size() + frame.bin.size()));
    put_u32(buf, sender);
    put_u32(buf, static_cast<std::uint32_t>(json_text.size()));
    buf += json_text;
    buf += frame.bin;
    return write_all(fd, buf.data(), buf.size());
}

int dial_fd(const std::string& addr) {
    const auto hp = util::split_host_port(addr);
    if (!hp) fail(ErrorKind::BadRequest, "bad address: " + addr);
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) fail(ErrorKind::Unavailable, "socket: " + std::string(strerror(errno)));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(hp->second);
    if (::inet_pton(AF_INET, hp->first.c_str(), &sa.sin_addr) != 1) {
        ::close(fd);
        fail(ErrorKind::BadRequest, "bad host: " + hp->first);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
        ::close(fd);
        fail(ErrorKind::Unavailable, "connect " + addr + ": " + strerror(errno));
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

}  // namespace

Frame make_error(ErrorKind kind, const std::string& detail) {
    return Frame({{"type", "Err"}, {"kind", to_string(kind)}, {"detail", detail}});
}

bool is_error(const Frame& f) { return f.type() == "Err"; }

void throw_if_error(const Frame& f) {
    if (!is_error(f)) return;
    const auto kind = parse_error_kind(f.body.value("kind", "Internal"));
    fail(kind.value_or(ErrorKind::Internal), f.body.value("detail", ""));
}

Connection Connection::dial(const std::string& addr, netem::Shaper& shaper) {
    return Connection(dial_fd(addr), &shaper);
}

Connection::Connection(Connection&& other) noexcept : fd_(other.fd_), shaper_(other.shaper_) {
    other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        shaper_ = other.shaper_;
        other.fd_ = -1;
    }
    return *this;
}

Connection::~Connection() { close(); }

void Connection::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Frame Connection::call(const Frame& request) {
    if (fd_ < 0) fail(ErrorKind::Unavailable, "connection closed");
    if (!write_frame(fd_, request, shaper_->self_index())) {
        close();
        fail(ErrorKind::Unavailable, "send failed");
    }
    RawFrame raw;
    if (!read_raw_frame(fd_, raw)) {
        close();
        fail(ErrorKind::Unavailable, "connection dropped");
    }
    const auto arrival = std::chrono::steady_clock::now();
    const auto hold = shaper_->inbound_hold(raw.sender, raw.wire_bytes);
    if (hold.count() > 0) std::this_thread::sleep_until(arrival + hold);
    Frame resp;
    try {
        resp.body = nlohmann::json::parse(raw.json_text);
    } catch (const nlohmann::json::exception&) {
        close();
        fail(ErrorKind::Internal, "malformed response json");
    }
    resp.bin = std::move(raw.bin);
    return resp;
}

Frame ConnectionPool::call(const Frame& request) {
    Connection conn = [&] {
        std::lock_guard lock(mu_);
        if (!idle_.empty()) {
            Connection c = std::move(idle_.back());
            idle_.pop_back();
            return c;
        }
        return Connection(Connection::dial(addr_, *shaper_));
    }();
    Frame resp = conn.call(request);  // drops the connection on throw
    {
        std::lock_guard lock(mu_);
        if (idle_.size() < 128) {
            idle_.push_back(std::move(conn));
        }
    }
    return resp;
}

Server::Server(const std::string& addr, netem::Shaper& shaper, Handler handler)
    : shaper_(&shaper), handler_(std::move(handler)) {
    const auto hp = util::split_host_port(addr);
    if (!hp) fail(ErrorKind::BadRequest, "bad listen address: " + addr);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) fail(ErrorKind::Unavailable, "socket: " + std::string(strerror(errno)));
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(hp->second);
    if (::inet_pton(AF_INET, hp->first.c_str(), &sa.sin_addr) != 1) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        fail(ErrorKind::BadRequest, "bad host: " + hp->first);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 ||
        ::listen(listen_fd_, 256) != 0) {
        const std::string err = strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        fail(ErrorKind::Unavailable, "bind " + addr + ": " + err);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
}

Server::~Server() { stop(); }

void Server::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    {
        std::lock_guard lock(conns_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : conn_threads_) {
        if (t.joinable()) t.join();
    }
}

void Server::accept_loop() {
    while (!stopping_.load()) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (stopping_.load()) break;
            if (errno == EINTR) continue;
            break;
        }
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        std::lock_guard lock(conns_mu_);
        conn_fds_.push_back(fd);
        conn_threads_.emplace_back([this, fd] { serve(fd); });
    }
}

void Server::serve(int fd) {
    RawFrame raw;
    while (!stopping_.load() && read_raw_frame(fd, raw)) {
        const auto arrival = std::chrono::steady_clock::now();
        const auto hold = shaper_->inbound_hold(raw.sender, raw.wire_bytes);
        if (hold.count() > 0) std::this_thread::sleep_until(arrival + hold);
        Frame resp;
        try {
            Frame req;
            req.body = nlohmann::json::parse(raw.json_text);
            req.bin = std::move(raw.bin);
            resp = handler_(req, raw.sender);
        } catch (const nlohmann::json::exception& e) {
            resp = make_error(ErrorKind::BadRequest, std::string("malformed frame: ") + e.what());
        } catch (const EnokiError& e) {
            resp = make_error(e.kind(), e.what());
        } catch (const std::exception& e) {
            resp = make_error(ErrorKind::Internal, e.what());
        }
        if (!write_frame(fd, resp, shaper_->self_index())) break;
    }
    ::close(fd);
}

}  // namespace enoki::rpc
