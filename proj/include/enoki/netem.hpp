#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enoki/core.hpp"

namespace enoki::netem {

/// Symmetric link: applies to both directions; one-way delay is rtt/2.
struct LinkProfile {
    double rtt_ms = 0.0;
    double mbps = 0.0;  // 0 = unlimited

    std::chrono::microseconds one_way() const {
        return std::chrono::microseconds(static_cast<std::int64_t>(rtt_ms * 500.0));
    }
    bool unlimited() const { return mbps <= 0.0; }
    double bytes_per_s() const { return mbps * 1e6 / 8.0; }
};

struct TopologyNode {
    NodeId id;
    std::string role;  // client | edge | cloud
    std::string addr;  // RPC address
};

class Topology {
public:
    Topology() = default;
    Topology(std::vector<TopologyNode> nodes,
             std::map<std::pair<std::string, std::string>, LinkProfile> links,
             LinkProfile default_link);

    static Topology from_json(const nlohmann::json& j);  // BadRequest on bad shape
    static Topology load(const std::string& path);       // BadRequest / NotFound
    nlohmann::json to_json() const;

    const std::vector<TopologyNode>& nodes() const { return nodes_; }
    std::optional<std::uint32_t> index_of(const NodeId& id) const;
    const TopologyNode& node(std::uint32_t index) const;  // BadRequest when out of range
    std::optional<TopologyNode> find(const NodeId& id) const;

    /// Profile for the (a, b) pair, falling back to the default link.
    LinkProfile link(const NodeId& a, const NodeId& b) const;

private:
    std::vector<TopologyNode> nodes_;
    std::map<std::pair<std::string, std::string>, LinkProfile> links_;  // key: minmax(a,b)
    LinkProfile default_;
};

/// Single-frame delivery model: propagation plus serialization.
/// Live traffic additionally shares the per-direction token bucket.
std::chrono::microseconds delivery_delay(const LinkProfile& link, std::uint64_t message_size_bytes);

/// Sequential-cursor token bucket. Starts empty, so a capped direction can
/// never deliver more than rate * elapsed bytes.
class TokenBucket {
public:
    explicit TokenBucket(double bytes_per_s, double cap_bytes = 64.0 * 1024.0);

    /// How long the caller must hold the frame before delivering it.
    std::chrono::microseconds acquire(std::uint64_t bytes);

private:
    std::mutex mu_;
    double rate_;
    double cap_;
    double tokens_ = 0.0;
    std::chrono::steady_clock::time_point last_;
};

/// Frames stamped with this sender index bypass shaping (control plane:
/// naming service, CLI clients).
constexpr std::uint32_t kControlSender = 0xffffffffu;

/// Per-process inbound shaping, keyed by the declared sender in the frame
/// header. One token bucket per inbound direction.
class Shaper {
public:
    /// Unshaped shaper for processes without a topology identity.
    Shaper();
    Shaper(std::shared_ptr<const Topology> topo, std::uint32_t self_index);

    /// Delay before an inbound frame from `sender_index` may be handed to
    /// the application. Control / unknown senders pass through unshaped.
    std::chrono::microseconds inbound_hold(std::uint32_t sender_index, std::uint64_t wire_bytes);

    std::uint32_t self_index() const;  // kControlSender when unshaped
    const Topology* topology() const { return topo_.get(); }

private:
    std::shared_ptr<const Topology> topo_;
    std::uint32_t self_ = kControlSender;
    std::mutex mu_;
    std::map<std::uint32_t, std::unique_ptr<TokenBucket>> buckets_;  // by sender index
};

}  // namespace enoki::netem
