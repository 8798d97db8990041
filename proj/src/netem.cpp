#include "enoki/netem.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

namespace enoki::netem {

namespace {

std::pair<std::string, std::string> pair_key(const NodeId& a, const NodeId& b) {
    return a.name < b.name ? std::make_pair(a.name, b.name) : std::make_pair(b.name, a.name);
}

}  // namespace

Topology::Topology(std::vector<TopologyNode> nodes,
                   std::map<std::pair<std::string, std::string>, LinkProfile> links,
                   LinkProfile default_link)
    : nodes_(std::move(nodes)), links_(std::move(links)), default_(default_link) {}

Topology Topology::from_json(const nlohmann::json& j) {
    std::vector<TopologyNode> nodes;
    std::map<std::pair<std::string, std::string>, LinkProfile> links;
    LinkProfile def{};
    try {
        for (const auto& n : j.at("nodes")) {
            TopologyNode node;
            node.id = NodeId(n.at("id").get<std::string>());
            node.role = n.value("role", "edge");
            node.addr = n.value("addr", "");
            if (!is_token(node.id.name)) fail(ErrorKind::BadRequest, "bad node id in topology");
            nodes.push_back(std::move(node));
        }
        if (j.contains("links")) {
            for (const auto& l : j.at("links")) {
                LinkProfile p;
                p.rtt_ms = l.at("rtt_ms").get<double>();
                p.mbps = l.value("mbps", 0.0);
                links[pair_key(NodeId(l.at("a").get<std::string>()),
                               NodeId(l.at("b").get<std::string>()))] = p;
            }
        }
        if (j.contains("default")) {
            def.rtt_ms = j.at("default").value("rtt_ms", 0.0);
            def.mbps = j.at("default").value("mbps", 0.0);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::BadRequest, std::string("bad topology: ") + e.what());
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (std::size_t k = i + 1; k < nodes.size(); ++k) {
            if (nodes[i].id == nodes[k].id) fail(ErrorKind::BadRequest, "duplicate node id in topology");
        }
    }
    return Topology(std::move(nodes), std::move(links), def);
}

Topology Topology::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::NotFound, "topology file not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::BadRequest, std::string("bad topology json: ") + e.what());
    }
    return from_json(j);
}

nlohmann::json Topology::to_json() const {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& n : nodes_) {
        j["nodes"].push_back({{"id", n.id.name}, {"role", n.role}, {"addr", n.addr}});
    }
    j["links"] = nlohmann::json::array();
    for (const auto& [key, p] : links_) {
        j["links"].push_back(
            {{"a", key.first}, {"b", key.second}, {"rtt_ms", p.rtt_ms}, {"mbps", p.mbps}});
    }
    j["default"] = {{"rtt_ms", default_.rtt_ms}, {"mbps", default_.mbps}};
    return j;
}

std::optional<std::uint32_t> Topology::index_of(const NodeId& id) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].id == id) return static_cast<std::uint32_t>(i);
    }
    return std::nullopt;
}

const TopologyNode& Topology::node(std::uint32_t index) const {
    if (index >= nodes_.size()) fail(ErrorKind::BadRequest, "node index out of range");
    return nodes_[index];
}

std::optional<TopologyNode> Topology::find(const NodeId& id) const {
    const auto idx = index_of(id);
    if (!idx) return std::nullopt;
    return nodes_[*idx];
}

LinkProfile Topology::link(const NodeId& a, const NodeId& b) const {
    const auto it = links_.find(pair_key(a, b));
    return it == links_.end() ? default_ : it->second;
}

std::chrono::microseconds delivery_delay(const LinkProfile& link, std::uint64_t message_size_bytes) {
    double us = link.rtt_ms * 500.0;
    if (!link.unlimited()) {
        us += static_cast<double>(message_size_bytes) * 8.0 / (link.mbps * 1e6) * 1e6;
    }
    return std::chrono::microseconds(static_cast<std::int64_t>(us));
}

TokenBucket::TokenBucket(double bytes_per_s, double cap_bytes)
    : rate_(bytes_per_s), cap_(cap_bytes), last_(std::chrono::steady_clock::now()) {}

std::chrono::microseconds TokenBucket::acquire(std::uint64_t bytes) {
    if (rate_ <= 0.0) return std::chrono::microseconds(0);
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(cap_, tokens_ + elapsed * rate_);
    last_ = now;
    const double need = static_cast<double>(bytes);
    if (tokens_ >= need) {
        tokens_ -= need;
        return std::chrono::microseconds(0);
    }
    const double deficit = need - tokens_;
    tokens_ = 0.0;
    const double wait_s = deficit / rate_;
    // Advance the refill cursor past the wait so the deficit is not repaid twice.
    last_ = now + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(wait_s));
    return std::chrono::microseconds(static_cast<std::int64_t>(wait_s * 1e6));
}

Shaper::Shaper() = default;

Shaper::Shaper(std::shared_ptr<const Topology> topo, std::uint32_t self_index)
    : topo_(std::move(topo)), self_(self_index) {
    if (topo_ == nullptr || self_ >= topo_->nodes().size()) {
        fail(ErrorKind::BadRequest, "shaper self index out of range");
    }
}

std::chrono::microseconds Shaper::inbound_hold(std::uint32_t sender_index,
                                               std::uint64_t wire_bytes) {
    if (topo_ == nullptr || self_ == kControlSender || sender_index == kControlSender ||
        sender_index >= topo_->nodes().size() || sender_index == self_) {
        return std::chrono::microseconds(0);
    }
    const auto link = topo_->link(topo_->node(sender_index).id, topo_->node(self_).id);
    auto hold = link.one_way();
    if (!link.unlimited()) {
        TokenBucket* bucket = nullptr;
        {
            std::lock_guard lock(mu_);
            auto& slot = buckets_[sender_index];
            if (!slot) slot = std::make_unique<TokenBucket>(link.bytes_per_s());
            bucket = slot.get();
        }
        hold += bucket->acquire(wire_bytes);
    }
    return hold;
}

std::uint32_t Shaper::self_index() const { return self_; }

}  // namespace enoki::netem
