#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "enoki/core.hpp"
#include "enoki/netem.hpp"
#include "enoki/rpc.hpp"

namespace enoki::naming {

struct NodeRecord {
    NodeId id;
    std::string address;
    Timestamp last_heartbeat = 0;
};

struct KeygroupRecord {
    std::string name;
    std::vector<NodeId> replicas;  // registration order, no duplicates
};

/// Control-plane registry: node addresses and keygroup replica sets.
/// Linearizable under a single mutex; never on the data path.
class Service {
public:
    void register_node(const NodeId& id, const std::string& address);  // BadRequest
    std::optional<NodeRecord> lookup_node(const NodeId& id) const;

    KeygroupRecord create_keygroup(const std::string& name, const NodeId& first_replica);
    KeygroupRecord add_replica(const std::string& name, const NodeId& node);  // idempotent
    std::optional<KeygroupRecord> lookup_keygroup(const std::string& name) const;

    void count_request(const std::string& type);
    std::map<std::string, std::uint64_t> request_counts() const;

private:
    mutable std::mutex mu_;
    std::map<NodeId, NodeRecord> nodes_;
    std::map<std::string, KeygroupRecord> keygroups_;
    std::map<std::string, std::uint64_t> counts_;
};

/// RPC front for a Service. Control-plane traffic is unshaped.
class Server {
public:
    explicit Server(const std::string& listen_addr);
    void stop();
    std::uint16_t port() const { return rpc_->port(); }
    Service& service() { return service_; }

private:
    rpc::Frame dispatch(const rpc::Frame& req);

    Service service_;
    netem::Shaper shaper_;  // identity-less: no shaping
    std::unique_ptr<rpc::Server> rpc_;
};

class Client {
public:
    Client(std::string addr, netem::Shaper& shaper);

    void register_node(const NodeId& id, const std::string& address);
    std::optional<NodeRecord> lookup_node(const NodeId& id);
    KeygroupRecord create_keygroup(const std::string& name, const NodeId& first_replica);
    KeygroupRecord add_replica(const std::string& name, const NodeId& node);
    std::optional<KeygroupRecord> lookup_keygroup(const std::string& name);
    std::map<std::string, std::uint64_t> request_counts();

private:
    rpc::Frame call(rpc::Frame req);

    rpc::ConnectionPool pool_;
};

}  // namespace enoki::naming
