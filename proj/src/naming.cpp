#include "enoki/naming.hpp"

#include <algorithm>

#include "enoki/log.hpp"
#include "enoki/util.hpp"

namespace enoki::naming {

void Service::register_node(const NodeId& id, const std::string& address) {
    if (!is_token(id.name)) fail(ErrorKind::BadRequest, "bad node id: '" + id.name + "'");
    if (!util::split_host_port(address)) fail(ErrorKind::BadRequest, "bad address: " + address);
    std::lock_guard lock(mu_);
    nodes_[id] = NodeRecord{id, address, now_micros()};
}

std::optional<NodeRecord> Service::lookup_node(const NodeId& id) const {
    std::lock_guard lock(mu_);
    const auto it = nodes_.find(id);
    if (it == nodes_.end()) return std::nullopt;
    return it->second;
}

KeygroupRecord Service::create_keygroup(const std::string& name, const NodeId& first_replica) {
    if (!is_token(name)) fail(ErrorKind::BadRequest, "bad keygroup name: " + name);
    std::lock_guard lock(mu_);
    if (!nodes_.contains(first_replica)) {
        fail(ErrorKind::NotFound, "node not registered: " + first_replica.name);
    }
    if (keygroups_.contains(name)) fail(ErrorKind::AlreadyExists, "keygroup exists: " + name);
    KeygroupRecord rec{name, {first_replica}};
    keygroups_[name] = rec;
    return rec;
}

KeygroupRecord Service::add_replica(const std::string& name, const NodeId& node) {
    std::lock_guard lock(mu_);
    const auto it = keygroups_.find(name);
    if (it == keygroups_.end()) fail(ErrorKind::NotFound, "keygroup not found: " + name);
    if (!nodes_.contains(node)) fail(ErrorKind::NotFound, "node not registered: " + node.name);
    auto& replicas = it->second.replicas;
    if (std::find(replicas.begin(), replicas.end(), node) == replicas.end()) {
        replicas.push_back(node);
    }
    return it->second;
}

std::optional<KeygroupRecord> Service::lookup_keygroup(const std::string& name) const {
    std::lock_guard lock(mu_);
    const auto it = keygroups_.find(name);
    if (it == keygroups_.end()) return std::nullopt;
    return it->second;
}

void Service::count_request(const std::string& type) {
    std::lock_guard lock(mu_);
    ++counts_[type];
}

std::map<std::string, std::uint64_t> Service::request_counts() const {
    std::lock_guard lock(mu_);
    return counts_;
}

Server::Server(const std::string& listen_addr) {
    rpc_ = std::make_unique<rpc::Server>(listen_addr, shaper_,
                                         [this](const rpc::Frame& req, std::uint32_t) {
                                             return dispatch(req);
                                         });
    log::info("naming", "listening on " + listen_addr);
}

void Server::stop() {
    if (rpc_) rpc_->stop();
}

namespace {

nlohmann::json keygroup_json(const KeygroupRecord& rec) {
    nlohmann::json replicas = nlohmann::json::array();
    for (const auto& r : rec.replicas) replicas.push_back(r.name);
    return {{"type", "Keygroup"}, {"keygroup", rec.name}, {"replicas", replicas}};
}

}  // namespace

rpc::Frame Server::dispatch(const rpc::Frame& req) {
    const auto type = req.type();
    service_.count_request(type);
    if (type == "RegisterNode") {
        service_.register_node(NodeId(req.body.at("id").get<std::string>()),
                               req.body.at("addr").get<std::string>());
        return rpc::Frame({{"type", "Ok"}});
    }
    if (type == "LookupNode") {
        const auto rec = service_.lookup_node(NodeId(req.body.at("id").get<std::string>()));
        if (!rec) fail(ErrorKind::NotFound, "node not registered");
        return rpc::Frame({{"type", "Node"},
                           {"id", rec->id.name},
                           {"addr", rec->address},
                           {"last_heartbeat", rec->last_heartbeat}});
    }
    if (type == "CreateKeygroup") {
        const auto rec = service_.create_keygroup(req.body.at("keygroup").get<std::string>(),
                                                  NodeId(req.body.at("first").get<std::string>()));
        return rpc::Frame(keygroup_json(rec));
    }
    if (type == "AddReplica") {
        const auto rec = service_.add_replica(req.body.at("keygroup").get<std::string>(),
                                              NodeId(req.body.at("node").get<std::string>()));
        return rpc::Frame(keygroup_json(rec));
    }
    if (type == "LookupKeygroup") {
        const auto rec = service_.lookup_keygroup(req.body.at("keygroup").get<std::string>());
        if (!rec) fail(ErrorKind::NotFound, "keygroup not found");
        return rpc::Frame(keygroup_json(*rec));
    }
    if (type == "Stats") {
        return rpc::Frame({{"type", "Stats"}, {"requests", service_.request_counts()}});
    }
    fail(ErrorKind::BadRequest, "unknown naming message type: " + type);
}

Client::Client(std::string addr, netem::Shaper& shaper) : pool_(std::move(addr), shaper) {}

rpc::Frame Client::call(rpc::Frame req) {
    auto resp = pool_.call(req);
    rpc::throw_if_error(resp);
    return resp;
}

void Client::register_node(const NodeId& id, const std::string& address) {
    call(rpc::Frame({{"type", "RegisterNode"}, {"id", id.name}, {"addr", address}}));
}

std::optional<NodeRecord> Client::lookup_node(const NodeId& id) {
    try {
        const auto resp = call(rpc::Frame({{"type", "LookupNode"}, {"id", id.name}}));
        return NodeRecord{NodeId(resp.body.at("id").get<std::string>()),
                          resp.body.at("addr").get<std::string>(),
                          resp.body.value("last_heartbeat", Timestamp{0})};
    } catch (const EnokiError& e) {
        if (e.kind() == ErrorKind::NotFound) return std::nullopt;
        throw;
    }
}

namespace {

KeygroupRecord keygroup_from(const rpc::Frame& resp) {
    KeygroupRecord rec;
    rec.name = resp.body.at("keygroup").get<std::string>();
    for (const auto& r : resp.body.at("replicas")) rec.replicas.emplace_back(r.get<std::string>());
    return rec;
}

}  // namespace

KeygroupRecord Client::create_keygroup(const std::string& name, const NodeId& first_replica) {
    return keygroup_from(
        call(rpc::Frame({{"type", "CreateKeygroup"}, {"keygroup", name}, {"first", first_replica.name}})));
}

KeygroupRecord Client::add_replica(const std::string& name, const NodeId& node) {
    return keygroup_from(
        call(rpc::Frame({{"type", "AddReplica"}, {"keygroup", name}, {"node", node.name}})));
}

std::optional<KeygroupRecord> Client::lookup_keygroup(const std::string& name) {
    try {
        return keygroup_from(call(rpc::Frame({{"type", "LookupKeygroup"}, {"keygroup", name}})));
    } catch (const EnokiError& e) {
        if (e.kind() == ErrorKind::NotFound) return std::nullopt;
        throw;
    }
}

std::map<std::string, std::uint64_t> Client::request_counts() {
    const auto resp = call(rpc::Frame({{"type", "Stats"}}));
    std::map<std::string, std::uint64_t> counts;
    for (const auto& [k, v] : resp.body.at("requests").items()) {
        counts[k] = v.get<std::uint64_t>();
    }
    return counts;
}

}  // namespace enoki::naming
