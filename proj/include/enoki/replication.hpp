#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "enoki/kvstore.hpp"
#include "enoki/naming.hpp"
#include "enoki/netem.hpp"

namespace enoki::repl {

struct Peer {
    NodeId id;
    std::string addr;
};

struct ReplicaSet {
    std::string keygroup;
    std::vector<Peer> peers;  // excludes self
    Timestamp fetched_at = 0;
};

/// Keygroup replication: full-state bootstrap for joining replicas, then
/// asynchronous per-update push fan-out over per-peer FIFO channels.
class Replicator {
public:
    Replicator(kv::Store& store, naming::Client& naming, netem::Shaper& shaper);
    ~Replicator();

    void stop();

    /// Replaces the cached peer list with naming-service truth.
    /// Old cache is retained when naming is unreachable.
    ReplicaSet refresh_replicas(const std::string& kg);  // NotFound / Unavailable
    ReplicaSet cached(const std::string& kg) const;

    /// Joins an existing keygroup: registers this node as a replica first
    /// (so concurrent writes already fan out here), hints the other
    /// replicas to re-pull membership, then pulls and applies full state.
    std::size_t bootstrap(const std::string& kg, const Peer& from);  // AlreadyExists / Unavailable

    /// Fan-out after a local write. Never surfaces errors to the writer;
    /// retries 50/200/800 ms per peer, then drops with a warning.
    void propagate(const std::string& kg, const kv::Entry& entry);

    /// Inbound join hint: some node became a replica of kg.
    void handle_replica_hint(const std::string& kg);

    /// Queued updates not yet acknowledged by peers (test hook).
    std::size_t pending() const;

private:
    class PeerChannel;

    PeerChannel& channel(const Peer& peer);

    kv::Store& store_;
    naming::Client& naming_;
    netem::Shaper& shaper_;
    NodeId self_;
    std::atomic<bool> stopping_{false};
    mutable std::mutex mu_;
    std::map<std::string, ReplicaSet> cache_;
    std::map<std::string, std::unique_ptr<PeerChannel>> channels_;  // by peer node name
};

}  // namespace enoki::repl
