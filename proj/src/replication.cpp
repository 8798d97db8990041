#include "enoki/replication.hpp"

#include <algorithm>

#include "enoki/log.hpp"
#include "enoki/rpc.hpp"
#include "enoki/wire.hpp"

namespace enoki::repl {

namespace {
constexpr std::size_t kQueueCap = 10000;
constexpr int kRetryBackoffMs[] = {50, 200, 800};
}  // namespace

/// One outbound FIFO queue per peer; updates are pushed in order over a
/// dedicated connection that is re-dialed on failure.
class Replicator::PeerChannel {
public:
    PeerChannel(Peer peer, netem::Shaper& shaper, std::atomic<bool>& stopping)
        : peer_(std::move(peer)), shaper_(shaper), stopping_(stopping) {
        worker_ = std::thread([this] { run(); });
    }

    ~PeerChannel() {
        {
            std::lock_guard lock(mu_);
            closing_ = true;
        }
        cv_.notify_all();
        if (worker_.joinable()) worker_.join();
    }

    void set_addr(const std::string& addr) {
        std::lock_guard lock(mu_);
        peer_.addr = addr;
    }

    void enqueue(const std::string& kg, const kv::Entry& entry) {
        std::lock_guard lock(mu_);
        if (closing_) return;
        if (queue_.size() >= kQueueCap) {
            // Newest-wins compaction: drop the oldest queued update for the
            // same key, or the oldest message overall.
            auto same_key = std::find_if(queue_.begin(), queue_.end(), [&](const Pending& p) {
                return p.kg == kg && p.entry.key == entry.key;
            });
            if (same_key != queue_.end()) {
                queue_.erase(same_key);
            } else {
                log::warn("replication", "queue overflow to " + peer_.id.name + ", dropping oldest");
                queue_.pop_front();
            }
        }
        queue_.push_back(Pending{kg, entry});
        cv_.notify_one();
    }

    std::size_t depth() const {
        std::lock_guard lock(mu_);
        return queue_.size() + (in_flight_ ? 1 : 0);
    }

private:
    struct Pending {
        std::string kg;
        kv::Entry entry;
    };

    void run() {
        while (true) {
            Pending item;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return closing_ || !queue_.empty(); });
                if (queue_.empty()) return;  // closing with nothing left
                item = std::move(queue_.front());
                queue_.pop_front();
                in_flight_ = true;
            }
            const bool delivered = deliver(item);
            if (!delivered) {
                log::warn("replication", "dropping update for " + item.kg + "/" + item.entry.key +
                                             " to " + peer_.id.name + " after retries");
            }
            std::lock_guard lock(mu_);
            in_flight_ = false;
        }
    }

    bool deliver(const Pending& item) {
        rpc::Frame req(nlohmann::json{{"type", "Update"},
                                      {"keygroup", item.kg},
                                      {"entry", wire::entry_meta(item.entry)}},
                       item.entry.value);
        for (std::size_t attempt = 0;; ++attempt) {
            if (try_send(req)) return true;
            if (attempt >= std::size(kRetryBackoffMs) || closing_now()) return false;
            std::this_thread::sleep_for(std::chrono::milliseconds(kRetryBackoffMs[attempt]));
        }
    }

    bool try_send(const rpc::Frame& req) {
        try {
            if (!conn_ || !conn_->alive()) {
                std::string addr;
                {
                    std::lock_guard lock(mu_);
                    addr = peer_.addr;
                }
                conn_ = std::make_unique<rpc::Connection>(rpc::Connection::dial(addr, shaper_));
            }
            auto resp = conn_->call(req);
            rpc::throw_if_error(resp);
            return true;
        } catch (const EnokiError&) {
            conn_.reset();
            return false;
        }
    }

    bool closing_now() const {
        std::lock_guard lock(mu_);
        return closing_ || stopping_.load();
    }

    Peer peer_;
    netem::Shaper& shaper_;
    std::atomic<bool>& stopping_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Pending> queue_;
    bool in_flight_ = false;
    bool closing_ = false;
    std::unique_ptr<rpc::Connection> conn_;
    std::thread worker_;
};

Replicator::Replicator(kv::Store& store, naming::Client& naming, netem::Shaper& shaper)
    : store_(store), naming_(naming), shaper_(shaper), self_(store.self()) {}

Replicator::~Replicator() { stop(); }

void Replicator::stop() {
    stopping_.store(true);
    std::map<std::string, std::unique_ptr<PeerChannel>> channels;
    {
        std::lock_guard lock(mu_);
        channels.swap(channels_);
    }
    channels.clear();  // joins workers
}

ReplicaSet Replicator::refresh_replicas(const std::string& kg) {
    const auto rec = naming_.lookup_keygroup(kg);  // Unavailable propagates, cache retained
    if (!rec) fail(ErrorKind::NotFound, "keygroup not registered: " + kg);
    ReplicaSet rs;
    rs.keygroup = kg;
    rs.fetched_at = now_micros();
    std::set<NodeId> ids;
    for (const auto& id : rec->replicas) {
        ids.insert(id);
        if (id == self_) continue;
        const auto node = naming_.lookup_node(id);
        if (!node) {
            log::warn("replication", "replica " + id.name + " has no address, skipping");
            continue;
        }
        rs.peers.push_back(Peer{id, node->address});
    }
    {
        std::lock_guard lock(mu_);
        cache_[kg] = rs;
        for (const auto& peer : rs.peers) {
            const auto it = channels_.find(peer.id.name);
            if (it != channels_.end()) it->second->set_addr(peer.addr);
        }
    }
    if (store_.has_keygroup(kg)) store_.set_replicas(kg, std::move(ids));
    return rs;
}

ReplicaSet Replicator::cached(const std::string& kg) const {
    std::lock_guard lock(mu_);
    const auto it = cache_.find(kg);
    return it == cache_.end() ? ReplicaSet{kg, {}, 0} : it->second;
}

std::size_t Replicator::bootstrap(const std::string& kg, const Peer& from) {
    if (store_.has_keygroup(kg)) fail(ErrorKind::AlreadyExists, "keygroup already local: " + kg);
    store_.create_keygroup(kg);
    naming_.add_replica(kg, self_);  // membership first: concurrent writes reach us
    const auto rs = refresh_replicas(kg);
    for (const auto& peer : rs.peers) {
        if (peer.id == from.id) continue;
        try {
            auto conn = rpc::Connection::dial(peer.addr, shaper_);
            conn.call(rpc::Frame({{"type", "ReplicaHint"}, {"keygroup", kg}}));
        } catch (const EnokiError& e) {
            log::warn("replication", "replica hint to " + peer.id.name + " failed: " + e.what());
        }
    }
    auto conn = rpc::Connection::dial(from.addr, shaper_);
    auto resp = conn.call(rpc::Frame({{"type", "FetchKeygroup"}, {"keygroup", kg}}));
    rpc::throw_if_error(resp);
    std::size_t applied = 0;
    for (const auto& j : resp.body.at("entries")) {
        store_.apply_remote(kg, wire::entry_from_b64(j));
        ++applied;
    }
    log::info("replication", "bootstrapped " + kg + " from " + from.id.name + " (" +
                                 std::to_string(applied) + " entries)");
    return applied;
}

void Replicator::propagate(const std::string& kg, const kv::Entry& entry) {
    if (stopping_.load()) return;
    ReplicaSet rs = cached(kg);
    if (rs.fetched_at == 0) {
        try {
            rs = refresh_replicas(kg);
        } catch (const EnokiError&) {
            return;  // nothing known to fan out to
        }
    }
    for (const auto& peer : rs.peers) {
        channel(peer).enqueue(kg, entry);
    }
}

void Replicator::handle_replica_hint(const std::string& kg) {
    try {
        refresh_replicas(kg);
    } catch (const EnokiError& e) {
        log::warn("replication", "replica hint refresh for " + kg + " failed: " + e.what());
    }
}

std::size_t Replicator::pending() const {
    std::lock_guard lock(mu_);
    std::size_t total = 0;
    for (const auto& [_, ch] : channels_) total += ch->depth();
    return total;
}

Replicator::PeerChannel& Replicator::channel(const Peer& peer) {
    std::lock_guard lock(mu_);
    auto& slot = channels_[peer.id.name];
    if (!slot) slot = std::make_unique<PeerChannel>(peer, shaper_, stopping_);
    return *slot;
}

}  // namespace enoki::repl
