#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "enoki/core.hpp"

namespace enoki::kv {

struct Entry {
    std::string key;
    std::string value;
    VersionVector version;
    NodeId writer;
    Timestamp write_ts = 0;
    bool tombstone = false;

    bool operator==(const Entry&) const = default;
};

enum class ApplyResult { Applied, Ignored, ConflictResolved };
const char* to_string(ApplyResult r);

/// Deterministic winner between causally concurrent entries: greatest
/// writer id wins, with the version text and value as final arbiters so
/// the relation is a total order.
const Entry& tie_break(const Entry& a, const Entry& b);

/// In-memory per-node storage engine: keygroups of versioned entries with
/// atomic per-key read-modify-write. Thread-safe; scans see a consistent
/// snapshot of their keygroup.
class Store {
public:
    explicit Store(NodeId self);

    const NodeId& self() const { return self_; }

    void create_keygroup(const std::string& name);  // AlreadyExists / BadRequest
    bool has_keygroup(const std::string& name) const;
    std::vector<std::string> keygroups() const;

    /// New entry versioned increment(merge(base, current), self). Local
    /// writes always succeed; conflicts are impossible on this path.
    Entry put(const std::string& kg, const std::string& key, const std::string& value,
              const VersionVector& base);

    /// Current live entry; nullopt for absent or tombstoned keys.
    std::optional<Entry> get(const std::string& kg, const std::string& key) const;

    /// Includes tombstones; used by replication and freshness checks.
    std::optional<Entry> get_raw(const std::string& kg, const std::string& key) const;

    /// Up to `count` live entries with key >= start_key, ascending.
    std::vector<Entry> scan(const std::string& kg, const std::string& start_key,
                            std::size_t count) const;

    /// Tombstones the key with an incremented version. NotFound when the
    /// key is absent or already deleted.
    Entry remove(const std::string& kg, const std::string& key);

    /// Applies a replicated entry; idempotent. Concurrent versions keep
    /// the tie-break winner under the merged version vector.
    ApplyResult apply_remote(const std::string& kg, const Entry& remote);

    /// Every entry including tombstones, for bootstrap transfer.
    std::vector<Entry> snapshot(const std::string& kg) const;

    void set_replicas(const std::string& kg, std::set<NodeId> replicas);
    std::set<NodeId> replicas(const std::string& kg) const;

private:
    struct Keygroup {
        mutable std::shared_mutex mu;
        std::map<std::string, Entry> entries;
        std::set<NodeId> replicas;
    };

    Keygroup& group(const std::string& kg);
    const Keygroup& group(const std::string& kg) const;

    NodeId self_;
    mutable std::shared_mutex groups_mu_;
    std::map<std::string, std::unique_ptr<Keygroup>> groups_;
};

}  // namespace enoki::kv
