#include "enoki/kvstore.hpp"

#include <tuple>

namespace enoki::kv {

const char* to_string(ApplyResult r) {
    switch (r) {
        case ApplyResult::Applied: return "Applied";
        case ApplyResult::Ignored: return "Ignored";
        case ApplyResult::ConflictResolved: return "ConflictResolved";
    }
    return "Ignored";
}

const Entry& tie_break(const Entry& a, const Entry& b) {
    const auto rank = [](const Entry& e) {
        return std::tie(e.writer.name, e.write_ts, e.value);
    };
    return rank(a) < rank(b) ? b : a;
}

Store::Store(NodeId self) : self_(std::move(self)) {}

Store::Keygroup& Store::group(const std::string& kg) {
    std::shared_lock lock(groups_mu_);
    const auto it = groups_.find(kg);
    if (it == groups_.end()) fail(ErrorKind::NotFound, "keygroup not found: " + kg);
    return *it->second;
}

const Store::Keygroup& Store::group(const std::string& kg) const {
    std::shared_lock lock(groups_mu_);
    const auto it = groups_.find(kg);
    if (it == groups_.end()) fail(ErrorKind::NotFound, "keygroup not found: " + kg);
    return *it->second;
}

void Store::create_keygroup(const std::string& name) {
    if (!is_token(name)) fail(ErrorKind::BadRequest, "bad keygroup name: " + name);
    std::unique_lock lock(groups_mu_);
    if (groups_.contains(name)) fail(ErrorKind::AlreadyExists, "keygroup exists: " + name);
    auto kg = std::make_unique<Keygroup>();
    kg->replicas.insert(self_);
    groups_[name] = std::move(kg);
}

bool Store::has_keygroup(const std::string& name) const {
    std::shared_lock lock(groups_mu_);
    return groups_.contains(name);
}

std::vector<std::string> Store::keygroups() const {
    std::shared_lock lock(groups_mu_);
    std::vector<std::string> names;
    names.reserve(groups_.size());
    for (const auto& [name, _] : groups_) names.push_back(name);
    return names;
}

Entry Store::put(const std::string& kg, const std::string& key, const std::string& value,
                 const VersionVector& base) {
    auto& g = group(kg);
    std::unique_lock lock(g.mu);
    VersionVector merged = base;
    if (const auto it = g.entries.find(key); it != g.entries.end()) {
        merged = merge(merged, it->second.version);
    }
    Entry entry{key, value, increment(merged, self_), self_, now_micros(), false};
    g.entries[key] = entry;
    return entry;
}

std::optional<Entry> Store::get(const std::string& kg, const std::string& key) const {
    const auto& g = group(kg);
    std::shared_lock lock(g.mu);
    const auto it = g.entries.find(key);
    if (it == g.entries.end() || it->second.tombstone) return std::nullopt;
    return it->second;
}

std::optional<Entry> Store::get_raw(const std::string& kg, const std::string& key) const {
    const auto& g = group(kg);
    std::shared_lock lock(g.mu);
    const auto it = g.entries.find(key);
    if (it == g.entries.end()) return std::nullopt;
    return it->second;
}

std::vector<Entry> Store::scan(const std::string& kg, const std::string& start_key,
                               std::size_t count) const {
    const auto& g = group(kg);
    std::shared_lock lock(g.mu);
    std::vector<Entry> out;
    for (auto it = g.entries.lower_bound(start_key); it != g.entries.end() && out.size() < count;
         ++it) {
        if (!it->second.tombstone) out.push_back(it->second);
    }
    return out;
}

Entry Store::remove(const std::string& kg, const std::string& key) {
    auto& g = group(kg);
    std::unique_lock lock(g.mu);
    const auto it = g.entries.find(key);
    if (it == g.entries.end() || it->second.tombstone) {
        fail(ErrorKind::NotFound, "key not found: " + key);
    }
    Entry entry{key, "", increment(it->second.version, self_), self_, now_micros(), true};
    it->second = entry;
    return entry;
}

ApplyResult Store::apply_remote(const std::string& kg, const Entry& remote) {
    auto& g = group(kg);
    std::unique_lock lock(g.mu);
    const auto it = g.entries.find(remote.key);
    if (it == g.entries.end()) {
        g.entries[remote.key] = remote;
        return ApplyResult::Applied;
    }
    Entry& local = it->second;
    switch (compare(remote.version, local.version)) {
        case Ordering::After:
            local = remote;
            return ApplyResult::Applied;
        case Ordering::Before:
        case Ordering::Equal:
            return ApplyResult::Ignored;
        case Ordering::Concurrent:
            break;
    }
    Entry resolved = tie_break(local, remote);
    resolved.version = merge(local.version, remote.version);
    local = std::move(resolved);
    return ApplyResult::ConflictResolved;
}

std::vector<Entry> Store::snapshot(const std::string& kg) const {
    const auto& g = group(kg);
    std::shared_lock lock(g.mu);
    std::vector<Entry> out;
    out.reserve(g.entries.size());
    for (const auto& [_, entry] : g.entries) out.push_back(entry);
    return out;
}

void Store::set_replicas(const std::string& kg, std::set<NodeId> replicas) {
    auto& g = group(kg);
    std::unique_lock lock(g.mu);
    g.replicas = std::move(replicas);
}

std::set<NodeId> Store::replicas(const std::string& kg) const {
    const auto& g = group(kg);
    std::shared_lock lock(g.mu);
    return g.replicas;
}

}  // namespace enoki::kv
