#include "enoki/session.hpp"

#include <atomic>
#include <thread>

#include "enoki/util.hpp"
#include "enoki/wire.hpp"

namespace enoki::session {

namespace {

bool satisfied(const kv::Entry& entry, const VersionVector& min) {
    return compare(entry.version, min) != Ordering::Before;
}

}  // namespace

std::optional<kv::Entry> get_with_guarantee(const kv::Store& store, const std::string& kg,
                                            const std::string& key,
                                            const VersionVector& min_version) {
    const auto deadline = std::chrono::steady_clock::now() + kRetryBudget;
    while (true) {
        const auto raw = store.get_raw(kg, key);
        if (raw && satisfied(*raw, min_version)) {
            if (raw->tombstone) return std::nullopt;
            return raw;
        }
        if (!raw && min_version.empty()) return std::nullopt;
        if (std::chrono::steady_clock::now() >= deadline) {
            fail(ErrorKind::Timeout, "replica behind session mark for key: " + key);
        }
        std::this_thread::sleep_for(kRetryInterval);
    }
}

std::vector<kv::Entry> scan_with_guarantee(const kv::Store& store, const std::string& kg,
                                           const std::string& start_key, std::size_t count,
                                           const std::map<std::string, VersionVector>& min_versions) {
    const auto deadline = std::chrono::steady_clock::now() + kRetryBudget;
    while (true) {
        auto entries = store.scan(kg, start_key, count);
        bool ok = true;
        for (const auto& e : entries) {
            const auto it = min_versions.find(e.key);
            if (it != min_versions.end() && !satisfied(e, it->second)) {
                ok = false;
                break;
            }
        }
        if (ok) {
            // Marked keys inside the returned window must at least exist
            // (tombstoned counts: deletion is a newer state, not lag).
            for (auto it = min_versions.lower_bound(start_key); it != min_versions.end(); ++it) {
                if (entries.size() == count && !entries.empty() && it->first > entries.back().key) {
                    break;
                }
                const auto raw = store.get_raw(kg, it->first);
                if (!raw || !satisfied(*raw, it->second)) {
                    ok = false;
                    break;
                }
            }
        }
        if (ok) return entries;
        if (std::chrono::steady_clock::now() >= deadline) {
            fail(ErrorKind::Timeout, "replica behind session mark in scan from: " + start_key);
        }
        std::this_thread::sleep_for(kRetryInterval);
    }
}

namespace {

class LocalBackend final : public KvBackend {
public:
    LocalBackend(kv::Store& store, repl::Replicator& repl, std::string kg)
        : store_(store), repl_(repl), kg_(std::move(kg)) {}

    std::optional<kv::Entry> get(const std::string& key, const VersionVector& min) override {
        return get_with_guarantee(store_, kg_, key, min);
    }

    kv::Entry set(const std::string& key, const std::string& value,
                  const VersionVector& base) override {
        auto entry = store_.put(kg_, key, value, base);
        repl_.propagate(kg_, entry);
        return entry;
    }

    std::vector<kv::Entry> scan(const std::string& start_key, std::size_t count,
                                const std::map<std::string, VersionVector>& mins) override {
        return scan_with_guarantee(store_, kg_, start_key, count, mins);
    }

    kv::Entry del(const std::string& key) override {
        auto entry = store_.remove(kg_, key);
        repl_.propagate(kg_, entry);
        return entry;
    }

private:
    kv::Store& store_;
    repl::Replicator& repl_;
    std::string kg_;
};

class RemoteBackend final : public KvBackend {
public:
    RemoteBackend(std::shared_ptr<rpc::ConnectionPool> home, std::string kg)
        : home_(std::move(home)), kg_(std::move(kg)) {}

    std::optional<kv::Entry> get(const std::string& key, const VersionVector& min) override {
        auto resp = home_->call(rpc::Frame({{"type", "SessionGet"},
                                            {"keygroup", kg_},
                                            {"key", key},
                                            {"min_version", min.to_text()}}));
        if (rpc::is_error(resp) && resp.body.value("kind", "") == to_string(ErrorKind::NotFound)) {
            return std::nullopt;
        }
        rpc::throw_if_error(resp);
        return wire::entry_from_meta(resp.body.at("entry"), std::move(resp.bin));
    }

    kv::Entry set(const std::string& key, const std::string& value,
                  const VersionVector& base) override {
        auto resp = home_->call(rpc::Frame(nlohmann::json{{"type", "SessionSet"},
                                                          {"keygroup", kg_},
                                                          {"key", key},
                                                          {"base", base.to_text()}},
                                           value));
        rpc::throw_if_error(resp);
        return wire::entry_from_meta(resp.body.at("entry"), value);
    }

    std::vector<kv::Entry> scan(const std::string& start_key, std::size_t count,
                                const std::map<std::string, VersionVector>& mins) override {
        nlohmann::json jmins = nlohmann::json::object();
        for (const auto& [k, v] : mins) jmins[k] = v.to_text();
        auto resp = home_->call(rpc::Frame({{"type", "SessionScan"},
                                            {"keygroup", kg_},
                                            {"start", start_key},
                                            {"count", count},
                                            {"min_versions", jmins}}));
        rpc::throw_if_error(resp);
        std::vector<kv::Entry> out;
        for (const auto& j : resp.body.at("entries")) out.push_back(wire::entry_from_b64(j));
        return out;
    }

    kv::Entry del(const std::string& key) override {
        auto resp = home_->call(
            rpc::Frame({{"type", "SessionDelete"}, {"keygroup", kg_}, {"key", key}}));
        rpc::throw_if_error(resp);
        return wire::entry_from_meta(resp.body.at("entry"), "");
    }

private:
    std::shared_ptr<rpc::ConnectionPool> home_;
    std::string kg_;
};

std::string next_session_id() {
    static std::atomic<std::uint64_t> counter{0};
    return "s-" + std::to_string(now_micros()) + "-" + std::to_string(counter.fetch_add(1));
}

}  // namespace

std::unique_ptr<KvBackend> make_local_backend(kv::Store& store, repl::Replicator& repl,
                                              std::string keygroup) {
    return std::make_unique<LocalBackend>(store, repl, std::move(keygroup));
}

std::unique_ptr<KvBackend> make_remote_backend(std::shared_ptr<rpc::ConnectionPool> home,
                                               std::string keygroup) {
    return std::make_unique<RemoteBackend>(std::move(home), std::move(keygroup));
}

Session::Session(std::shared_ptr<KvBackend> backend, std::string keygroup)
    : backend_(std::move(backend)), keygroup_(std::move(keygroup)), id_(next_session_id()) {}

void Session::absorb(const std::string& key, const VersionVector& version) {
    auto& mark = high_water_[key];
    mark = merge(mark, version);
}

std::string Session::get(const std::string& key) {
    auto value = get_opt(key);
    if (!value) fail(ErrorKind::NotFound, "key not found: " + key);
    return std::move(*value);
}

std::optional<std::string> Session::get_opt(const std::string& key) {
    const auto it = high_water_.find(key);
    const VersionVector min = it == high_water_.end() ? VersionVector{} : it->second;
    auto entry = backend_->get(key, min);
    if (!entry) return std::nullopt;
    absorb(key, entry->version);
    return std::move(entry->value);
}

void Session::set(const std::string& key, const std::string& value) {
    const auto it = high_water_.find(key);
    const VersionVector base = it == high_water_.end() ? VersionVector{} : it->second;
    const auto entry = backend_->set(key, value, base);
    absorb(key, entry.version);
}

std::vector<std::pair<std::string, std::string>> Session::scan(const std::string& start_key,
                                                               std::size_t count) {
    std::map<std::string, VersionVector> mins;
    for (auto it = high_water_.lower_bound(start_key); it != high_water_.end(); ++it) {
        mins.emplace(it->first, it->second);
    }
    auto entries = backend_->scan(start_key, count, mins);
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(entries.size());
    for (auto& e : entries) {
        absorb(e.key, e.version);
        out.emplace_back(e.key, std::move(e.value));
    }
    return out;
}

void Session::del(const std::string& key) {
    const auto entry = backend_->del(key);
    absorb(key, entry.version);
}

void record_probe_write(StalenessProbeLog& log, std::uint64_t seq, Timestamp write_ts) {
    if (!log.writes.empty()) {
        const auto& [last_seq, last_ts] = *log.writes.rbegin();
        if (seq <= last_seq || write_ts < last_ts) {
            fail(ErrorKind::BadRequest, "probe writes must increase in seq and time");
        }
    }
    log.writes.emplace(seq, write_ts);
}

void record_probe_read(StalenessProbeLog& log, Timestamp read_ts, std::uint64_t observed_seq) {
    log.reads.push_back({read_ts, observed_seq});
}

std::optional<std::uint64_t> staleness_of(const StalenessProbeLog& log,
                                          const StalenessProbeLog::Read& read) {
    if (read.observed_seq != 0 && !log.writes.contains(read.observed_seq)) {
        fail(ErrorKind::BadRequest,
             "probe read observed unknown seq " + std::to_string(read.observed_seq));
    }
    const auto next = log.writes.upper_bound(read.observed_seq);
    if (next == log.writes.end()) return std::nullopt;       // observed the newest value
    if (next->second > read.read_ts) return std::nullopt;    // superseded only after the read
    return read.read_ts - next->second;
}

std::vector<std::uint64_t> compute_staleness(const StalenessProbeLog& log) {
    std::vector<std::uint64_t> out;
    for (const auto& read : log.reads) {
        if (const auto s = staleness_of(log, read)) out.push_back(*s);
    }
    return out;
}

}  // namespace enoki::session
