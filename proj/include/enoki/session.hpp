#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "enoki/kvstore.hpp"
#include "enoki/replication.hpp"
#include "enoki/rpc.hpp"

namespace enoki::session {

/// Freshness wait policy: a read blocks until the replica's entry is not
/// Before the session's high-water mark, polling every 5 ms up to 1 s.
constexpr std::chrono::milliseconds kRetryInterval{5};
constexpr std::chrono::milliseconds kRetryBudget{1000};

/// Replica-side read with the freshness guarantee. nullopt = NotFound
/// (absent or tombstoned under an empty/satisfied mark); throws Timeout
/// when the replica cannot catch up in time.
std::optional<kv::Entry> get_with_guarantee(const kv::Store& store, const std::string& kg,
                                            const std::string& key,
                                            const VersionVector& min_version);

/// Replica-side scan where every returned entry and every marked key in
/// range must satisfy its minimum version.
std::vector<kv::Entry> scan_with_guarantee(const kv::Store& store, const std::string& kg,
                                           const std::string& start_key, std::size_t count,
                                           const std::map<std::string, VersionVector>& min_versions);

/// Storage access for one keygroup: a local replica or a remote home node.
class KvBackend {
public:
    virtual ~KvBackend() = default;
    virtual std::optional<kv::Entry> get(const std::string& key, const VersionVector& min) = 0;
    virtual kv::Entry set(const std::string& key, const std::string& value,
                          const VersionVector& base) = 0;
    virtual std::vector<kv::Entry> scan(const std::string& start_key, std::size_t count,
                                        const std::map<std::string, VersionVector>& mins) = 0;
    virtual kv::Entry del(const std::string& key) = 0;
};

std::unique_ptr<KvBackend> make_local_backend(kv::Store& store, repl::Replicator& repl,
                                              std::string keygroup);
std::unique_ptr<KvBackend> make_remote_backend(std::shared_ptr<rpc::ConnectionPool> home,
                                               std::string keygroup);

/// One client's session over one keygroup: read-your-writes and monotonic
/// reads via a per-key high-water mark that only grows. Single-owner.
class Session {
public:
    Session(std::shared_ptr<KvBackend> backend, std::string keygroup);

    const std::string& id() const { return id_; }
    const std::string& keygroup() const { return keygroup_; }

    std::string get(const std::string& key);                 // NotFound / Timeout
    std::optional<std::string> get_opt(const std::string& key);  // NotFound -> nullopt
    void set(const std::string& key, const std::string& value);
    std::vector<std::pair<std::string, std::string>> scan(const std::string& start_key,
                                                          std::size_t count);
    void del(const std::string& key);  // NotFound

    const std::map<std::string, VersionVector>& high_water() const { return high_water_; }

private:
    void absorb(const std::string& key, const VersionVector& version);

    std::shared_ptr<KvBackend> backend_;
    std::string keygroup_;
    std::string id_;
    std::map<std::string, VersionVector> high_water_;
};

/// Client-side staleness probe bookkeeping. Probe reads bypass session
/// guarantees; a read is stale when the next write had already been issued
/// by this client at read time.
struct StalenessProbeLog {
    std::map<std::uint64_t, Timestamp> writes;  // seq -> client write time
    struct Read {
        Timestamp read_ts;
        std::uint64_t observed_seq;
    };
    std::vector<Read> reads;
};

void record_probe_write(StalenessProbeLog& log, std::uint64_t seq, Timestamp write_ts);
void record_probe_read(StalenessProbeLog& log, Timestamp read_ts, std::uint64_t observed_seq);

/// Staleness of a single read, if it was stale: read_ts minus the client
/// time of the earliest superseding write.
std::optional<std::uint64_t> staleness_of(const StalenessProbeLog& log,
                                          const StalenessProbeLog::Read& read);

/// All stale-read durations in microseconds; BadRequest when a read refers
/// to a sequence the log never wrote.
std::vector<std::uint64_t> compute_staleness(const StalenessProbeLog& log);

}  // namespace enoki::session
