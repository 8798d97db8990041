#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace enoki {

enum class ErrorKind {
    NotFound,
    AlreadyExists,
    Conflict,
    Unavailable,
    Timeout,
    BadRequest,
    Internal,
};

const char* to_string(ErrorKind k);
std::optional<ErrorKind> parse_error_kind(const std::string& s);

class EnokiError : public std::runtime_error {
public:
    EnokiError(ErrorKind kind, const std::string& detail);
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& detail);

/// Non-empty token of letters, digits and hyphens.
bool is_token(const std::string& s);

/// Node identifier. Lexicographic order on the name doubles as the
/// deterministic tie-break order for concurrent writes.
struct NodeId {
    std::string name;

    NodeId() = default;
    explicit NodeId(std::string n) : name(std::move(n)) {}

    auto operator<=>(const NodeId&) const = default;
};

/// Microseconds on the process-local hybrid clock.
using Timestamp = std::uint64_t;

/// Wall time sampled once at process start, advanced by the monotonic
/// clock. Successive reads within one process never decrease.
Timestamp now_micros();

enum class Ordering { Before, After, Equal, Concurrent };
const char* to_string(Ordering o);

/// Per-key causality metadata: node -> update counter. Zero counters are
/// never stored; a missing node reads as zero.
class VersionVector {
public:
    VersionVector() = default;

    std::uint64_t counter(const NodeId& n) const;
    void set(const NodeId& n, std::uint64_t c);  // c == 0 erases the entry
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::map<NodeId, std::uint64_t>& entries() const { return entries_; }

    /// Canonical wire/CSV encoding: "A:2,B:3", sorted by node id.
    std::string to_text() const;
    static VersionVector from_text(const std::string& text);  // BadRequest on garbage

    bool operator==(const VersionVector&) const = default;

private:
    std::map<NodeId, std::uint64_t> entries_;
};

/// Standard partial order; Concurrent iff neither side dominates.
Ordering compare(const VersionVector& a, const VersionVector& b);

/// Pointwise maximum. Commutative, associative, idempotent; {} is identity.
VersionVector merge(const VersionVector& a, const VersionVector& b);

/// Counter for n bumped by one, all other entries unchanged.
VersionVector increment(const VersionVector& v, const NodeId& n);

}  // namespace enoki
