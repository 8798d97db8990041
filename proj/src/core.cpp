#include "enoki/core.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

namespace enoki {

const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::NotFound: return "NotFound";
        case ErrorKind::AlreadyExists: return "AlreadyExists";
        case ErrorKind::Conflict: return "Conflict";
        case ErrorKind::Unavailable: return "Unavailable";
        case ErrorKind::Timeout: return "Timeout";
        case ErrorKind::BadRequest: return "BadRequest";
        case ErrorKind::Internal: return "Internal";
    }
    return "Internal";
}

std::optional<ErrorKind> parse_error_kind(const std::string& s) {
    static const std::pair<const char*, ErrorKind> table[] = {
        {"NotFound", ErrorKind::NotFound},
        {"AlreadyExists", ErrorKind::AlreadyExists},
        {"Conflict", ErrorKind::Conflict},
        {"Unavailable", ErrorKind::Unavailable},
        {"Timeout", ErrorKind::Timeout},
        {"BadRequest", ErrorKind::BadRequest},
        {"Internal", ErrorKind::Internal},
    };
    for (const auto& [name, kind] : table) {
        if (s == name) return kind;
    }
    return std::nullopt;
}

EnokiError::EnokiError(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

void fail(ErrorKind kind, const std::string& detail) { throw EnokiError(kind, detail); }

bool is_token(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isalnum(c) != 0 || c == '-';
    });
}

Timestamp now_micros() {
    using namespace std::chrono;
    static const auto wall0 =
        duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
    static const auto mono0 = steady_clock::now();
    const auto offset = duration_cast<microseconds>(steady_clock::now() - mono0).count();
    return static_cast<Timestamp>(wall0 + offset);
}

const char* to_string(Ordering o) {
    switch (o) {
        case Ordering::Before: return "Before";
        case Ordering::After: return "After";
        case Ordering::Equal: return "Equal";
        case Ordering::Concurrent: return "Concurrent";
    }
    return "Concurrent";
}

std::uint64_t VersionVector::counter(const NodeId& n) const {
    auto it = entries_.find(n);
    return it == entries_.end() ? 0 : it->second;
}

void VersionVector::set(const NodeId& n, std::uint64_t c) {
    if (c == 0) {
        entries_.erase(n);
    } else {
        entries_[n] = c;
    }
}

std::string VersionVector::to_text() const {
    std::string out;
    for (const auto& [node, counter] : entries_) {
        if (!out.empty()) out += ',';
        out += node.name;
        out += ':';
        out += std::to_string(counter);
    }
    return out;
}

VersionVector VersionVector::from_text(const std::string& text) {
    VersionVector v;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const auto part = text.substr(pos, comma - pos);
        const auto colon = part.find(':');
        if (colon == std::string::npos || colon == 0) {
            fail(ErrorKind::BadRequest, "bad version vector: " + text);
        }
        const auto name = part.substr(0, colon);
        if (!is_token(name)) fail(ErrorKind::BadRequest, "bad node id in version vector: " + name);
        std::uint64_t counter = 0;
        try {
            counter = std::stoull(part.substr(colon + 1));
        } catch (const std::exception&) {
            fail(ErrorKind::BadRequest, "bad counter in version vector: " + part);
        }
        v.set(NodeId(name), counter);
        pos = comma + 1;
    }
    return v;
}

Ordering compare(const VersionVector& a, const VersionVector& b) {
    bool a_greater = false;
    bool b_greater = false;
    auto ia = a.entries().begin();
    auto ib = b.entries().begin();
    while (ia != a.entries().end() || ib != b.entries().end()) {
        if (ib == b.entries().end() || (ia != a.entries().end() && ia->first < ib->first)) {
            a_greater = true;
            ++ia;
        } else if (ia == a.entries().end() || ib->first < ia->first) {
            b_greater = true;
            ++ib;
        } else {
            if (ia->second > ib->second) a_greater = true;
            if (ib->second > ia->second) b_greater = true;
            ++ia;
            ++ib;
        }
        if (a_greater && b_greater) return Ordering::Concurrent;
    }
    if (a_greater) return Ordering::After;
    if (b_greater) return Ordering::Before;
    return Ordering::Equal;
}

VersionVector merge(const VersionVector& a, const VersionVector& b) {
    VersionVector out = a;
    for (const auto& [node, counter] : b.entries()) {
        if (counter > out.counter(node)) out.set(node, counter);
    }
    return out;
}

VersionVector increment(const VersionVector& v, const NodeId& n) {
    VersionVector out = v;
    out.set(n, out.counter(n) + 1);
    return out;
}

}  // namespace enoki
