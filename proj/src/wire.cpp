#include "enoki/wire.hpp"

#include "enoki/util.hpp"

namespace enoki::wire {

nlohmann::json entry_meta(const kv::Entry& e) {
    return {{"key", e.key},
            {"version", e.version.to_text()},
            {"writer", e.writer.name},
            {"write_ts", e.write_ts},
            {"tombstone", e.tombstone}};
}

kv::Entry entry_from_meta(const nlohmann::json& j, std::string value) {
    kv::Entry e;
    e.key = j.at("key").get<std::string>();
    e.version = VersionVector::from_text(j.at("version").get<std::string>());
    e.writer = NodeId(j.at("writer").get<std::string>());
    e.write_ts = j.at("write_ts").get<Timestamp>();
    e.tombstone = j.at("tombstone").get<bool>();
    e.value = std::move(value);
    return e;
}

nlohmann::json entry_b64(const kv::Entry& e) {
    auto j = entry_meta(e);
    j["value_b64"] = util::base64_encode(e.value);
    return j;
}

kv::Entry entry_from_b64(const nlohmann::json& j) {
    auto value = util::base64_decode(j.at("value_b64").get<std::string>());
    if (!value) fail(ErrorKind::BadRequest, "bad base64 entry value");
    return entry_from_meta(j, std::move(*value));
}

}  // namespace enoki::wire
