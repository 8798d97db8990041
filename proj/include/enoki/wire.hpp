#pragma once

#include <nlohmann/json.hpp>

#include "enoki/kvstore.hpp"

namespace enoki::wire {

/// Entry metadata without the value; the value rides in the frame's
/// binary section on hot-path messages.
nlohmann::json entry_meta(const kv::Entry& e);
kv::Entry entry_from_meta(const nlohmann::json& j, std::string value);

/// Full entry with base64 value, for bootstrap state transfer.
nlohmann::json entry_b64(const kv::Entry& e);
kv::Entry entry_from_b64(const nlohmann::json& j);

}  // namespace enoki::wire
