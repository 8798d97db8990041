#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace enoki::util {

std::string base64_encode(std::string_view bytes);
std::optional<std::string> base64_decode(std::string_view text);

/// "v-%06u" style zero-padded sequence key; lexicographic == numeric order.
std::string seq_key(std::string_view prefix, std::uint64_t n);

/// Mean rendered as a decimal string with trailing zeros stripped but at
/// least one fractional digit ("4.0", "5.5", "2.333333").
std::string format_mean(double mean);

std::optional<std::uint64_t> parse_u64(std::string_view s);

/// Splits "host:port"; returns nullopt unless the port parses.
std::optional<std::pair<std::string, std::uint16_t>> split_host_port(const std::string& addr);

}  // namespace enoki::util
