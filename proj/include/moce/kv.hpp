// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` text used by run configs and checkpoint manifests.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

namespace moce {

using KeyValues = std::map<std::string, std::string>;

/// One `key = value` per line; blank lines and `#` comments are skipped.
/// Duplicate keys and malformed lines are ConfigErrors.
KeyValues read_key_values(std::istream& is, const std::string& origin);
void write_key_values(std::ostream& os, const KeyValues& kv);

std::size_t parse_size(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

} // namespace moce
