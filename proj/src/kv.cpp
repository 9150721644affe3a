// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/kv.hpp"

#include "moce/error.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

namespace moce {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what)
{
    throw ConfigError("'" + key + "': '" + value + "' is not " + what);
}

} // namespace

KeyValues read_key_values(std::istream& is, const std::string& origin)
{
    KeyValues kv;
    std::string line;
    std::size_t number = 0;
    while (std::getline(is, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(number) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
        if (!kv.emplace(key, trim(t.substr(eq + 1))).second)
            throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key +
                              "'");
    }
    return kv;
}

void write_key_values(std::ostream& os, const KeyValues& kv)
{
    for (const auto& [k, v] : kv)
        os << k << " = " << v << '\n';
}

std::size_t parse_size(const std::string& key, const std::string& value)
{
    return static_cast<std::size_t>(parse_u64(key, value));
}

std::uint64_t parse_u64(const std::string& key, const std::string& value)
{
    std::uint64_t out = 0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (value.empty() || ec != std::errc() || ptr != end)
        bad_value(key, value, "a non-negative integer");
    return out;
}

double parse_double(const std::string& key, const std::string& value)
{
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        bad_value(key, value, "a number");
    }
    if (used != value.size() || !std::isfinite(out))
        bad_value(key, value, "a finite number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes")
        return true;
    if (value == "false" || value == "0" || value == "no")
        return false;
    bad_value(key, value, "a boolean");
}

std::string format_double(double v)
{
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace moce
