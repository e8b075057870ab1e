// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evgs/error.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace evgs {

/// Flat `key = value` document. Blank lines and lines starting with '#' are
/// ignored; keys are unique.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::string_view text, const std::string &origin = "config") {
        KeyValueConfig cfg;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineNo = 0;
        while (std::getline(in, line)) {
            ++lineNo;
            const std::string t = trim(line);
            if (t.empty() || t.front() == '#') {
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) {
                throw DataError(origin + ":" + std::to_string(lineNo) + ": expected key=value");
            }
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            if (key.empty()) {
                throw DataError(origin + ":" + std::to_string(lineNo) + ": empty key");
            }
            if (!cfg.values_.emplace(key, value).second) {
                throw DataError(origin + ":" + std::to_string(lineNo) + ": duplicate key '" + key +
                                "'");
            }
            cfg.order_.push_back(key);
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string &path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw DataError("cannot open " + path);
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    bool has(const std::string &key) const { return values_.count(key) != 0; }
    const std::vector<std::string> &keys() const { return order_; }

    std::string getString(const std::string &key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            throw DataError("missing key '" + key + "'");
        }
        return it->second;
    }

    double getDouble(const std::string &key) const {
        const std::string v = getString(key);
        double out = 0.0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
            throw DataError("key '" + key + "': '" + v + "' is not a number");
        }
        return out;
    }

    double getDouble(const std::string &key, double fallback) const {
        return has(key) ? getDouble(key) : fallback;
    }

    long long getInt(const std::string &key) const {
        const std::string v = getString(key);
        long long out = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
            throw DataError("key '" + key + "': '" + v + "' is not an integer");
        }
        return out;
    }

    long long getInt(const std::string &key, long long fallback) const {
        return has(key) ? getInt(key) : fallback;
    }

    /// Rejects keys outside `allowed`, naming the first offender.
    void requireKnownKeys(const std::set<std::string> &allowed) const {
        for (const std::string &k : order_) {
            if (!allowed.count(k)) {
                throw DataError("unknown key '" + k + "'");
            }
        }
    }

    void set(const std::string &key, const std::string &value) {
        if (values_.emplace(key, value).second) {
            order_.push_back(key);
        } else {
            values_[key] = value;
        }
    }

    void set(const std::string &key, double value) { set(key, formatNumber(value)); }

    /// One `key=value` line per entry, in insertion order.
    std::string serialize() const {
        std::string out;
        for (const std::string &k : order_) {
            out += k + "=" + values_.at(k) + "\n";
        }
        return out;
    }

    /// Shortest text that parses back to the same double.
    static std::string formatNumber(double value) {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof(buf), value);
        return std::string(buf, res.ptr);
    }

  private:
    static std::string trim(const std::string &s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) {
            return {};
        }
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

} // namespace evgs
