#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glt/errors.hpp"

namespace glt {

// Plain "key = value" text configuration. '#' starts a comment, blank lines
// are ignored, later assignments win. Keys are dotted, e.g. "train.lr".
class Config {
public:
    Config() = default;

    static Config load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config: " + path);
        Config cfg;
        cfg.parse(is);
        return cfg;
    }

    void parse(std::istream& is) {
        std::string line;
        std::size_t line_number = 0;
        while (std::getline(is, line)) {
            ++line_number;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_number) +
                                  ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(line_number) + ": empty key");
            values_[key] = value;
        }
    }

    // "key=value" override, same syntax as a config line
    void set(const std::string& assignment) {
        const std::size_t eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value");
        values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': bad number '" + it->second + "'");
        }
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': bad integer '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::string v = it->second;
        std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
        if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "off" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "': bad boolean '" + it->second + "'");
    }

    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string token;
        while (std::getline(ss, token, ',')) {
            token = trim(token);
            if (token.empty()) continue;
            try {
                out.push_back(std::stod(token));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': bad list entry '" + token + "'");
            }
        }
        return out;
    }

    std::vector<std::size_t> get_size_list(const std::string& key,
                                           const std::vector<std::size_t>& fallback) const {
        std::vector<double> raw = get_double_list(key, {});
        if (raw.empty() && !has(key)) return fallback;
        std::vector<std::size_t> out;
        for (double v : raw) {
            if (v < 0) throw ConfigError("config key '" + key + "': negative entry");
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0;
        std::size_t b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace glt
