#pragma once

// key=value run configuration files: one key per line, '#' comments.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace pulsebell {

class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig from_file(const std::string& path);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;

    // Throws if a key outside `allowed` is present; catches typos early.
    void require_known_keys(const std::set<std::string>& allowed) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace pulsebell
