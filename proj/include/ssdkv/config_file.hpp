#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ssdkv {

/// Flat key-value config with [section] headers. A key inside a section is
/// addressed as "section.key". '#' starts a comment, blank lines ignored.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& def) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int_or(const std::string& key, std::int64_t def) const;
    std::uint64_t get_u64_or(const std::string& key, std::uint64_t def) const;
    double get_double_or(const std::string& key, double def) const;

    /// Insertion-ordered (key, value) pairs, for reproducibility headers.
    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

    void set(const std::string& key, const std::string& value);

private:
    std::map<std::string, std::string> values_;
    std::vector<std::pair<std::string, std::string>> items_;
};

} // namespace ssdkv
