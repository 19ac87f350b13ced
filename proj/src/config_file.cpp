#include "ssdkv/config_file.hpp"

#include <fstream>
#include <sstream>

#include "ssdkv/errors.hpp"

namespace ssdkv {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

ConfigFile ConfigFile::parse_string(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw input_error("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw input_error("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw input_error("config line " + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        cfg.set(key, value);
    }
    return cfg;
}

void ConfigFile::set(const std::string& key, const std::string& value) {
    if (values_.count(key) == 0) items_.emplace_back(key, value);
    else {
        for (auto& kv : items_)
            if (kv.first == key) kv.second = value;
    }
    values_[key] = value;
}

const std::string& ConfigFile::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw input_error("missing config key '" + key + "'");
    return it->second;
}

std::string ConfigFile::get_or(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
}

std::int64_t ConfigFile::get_int(const std::string& key) const {
    try {
        return std::stoll(get(key));
    } catch (const std::logic_error&) {
        throw input_error("config key '" + key + "' is not an integer");
    }
}

std::int64_t ConfigFile::get_int_or(const std::string& key, std::int64_t def) const {
    if (!has(key)) return def;
    return get_int(key);
}

std::uint64_t ConfigFile::get_u64_or(const std::string& key, std::uint64_t def) const {
    if (!has(key)) return def;
    try {
        return std::stoull(get(key));
    } catch (const std::logic_error&) {
        throw input_error("config key '" + key + "' is not an unsigned integer");
    }
}

double ConfigFile::get_double_or(const std::string& key, double def) const {
    if (!has(key)) return def;
    try {
        return std::stod(get(key));
    } catch (const std::logic_error&) {
        throw input_error("config key '" + key + "' is not a number");
    }
}

} // namespace ssdkv
