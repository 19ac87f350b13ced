#pragma once

#include <stdexcept>
#include <string>

namespace ssdkv {

// Error taxonomy shared by all modules. The CLI maps these to exit code 2;
// anything reaching main() that is not one of these is a bug.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct sequencing_error : std::runtime_error {
    explicit sequencing_error(const std::string& msg) : std::runtime_error("sequencing error: " + msg) {}
};

struct consistency_error : std::runtime_error {
    explicit consistency_error(const std::string& msg) : std::runtime_error("consistency error: " + msg) {}
};

struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

} // namespace ssdkv
