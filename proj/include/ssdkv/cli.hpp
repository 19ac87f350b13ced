#pragma once

#include <string>
#include <vector>

namespace ssdkv {

inline constexpr const char* kToolVersion = "ssdkv 1.0.0";

/// Runs one CLI invocation. Returns 0 on success, 1 on usage errors, 2 on
/// input/consistency errors; the error class goes to stderr as one line.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

} // namespace ssdkv
