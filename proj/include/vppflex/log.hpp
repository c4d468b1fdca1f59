#pragma once

#include <functional>
#include <string>

namespace vppflex {

using WarningHandler = std::function<void(const std::string&)>;

// Replaces the process-wide warning sink (stderr by default). Returns the
// previous handler so tests can restore it.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace vppflex
