#include "vppflex/log.hpp"

#include <iostream>
#include <mutex>

namespace vppflex {

namespace {
std::mutex g_mutex;
WarningHandler& handler() {
  static WarningHandler h = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  return h;
}
}  // namespace

WarningHandler set_warning_handler(WarningHandler h) {
  std::lock_guard<std::mutex> lock(g_mutex);
  WarningHandler prev = std::move(handler());
  handler() = std::move(h);
  return prev;
}

void warn(const std::string& message) {
  std::lock_guard<std::mutex> lock(g_mutex);
  if (handler()) handler()(message);
}

}  // namespace vppflex
