#include "stamp/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace stamp::log {

namespace {
std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void warn(std::string_view message) {
  if (g_level == Level::Quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[stamp] warning: " << message << '\n';
}

void info(std::string_view message) {
  if (g_level != Level::Info) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[stamp] " << message << '\n';
}

}  // namespace stamp::log
