#include "duallift/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace duallift {
namespace {

std::atomic<LogLevel> g_level{LogLevel::kWarning};
std::mutex g_mutex;

void emit(LogLevel level, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(g_level.load())) return;
  std::lock_guard lock(g_mutex);
  std::clog << "[" << tag << "] " << msg << "\n";
}

}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warning(std::string_view msg) { emit(LogLevel::kWarning, "warn", msg); }
void log_info(std::string_view msg) { emit(LogLevel::kInfo, "info", msg); }
void log_debug(std::string_view msg) { emit(LogLevel::kDebug, "debug", msg); }

}  // namespace duallift
