#include "trinet/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace trinet::log {

namespace {
std::atomic<Level> g_level{Level::kInfo};
std::mutex g_mutex;
thread_local std::size_t t_warnings = 0;

void emit(Level lvl, const char* tag, const std::string& msg) {
  if (lvl < g_level.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << '[' << tag << "] " << msg << '\n';
}
}  // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

void info(const std::string& msg) { emit(Level::kInfo, "info", msg); }

void warning(const std::string& msg) {
  ++t_warnings;
  emit(Level::kWarning, "warn", msg);
}

void error(const std::string& msg) { emit(Level::kError, "error", msg); }

std::size_t warning_count() { return t_warnings; }
void reset_warning_count() { t_warnings = 0; }

}  // namespace trinet::log
