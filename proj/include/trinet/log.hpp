#pragma once

#include <cstddef>
#include <string>

namespace trinet::log {

enum class Level { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kOff = 4 };

void set_level(Level level);
Level level();

void info(const std::string& msg);
void warning(const std::string& msg);
void error(const std::string& msg);

// Number of warnings emitted on this thread since start (or last reset).
std::size_t warning_count();
void reset_warning_count();

}  // namespace trinet::log
