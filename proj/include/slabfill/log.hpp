#ifndef SLABFILL_LOG_HPP
#define SLABFILL_LOG_HPP

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace slabfill {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

// Level comes from SLABFILL_LOG in {error,warn,info,debug}; read once.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("SLABFILL_LOG");
    if (!env) return LogLevel::warn;
    std::string_view s(env);
    if (s == "error") return LogLevel::error;
    if (s == "warn") return LogLevel::warn;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

inline void log_msg(LogLevel lvl, std::string_view tag, const std::string& msg) {
  if (static_cast<int>(lvl) <= static_cast<int>(log_level()))
    std::cerr << "[" << tag << "] " << msg << "\n";
}

inline void log_error(const std::string& msg) { log_msg(LogLevel::error, "error", msg); }
inline void log_warn(const std::string& msg) { log_msg(LogLevel::warn, "warn", msg); }
inline void log_info(const std::string& msg) { log_msg(LogLevel::info, "info", msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::debug, "debug", msg); }

} // namespace slabfill

#endif
