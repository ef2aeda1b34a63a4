/**
 * @file log.hpp
 * @brief Minimal stderr logger.
 */

#pragma once

#include <atomic>
#include <cstdio>
#include <string>

namespace tsr {

enum class LogLevel { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };

inline std::atomic<LogLevel>& log_level() {
    static std::atomic<LogLevel> level{LogLevel::Info};
    return level;
}

inline void log_at(LogLevel level, const char* tag, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(log_level().load())) return;
    std::fprintf(stderr, "[tsr][%s] %s\n", tag, msg.c_str());
}

inline void log_warn(const std::string& msg) { log_at(LogLevel::Warn, "warn", msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, "info", msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, "debug", msg); }

}  // namespace tsr
