#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <string_view>

namespace star {

enum class LogLevel { Debug, Info, Warn };

using LogSink = std::function<void(LogLevel, std::string_view)>;

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::Info;
  return level;
}

inline void set_log_level(LogLevel level) { log_level() = level; }

inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, std::string_view msg) {
    std::clog << (level == LogLevel::Warn ? "[warn] " : "[info] ") << msg << '\n';
  };
  return sink;
}

inline void log(LogLevel level, std::string_view msg) {
  if (level < log_level()) return;
  if (log_sink()) log_sink()(level, msg);
}

inline void log_info(std::string_view msg) { log(LogLevel::Info, msg); }
inline void log_warn(std::string_view msg) { log(LogLevel::Warn, msg); }

}  // namespace star
