#pragma once

#include <iostream>
#include <string>

#include "lidiff/util.hpp"

namespace lidiff {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

// Level comes from the LIDIFF_LOG environment variable (debug/info/warn/error),
// default info.
LogLevel log_level();

template <typename... Args>
void log_at(LogLevel lvl, const Args&... args) {
  if (lvl < log_level()) return;
  const char* tag = lvl == LogLevel::Debug  ? "debug"
                    : lvl == LogLevel::Info ? "info"
                    : lvl == LogLevel::Warn ? "warn"
                                            : "error";
  std::cerr << "[" << tag << "] " << format_msg(args...) << "\n";
}

#define LIDIFF_DEBUG(...) ::lidiff::log_at(::lidiff::LogLevel::Debug, __VA_ARGS__)
#define LIDIFF_INFO(...) ::lidiff::log_at(::lidiff::LogLevel::Info, __VA_ARGS__)
#define LIDIFF_WARN(...) ::lidiff::log_at(::lidiff::LogLevel::Warn, __VA_ARGS__)
#define LIDIFF_ERROR(...) ::lidiff::log_at(::lidiff::LogLevel::Error, __VA_ARGS__)

}  // namespace lidiff
