#include "lidiff/log.hpp"

#include <cstdlib>

namespace lidiff {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("LIDIFF_LOG");
    if (!env) return LogLevel::Info;
    std::string s(env);
    if (s == "debug") return LogLevel::Debug;
    if (s == "info") return LogLevel::Info;
    if (s == "warn") return LogLevel::Warn;
    if (s == "error") return LogLevel::Error;
    return LogLevel::Info;
  }();
  return level;
}

}  // namespace lidiff
