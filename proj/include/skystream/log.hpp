#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

namespace skystream::log {

enum class Level { Off = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

// Reads SKYSTREAM_LOG once: off|error|warn|info|debug or a digit.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("SKYSTREAM_LOG");
    if (!env) return Level::Warn;
    std::string v(env);
    if (v == "off") return Level::Off;
    if (v == "error") return Level::Error;
    if (v == "warn") return Level::Warn;
    if (v == "info") return Level::Info;
    if (v == "debug") return Level::Debug;
    if (v.size() == 1 && v[0] >= '0' && v[0] <= '4') return static_cast<Level>(v[0] - '0');
    return Level::Warn;
  }();
  return level;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

template <typename... Args>
void write(Level l, const char* tag, const Args&... args) {
  if (!enabled(l)) return;
  std::ostringstream os;
  os << "[skystream " << tag << "] ";
  (os << ... << args);
  os << '\n';
  std::cerr << os.str();
}

template <typename... Args> void error(const Args&... a) { write(Level::Error, "error", a...); }
template <typename... Args> void warn(const Args&... a) { write(Level::Warn, "warn", a...); }
template <typename... Args> void info(const Args&... a) { write(Level::Info, "info", a...); }
template <typename... Args> void debug(const Args&... a) { write(Level::Debug, "debug", a...); }

}  // namespace skystream::log
