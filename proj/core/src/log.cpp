#include "transrec/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace transrec::log {
namespace {

Level from_env() {
  const char* env = std::getenv("TRANSREC_LOG");
  if (!env) return Level::Info;
  const std::string_view v(env);
  if (v == "debug") return Level::Debug;
  if (v == "warn") return Level::Warn;
  if (v == "error") return Level::Error;
  if (v == "off") return Level::Off;
  return Level::Info;
}

std::atomic<Level>& threshold() {
  static std::atomic<Level> level{from_env()};
  return level;
}

void emit(Level lvl, std::string_view tag, const std::string& msg) {
  if (lvl < threshold().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[transrec " << tag << "] " << msg << '\n';
}

}  // namespace

void set_level(Level level) { threshold().store(level); }
Level level() { return threshold().load(); }

void debug(const std::string& msg) { emit(Level::Debug, "debug", msg); }
void info(const std::string& msg) { emit(Level::Info, "info", msg); }
void warn(const std::string& msg) { emit(Level::Warn, "warn", msg); }
void error(const std::string& msg) { emit(Level::Error, "error", msg); }

}  // namespace transrec::log
