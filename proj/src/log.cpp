#include "quadplan/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace quadplan {
namespace log {

namespace {

Level g_threshold = []() {
  const char* env = std::getenv("QUADPLAN_LOG");
  if (!env) return Level::Warn;
  std::string s(env);
  if (s == "error") return Level::Error;
  if (s == "warn") return Level::Warn;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}();

std::mutex g_mutex;

const char* tag(Level lv) {
  switch (lv) {
    case Level::Error: return "error";
    case Level::Warn: return "warn";
    case Level::Info: return "info";
    default: return "debug";
  }
}

}  // namespace

Level threshold() { return g_threshold; }

void setThreshold(Level lv) { g_threshold = lv; }

void write(Level lv, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[quadplan:" << tag(lv) << "] " << msg << "\n";
}

}  // namespace log
}  // namespace quadplan
