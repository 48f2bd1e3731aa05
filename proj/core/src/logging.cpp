#include "ampattn/logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace ampattn {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("AMPATTN_LOG");
    if (!env) return LogLevel::info;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

static std::string vformat(const char* fmt, va_list ap) {
  va_list ap2;
  va_copy(ap2, ap);
  int n = std::vsnprintf(nullptr, 0, fmt, ap2);
  va_end(ap2);
  if (n < 0) return {};
  std::string out(static_cast<size_t>(n), '\0');
  std::vsnprintf(out.data(), out.size() + 1, fmt, ap);
  return out;
}

std::string strfmt(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  std::string out = vformat(fmt, ap);
  va_end(ap);
  return out;
}

static void emit(const char* tag, const char* fmt, va_list ap) {
  std::string msg = vformat(fmt, ap);
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

void log_error(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  emit("error", fmt, ap);
  va_end(ap);
}

void log_info(const char* fmt, ...) {
  if (log_level() < LogLevel::info) return;
  va_list ap;
  va_start(ap, fmt);
  emit("info", fmt, ap);
  va_end(ap);
}

void log_debug(const char* fmt, ...) {
  if (log_level() < LogLevel::debug) return;
  va_list ap;
  va_start(ap, fmt);
  emit("debug", fmt, ap);
  va_end(ap);
}

}  // namespace ampattn
