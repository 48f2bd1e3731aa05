#pragma once

#include <cstdarg>
#include <string>

namespace ampattn {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Level from AMPATTN_LOG ({error, info, debug}; default info), read once.
LogLevel log_level();

/// printf-style formatting into a std::string.
std::string strfmt(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

/// Diagnostics go to stderr so stdout stays machine-readable.
void log_error(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void log_info(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void log_debug(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

}  // namespace ampattn
