#pragma once

#include <string_view>

namespace xproto::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, quiet = 4 };

void set_level(Level level);
Level level();

// All log output goes to stderr; stdout is reserved for machine-readable results.
void debug(std::string_view msg);
void info(std::string_view msg);
void warn(std::string_view msg);
void error(std::string_view msg);

}  // namespace xproto::log
