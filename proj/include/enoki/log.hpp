#pragma once

#include <string>

namespace enoki::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Current level, read once from ENOKI_LOG (error|warn|info|debug).
Level level();

/// Line-oriented output on stderr: `ts level module message`.
void write(Level lv, const std::string& module, const std::string& msg);

void error(const std::string& module, const std::string& msg);
void warn(const std::string& module, const std::string& msg);
void info(const std::string& module, const std::string& msg);
void debug(const std::string& module, const std::string& msg);

}  // namespace enoki::log
