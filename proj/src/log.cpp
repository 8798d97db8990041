#include "enoki/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>

#include "enoki/core.hpp"

namespace enoki::log {

namespace {

Level level_from_env() {
    const char* env = std::getenv("ENOKI_LOG");
    if (env == nullptr) return Level::Info;
    const std::string s(env);
    if (s == "error") return Level::Error;
    if (s == "warn") return Level::Warn;
    if (s == "info") return Level::Info;
    if (s == "debug") return Level::Debug;
    return Level::Info;
}

const char* name(Level lv) {
    switch (lv) {
        case Level::Error: return "error";
        case Level::Warn: return "warn";
        case Level::Info: return "info";
        case Level::Debug: return "debug";
    }
    return "info";
}

std::mutex out_mu;

}  // namespace

Level level() {
    static const Level lv = level_from_env();
    return lv;
}

void write(Level lv, const std::string& module, const std::string& msg) {
    if (lv > level()) return;
    std::lock_guard lock(out_mu);
    std::fprintf(stderr, "%llu %s %s %s\n",
                 static_cast<unsigned long long>(now_micros()), name(lv), module.c_str(),
                 msg.c_str());
}

void error(const std::string& module, const std::string& msg) { write(Level::Error, module, msg); }
void warn(const std::string& module, const std::string& msg) { write(Level::Warn, module, msg); }
void info(const std::string& module, const std::string& msg) { write(Level::Info, module, msg); }
void debug(const std::string& module, const std::string& msg) { write(Level::Debug, module, msg); }

}  // namespace enoki::log
