#include "cass/common.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace cass {

namespace {

LogLevel level_from_env() {
    const char* env = std::getenv("CASS_LOG");
    if (!env) return LogLevel::Error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    if (std::strcmp(env, "info") == 0) return LogLevel::Info;
    return LogLevel::Error;
}

std::atomic<LogLevel> g_level{level_from_env()};
std::atomic<int> g_threads{1};

}  // namespace

LogLevel log_level() { return g_level.load(); }
void set_log_level(LogLevel lvl) { g_level.store(lvl); }

void log_error(const std::string& msg) {
    std::fprintf(stderr, "[cass:error] %s\n", msg.c_str());
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[cass:info] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "[cass:debug] %s\n", msg.c_str());
}

int max_threads() { return g_threads.load(); }

void set_max_threads(int n) {
    if (n < 1) n = 1;
    g_threads.store(n);
}

}  // namespace cass
