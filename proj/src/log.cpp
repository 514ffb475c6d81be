#include "thermoq/log.hpp"

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace thermoq {

spdlog::logger& logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto lg = spdlog::stderr_color_mt("thermoq");
        lg->set_level(spdlog::level::warn);
        if (const char* env = std::getenv("THERMOQ_LOG")) {
            lg->set_level(spdlog::level::from_str(env));
        }
        lg->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
        return lg;
    }();
    return *instance;
}

} // namespace thermoq
