#pragma once

#include <spdlog/spdlog.h>

namespace thermoq {

// Library logger; level taken from THERMOQ_LOG (trace, debug, info, warn,
// error, off). Defaults to warn.
spdlog::logger& logger();

} // namespace thermoq
