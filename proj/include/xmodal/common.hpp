#pragma once

#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>

namespace xmodal {

// Error taxonomy. The CLI maps these onto process exit codes:
// config_error -> 1, input_error/data_error -> 2, numeric_error -> 3.
struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void log_warn(const std::string& msg) {
    std::cerr << "[warn] " << msg << "\n";
}

inline void log_info(const std::string& msg) {
    std::cerr << "[info] " << msg << "\n";
}

}  // namespace xmodal
