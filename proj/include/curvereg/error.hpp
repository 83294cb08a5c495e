#ifndef CURVEREG_ERROR_HPP
#define CURVEREG_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace curvereg {

/// Failure categories. The CLI maps each one to a distinct exit status.
enum class ErrorCode {
    invalid_basis = 10,
    domain = 11,
    invalid_warp = 12,
    parameter = 13,
    numerical = 14,
    max_iterations = 15,
    unsupported = 16,
    io = 17,
    parse = 18,
    time_limit = 19,
    usage = 2,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::invalid_basis: return "invalid-basis";
    case ErrorCode::domain: return "domain";
    case ErrorCode::invalid_warp: return "invalid-warp";
    case ErrorCode::parameter: return "parameter";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::max_iterations: return "max-iterations";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::time_limit: return "time-limit";
    case ErrorCode::usage: return "usage";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + " error: " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace curvereg

#endif
