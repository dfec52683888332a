#pragma once

#include <stdexcept>
#include <string>

namespace flobc {

enum class ErrorCode {
    invalid_argument,
    non_finite,
    shape_mismatch,
    dimension_mismatch,
    empty_dataset,
    idx_bad_magic,
    idx_truncated,
    idx_count_mismatch,
    io,
    decode,
    unknown_trainer,
    stale_update,
    round_closed,
    ledger,
    config,
    deadlock,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::non_finite: return "non_finite";
        case ErrorCode::shape_mismatch: return "shape_mismatch";
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::empty_dataset: return "empty_dataset";
        case ErrorCode::idx_bad_magic: return "idx_bad_magic";
        case ErrorCode::idx_truncated: return "idx_truncated";
        case ErrorCode::idx_count_mismatch: return "idx_count_mismatch";
        case ErrorCode::io: return "io";
        case ErrorCode::decode: return "decode";
        case ErrorCode::unknown_trainer: return "unknown_trainer";
        case ErrorCode::stale_update: return "stale_update";
        case ErrorCode::round_closed: return "round_closed";
        case ErrorCode::ledger: return "ledger";
        case ErrorCode::config: return "config";
        case ErrorCode::deadlock: return "deadlock";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace flobc
