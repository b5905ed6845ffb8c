#pragma once

#include <stdexcept>
#include <string>

namespace tokleak {

enum class errc {
    // gguf
    bad_magic,
    unsupported_version,
    truncated_file,
    duplicate_tensor_name,
    misaligned_offset,
    missing_vocab_key,
    non_string_vocab_entry,
    no_such_tensor,
    indivisible_size,
    token_out_of_range,
    unknown_dtype,
    vocab_size_mismatch,
    // probe
    unsupported_platform,
    unmapped_address,
    distributions_overlap,
    region_too_small,
    // replay
    trace_token_out_of_range,
    file_mismatch,
    // monitor
    empty_set,
    not_calibrated,
    // simulator
    empty_grid,
    empty_sizes,
    // planner
    uncovered_character,
    empty_corpus,
    set_size_zero,
    // reconstruct
    unsorted_input,
    // generic
    invalid_argument,
    io_error,
};

const char* errc_name(errc code);

class error : public std::runtime_error {
public:
    error(errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    errc code() const { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) {
    throw error(code, msg);
}

} // namespace tokleak
