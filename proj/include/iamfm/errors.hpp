#pragma once

#include <stdexcept>
#include <string>

namespace iamfm {

// Error categories surfaced by the library. Kept coarse on purpose: callers
// branch on the code, humans read the message.
enum class Errc {
    invalid_fidelity,
    shape_mismatch,
    lineage,
    unknown_arm,
    stale_cache,
    io_failure,
    budget_too_small,
    conditioning,
    subspace_violation,
    missing_surrogate,
    no_estimate,
    degenerate_sample,
    bad_config,
    gateway,
    protocol,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
    throw Error(code, what);
}

} // namespace iamfm
