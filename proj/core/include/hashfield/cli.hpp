#pragma once

namespace hashfield {

inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point behind the command-line binary.
/// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run(int argc, const char* const* argv);

}  // namespace hashfield
