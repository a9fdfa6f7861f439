#pragma once

#include <iosfwd>

namespace fibsim::cli {

/// Entry point of the `fibsim` tool. Exit codes: 0 success, 1 runtime failure,
/// 2 malformed configuration or input. Errors go to `err` as one JSON object.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace fibsim::cli
