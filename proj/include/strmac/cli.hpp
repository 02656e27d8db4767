#pragma once
// Command-line surface. run() is in-process callable (the determinism
// tests drive it directly) and returns the process exit code: 0 success,
// 2 validation/usage error, 1 internal error.

#include <string>
#include <vector>

namespace strmac::cli {

int run(std::vector<std::string> args);

} // namespace strmac::cli
