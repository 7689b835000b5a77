#pragma once

namespace curio::cli {

/// Entry point of the command-line tool. Returns the process exit status:
/// 0 success, 2 invalid input, 3 IO failure, 4 numeric failure.
int run(int argc, char** argv);

}  // namespace curio::cli
