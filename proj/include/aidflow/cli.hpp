#pragma once

#include <ostream>

namespace aidflow {

/// Entry point of the `aidflow` tool. Returns the process exit code; errors
/// produce a single "error: ..." line on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aidflow
