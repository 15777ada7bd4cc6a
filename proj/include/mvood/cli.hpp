#pragma once

namespace mvood {

/// Runs one `mvood` subcommand. Returns 0 on success, 1 on a validation or
/// runtime failure and 2 on a usage error.
int execute(int argc, const char* const* argv);

}  // namespace mvood
