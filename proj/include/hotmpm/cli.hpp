#pragma once

namespace hotmpm {

/// Runs the simulator command line: scene path plus solver/output flags.
/// Returns 0 on success, 2 on flag errors, 1 on runtime errors.
int cli_main(int argc, const char* const* argv);

}  // namespace hotmpm
