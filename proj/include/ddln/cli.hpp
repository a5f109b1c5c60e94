#pragma once

#include <iosfwd>

namespace ddln {

/// Entry point of the `ddln` tool. Subcommands: simulate, crossings,
/// convergence, bias, paramcheck. Returns 0 when every check passes,
/// 1 when a check fails (or a run errors out), 2 on usage errors.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ddln
