#pragma once

#include <iosfwd>

namespace redloop {

// Entry point of the `redloop` binary. Returns the process exit status.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace redloop
