#pragma once

#include <ostream>

namespace clipnet {

// Full command-line entry point; returns the process exit code
// (0 success, 1 usage/config, 2 data contract, 3 numeric failure).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clipnet
