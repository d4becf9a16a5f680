#pragma once

#include <ostream>

namespace sagent {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailed = 1,      // trajectory failed or unexpected error
  kExitUsage = 2,       // bad command line or precondition
  kExitConfig = 3,      // invalid configuration
  kExitBackend = 4,     // model or search backend error
  kExitData = 5,        // dataset, template or integrity error
  kExitIo = 6,          // file system error
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sagent
