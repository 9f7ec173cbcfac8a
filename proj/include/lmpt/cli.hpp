#pragma once

#include <iosfwd>

namespace lmpt {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // a check ran and failed (gradcheck)
  kExitConfig = 2,
  kExitSchema = 3,
  kExitNumerical = 4,
  kExitIo = 5,
};

/// Entry point of the `lmpt` tool: synth, train, predict, eval, medoid, gradcheck.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lmpt
