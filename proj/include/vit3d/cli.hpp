#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vit3d {

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitNumeric = 4,
};

// Subcommands: synth, prep, split, train, finetune, eval, search, scaling, params.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "88301570" -> "88,301,570"
std::string group_thousands(long long n);

}  // namespace vit3d
