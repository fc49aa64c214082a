#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace protum::cli {

enum ExitCode : int {
    kSuccess = 0,
    kValidationError = 2,
    kDataFormatError = 3,
    kTrainingFailure = 4,
};

/// Runs one invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protum::cli
