#pragma once

#include <string>
#include <vector>

namespace rnnt::cli {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kDivergence = 4 };

/// Parses argv and runs one of datagen, train, decode, eval, inspect.
int run(const std::vector<std::string>& args);

}  // namespace rnnt::cli
