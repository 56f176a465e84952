#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stainalign::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kRegistrationFailed = 2;
inline constexpr int kInputError = 3;
inline constexpr int kShapeError = 4;

/// Runs one command line (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stainalign::cli
