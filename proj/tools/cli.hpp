#pragma once

#include <string>
#include <vector>

namespace sail::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kInput = 3;
inline constexpr int kNumeric = 4;
inline constexpr int kInternal = 1;

/// Runs one subcommand; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace sail::cli
