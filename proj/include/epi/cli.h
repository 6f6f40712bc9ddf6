#pragma once

#include <string>
#include <vector>

#include "epi/error.h"

namespace epi::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;        // uncategorized failure or failed check
inline constexpr int kExitUsage = 2;          // unknown subcommand or flag, bad flag value
inline constexpr int kExitIo = 3;             // missing or unreadable file
inline constexpr int kExitSchema = 4;         // schema name or version mismatch
inline constexpr int kExitParse = 5;          // malformed input file
inline constexpr int kExitInvalid = 6;        // input rejected by the library

int exit_code(ErrorKind kind);

// Runs one subcommand. Errors are reported as a JSON object on stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace epi::cli
