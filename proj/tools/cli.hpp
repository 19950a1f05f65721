#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace madun::cli {

// Exit codes shared by every subcommand.
inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;     // data, config, load or divergence error
inline constexpr int exit_usage = 2;       // unknown subcommand or flag, bad flag value
inline constexpr int exit_internal = 3;    // contract violation or unexpected exception
inline constexpr int exit_interrupted = 130;

// Runs one command line; `args` excludes the program name.
int run(std::vector<std::string> const &args, std::ostream &out, std::ostream &err);

// Quick oracle and gradient checks; returns the number of failed checks.
int selftest(std::ostream &out);

} // namespace madun::cli
