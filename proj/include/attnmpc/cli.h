// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNMPC_CLI_H_
#define ATTNMPC_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace attnmpc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

// args excludes the program name; the first positional is the subcommand.
// The last line written to `out` is "status=<ok|usage_error|numerical_failure>
// command=<name> ..." in every case.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attnmpc

#endif  // ATTNMPC_CLI_H_
