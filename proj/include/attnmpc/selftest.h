// SPDX-License-Identifier: Apache-2.0
//
// Quick runtime self-check: gradient checks for every model family, the
// attention layers against a plain-loop evaluation and feeder power balance.

#ifndef ATTNMPC_SELFTEST_H_
#define ATTNMPC_SELFTEST_H_

#include <cstdint>
#include <string>
#include <vector>

namespace attnmpc {

struct SelftestCheck {
  std::string name;
  double value = 0.0;  // error measure compared against the limit
  double limit = 0.0;
  bool passed = false;
};

std::vector<SelftestCheck> run_selftest(std::uint64_t seed = 7);

}  // namespace attnmpc

#endif  // ATTNMPC_SELFTEST_H_
