#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace transrec::cli {

/// Entry point of the `transrec` tool. Returns the process exit code:
/// 0 success, 1 configuration error, 2 data error, 3 training divergence,
/// 4 verification failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace transrec::cli
