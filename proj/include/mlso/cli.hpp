#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mlso {

/// Command-line driver: `train`, `eval`, `verify`. Returns the process exit
/// code: 0 ok, 1 verification or runtime failure, 2 config error,
/// 3 checkpoint error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlso
