#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace oodcal::cli {

enum ExitCode : int { ok = 0, invalid = 1, usage = 2, data = 3 };

// Entry point shared by the binary and the tests. `args` excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace oodcal::cli
