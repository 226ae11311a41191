#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace progtx::cli {

/// Runs one command line (args exclude the program name). Returns the exit
/// code; failures print a single "progtx: error: ..." line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace progtx::cli
