#pragma once

#include <iosfwd>

namespace mddc::cli {

// Entry point shared by the executable and the tests. Returns the process
// exit code; messages go to `out` and `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mddc::cli
