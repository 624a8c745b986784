#pragma once

#include <iosfwd>

namespace deepbv::cli {

/// Runs one command line. Returns the process exit status; diagnostics go
/// to `err`, results to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deepbv::cli
