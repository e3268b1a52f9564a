#pragma once

#include <iosfwd>

namespace umlab::cli {

/// Entry point behind the umlab executable. Returns 0 on success, 1 on a
/// usage error, 2 on a data or format error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace umlab::cli
