#pragma once

#include <iosfwd>

namespace marat::app {

/// Runs the reference-implementation checks, one line per suite. True if all pass.
bool run_selfcheck(std::ostream& out);

}  // namespace marat::app
