#pragma once

#include <ostream>

namespace reconkit::cli {

/// Adjoint probes, gradient checks, prox oracle, scale equivariance.
/// Prints one line per check; returns true when all pass.
bool run_selftest(std::ostream& out);

}  // namespace reconkit::cli
