#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "lowcal/rng.hpp"
#include "lowcal/tensor.hpp"

namespace lowcal {

struct GradCheckResult {
  int probes = 0;
  int failures = 0;
  double max_rel_error = 0.0;
  bool ok() const { return probes > 0 && failures == 0; }
};

/// Compares analytic gradients of `forward_loss` against central finite
/// differences at randomly probed coordinates of `leaves`. The numeric side
/// only ever calls the forward pass, so it is independent of the recorded
/// backward closures it checks.
GradCheckResult gradient_check(const std::function<Tensor()>& forward_loss,
                               const std::vector<Tensor>& leaves, int probes, Rng& rng,
                               double step = 1e-4, double tolerance = 1e-3);

/// Op-by-op sweep plus the three losses and a full-pipeline case on a
/// 2-sample composed batch. Logs one line per case; returns true when every
/// probe passes.
bool run_gradient_check_suite(std::ostream& out);

}  // namespace lowcal
