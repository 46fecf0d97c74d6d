#pragma once

#include "bnet/hocbf.hpp"

namespace bnet {

/// Finite-difference reference for lie_derivatives. Uses only barrier_value
/// and the model vector field: the barrier is sampled along short RK4 flows
/// of x' = f(x) + g u (u = 0 and unit controls) and differentiated in time
/// with symmetric stencils and two levels of Richardson extrapolation.
/// `eps` is the largest time step of the stencil (s).
LieDerivatives numeric_lie_oracle(const BarrierSpec& spec, const CurvilinearState& state,
                                  const ReferencePath& path, const VehicleParams& params,
                                  double eps = 1e-2);

}  // namespace bnet
