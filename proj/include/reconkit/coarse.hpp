#pragma once

#include <functional>

#include "reconkit/operators.hpp"

namespace reconkit {

enum class CoarsePath { generic, kernel_downscaled, mask_downscaled };

struct CoarseOptions {
  /// Use the downscaled-kernel / downscaled-mask operators where the base allows it.
  bool fast_paths = false;
  UpsamplerKind upsampler = UpsamplerKind::kaiser_sinc;
  /// Power-iteration budget for the unit-norm rescaling.
  int norm_iters = 1000;
  double norm_tol = 1e-12;
};

/// Operator acting on the grid of scale s, together with the map that carries a
/// base measurement into its range.
struct CoarseOperator {
  std::size_t scale = 0;
  CoarsePath path = CoarsePath::generic;
  OperatorHandle op;
  /// Base-range measurement -> op range. Identity on the generic path.
  std::function<Tensor(const Tensor&)> restrict_measurement;
  /// Transpose of restrict_measurement.
  std::function<Tensor(const Tensor&)> restrict_transpose;

  /// A_s^T applied to a base measurement.
  Tensor back_project(const Tensor& y) const { return op.adjoint(restrict_measurement(y)); }
};

/// A_s = A U_s rescaled to unit norm (generic path), or the fast variants for
/// blur and inpainting operators when `options.fast_paths` is set.
CoarseOperator make_coarse(const OperatorHandle& base, std::size_t scale,
                           const CoarseOptions& options = {});

/// Kernel for the 2^scale coarser grid: taps splatted bilinearly at offset / 2^scale,
/// renormalized to sum 1.
Tensor downscale_kernel(const Tensor& kernel, std::size_t scale);

}  // namespace reconkit
