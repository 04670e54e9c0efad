#pragma once

#include <functional>
#include <vector>

#include "reconkit/group.hpp"
#include "reconkit/model.hpp"
#include "reconkit/problem.hpp"

namespace reconkit {

/// Value-only reconstruction R(y, A, sigma, gamma).
using ValueReconstructor =
    std::function<Tensor(const Tensor& y, const OperatorHandle& op, const NoiseParams& noise)>;

/// Wraps a model; the operator is prepared once per distinct operator instance.
ValueReconstructor model_value_reconstructor(const RamModel& model);

struct BootstrapSample {
  Tensor estimate;
  std::vector<Tensor> replicates;
  std::vector<ImageTransform> transforms;
  std::uint64_t seed = 0;
  /// Reconstructor calls made to produce this sample.
  std::size_t evaluations = 0;
};

/// Equivariant bootstrap: x = R(y); for each replicate draw T, resample
/// y_i ~ gamma Poisson(A T x / gamma) + sigma n and set x_i = T^-1 R(y_i).
/// Replicate i depends only on (seed, i), so results do not depend on `threads`
/// (0 = RECONKIT_THREADS or 1).
BootstrapSample equivariant_bootstrap(const ValueReconstructor& r, const ProblemInstance& inst,
                                      const TransformGroup& group, std::size_t replicates,
                                      std::uint64_t seed, std::size_t threads = 0);

/// (1/N) sum_i (x_i - x)^2, averaged over channels: shape (1, H, W).
Tensor pixelwise_errors(const BootstrapSample& sample);

/// ||x_i - x||_2 for every replicate.
std::vector<double> replicate_deviations(const BootstrapSample& sample);

/// Radius of the level-alpha ball: the ceil(alpha N)-th smallest deviation;
/// negative (empty region) for alpha == 0.
double deviation_quantile(std::vector<double> deviations, double level);

struct CoveragePoint {
  double nominal = 0.0;
  double empirical = 0.0;
};

/// Fraction of ground truths inside the bootstrap ball, per nominal level.
std::vector<CoveragePoint> coverage_curve(const ValueReconstructor& r,
                                          const std::vector<ProblemInstance>& instances,
                                          const TransformGroup& group, std::size_t replicates,
                                          const std::vector<double>& levels, std::uint64_t seed,
                                          std::size_t threads = 0);

}  // namespace reconkit
