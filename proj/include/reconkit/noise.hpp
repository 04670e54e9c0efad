#pragma once

#include <cstdint>
#include <optional>

#include "reconkit/rng.hpp"
#include "reconkit/tensor.hpp"

namespace reconkit {

/// Poisson-Gaussian noise levels: sigma is the Gaussian standard deviation,
/// gamma the Poisson gain (0 disables the Poisson part).
struct NoiseParams {
  double sigma = 0.0;
  double gamma = 0.0;
};

/// y = gamma * Poisson(clean / gamma) + sigma * n. With gamma > 0, negative clean
/// values are clamped to 0 and `clamped` (if given) is set.
Tensor sample_noise(const Tensor& clean, const NoiseParams& params, std::uint64_t seed,
                    bool* clamped = nullptr);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Absent ranges mean "no noise of that type".
struct NoiseRanges {
  std::optional<Range> sigma;
  std::optional<Range> gamma;
};

NoiseParams sample_params(const NoiseRanges& ranges, Rng& rng);

}  // namespace reconkit
