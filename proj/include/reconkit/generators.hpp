#pragma once

#include <cstdint>
#include <vector>

#include "reconkit/tensor.hpp"

namespace reconkit {

/// Sampled isotropic Gaussian, size x size (odd), normalized to sum 1.
Tensor make_gaussian_kernel(double sigma, std::size_t size);

/// Motion blur from a random smooth 2-D trajectory (Gaussian process with RBF
/// covariance, length scale `length_scale`, amplitude `amplitude`), splatted
/// bilinearly onto a size x size grid and normalized to sum 1.
Tensor make_motion_kernel(double length_scale, double amplitude, std::size_t size,
                          std::uint64_t seed);

/// Preset blur tiers: 0 easy, 1 medium, 2 hard.
struct BlurTier {
  double length_scale;
  double amplitude;
  double gaussian_sigma;
  double noise_sigma;
};
BlurTier motion_tier(int tier);
BlurTier gaussian_tier(int tier);

/// i.i.d. Bernoulli(p) 0/1 mask of the given shape.
Tensor make_bernoulli_mask(const Shape& shape, double p, std::uint64_t seed);

/// Cartesian line mask (H, W) in unshifted k-space: whole columns are kept.
/// The central 8% of lines are always kept, the rest drawn uniformly until
/// round(W / acceleration) lines are kept.
Tensor make_cartesian_mask(std::size_t height, std::size_t width, double acceleration,
                           std::uint64_t seed);

/// `coils` complex maps (2, H, W): Gaussian bumps at equiangular positions with
/// a linear phase, normalized so sum_l |s_l|^2 = 1 at every pixel.
std::vector<Tensor> make_gaussian_smaps(std::size_t coils, std::size_t height,
                                        std::size_t width);

/// Random +-1 signs of the given shape.
Tensor make_sign_mask(const Shape& shape, std::uint64_t seed);

/// `count` distinct indices from [0, n), sorted.
std::vector<std::size_t> make_keep_indices(std::size_t n, std::size_t count, std::uint64_t seed);

}  // namespace reconkit
