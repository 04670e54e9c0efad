#pragma once

#include "reconkit/tensor.hpp"

namespace reconkit {

/// Returned by psnr when the images are identical.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(range^2 / MSE), capped at kPsnrCap.
double psnr(const Tensor& estimate, const Tensor& reference, double data_range = 1.0);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, k1 0.01, k2 0.03),
/// averaged over channels. Inputs are (C, H, W) with H, W >= 11.
double ssim(const Tensor& estimate, const Tensor& reference, double data_range = 1.0);

}  // namespace reconkit
