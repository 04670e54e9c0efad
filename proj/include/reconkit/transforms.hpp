#pragma once

#include <complex>
#include <vector>

#include "reconkit/tensor.hpp"

namespace reconkit {

using cplx = std::complex<double>;

/// In-place 1-D DFT of `data` (length n) with stride. Radix-2 when n is a
/// power of two, direct O(n^2) summation otherwise. Orthonormal scaling.
void dft1(cplx* data, std::size_t n, std::size_t stride, bool inverse);

/// Orthonormal 2-D DFT of a complex image stored as (2, H, W) = (re, im).
Tensor dft2(const Tensor& x);
Tensor idft2(const Tensor& x);
/// Same transform through the direct O(n^2)-per-axis path, for any extents.
Tensor dft2_reference(const Tensor& x, bool inverse = false);

bool is_power_of_two(std::size_t n);

/// Row-major n x n orthonormal DST-II matrix S, so that S * S^T = I.
std::vector<double> dst2_matrix(std::size_t n);

}  // namespace reconkit
