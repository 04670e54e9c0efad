#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "reconkit/tensor.hpp"

namespace reconkit {

/// A linear map with a hand-written exact transpose.
class LinearOperator {
 public:
  LinearOperator(Shape domain, Shape range) : domain_(std::move(domain)), range_(std::move(range)) {}
  virtual ~LinearOperator() = default;

  const Shape& domain_shape() const { return domain_; }
  const Shape& range_shape() const { return range_; }

  virtual std::string kind() const = 0;
  virtual Tensor apply(const Tensor& x) const = 0;
  virtual Tensor adjoint(const Tensor& y) const = 0;
  /// A^T A; overridden where a cheaper form exists.
  virtual Tensor normal(const Tensor& x) const { return adjoint(apply(x)); }

 private:
  Shape domain_;
  Shape range_;
};

/// Shared, immutable handle to a LinearOperator with a lazily cached spectral norm.
/// Safe for concurrent use.
class OperatorHandle {
 public:
  OperatorHandle() = default;
  explicit OperatorHandle(std::shared_ptr<const LinearOperator> impl,
                          std::optional<double> known_norm = std::nullopt);

  const Shape& domain_shape() const { return impl_->domain_shape(); }
  const Shape& range_shape() const { return impl_->range_shape(); }
  std::string kind() const { return impl_->kind(); }

  /// Shape-checked application; throws ShapeError on mismatch.
  Tensor apply(const Tensor& x) const;
  Tensor adjoint(const Tensor& y) const;
  Tensor normal(const Tensor& x) const;

  /// Spectral norm, computed once with default power-iteration settings.
  double norm() const;
  std::optional<double> cached_norm() const;

  const LinearOperator& impl() const { return *impl_; }
  const std::shared_ptr<const LinearOperator>& shared_impl() const { return impl_; }
  bool valid() const { return static_cast<bool>(impl_); }

 private:
  struct NormCache {
    std::mutex mutex;
    std::optional<double> value;
  };
  std::shared_ptr<const LinearOperator> impl_;
  std::shared_ptr<NormCache> cache_;
};

/// Power iteration on A^T A. Returns sqrt of the top eigenvalue once its relative
/// change drops below `tol` or `iters` are exhausted; 0 for the zero operator.
double operator_norm(const OperatorHandle& op, int iters = 1000, double tol = 1e-12,
                     std::uint64_t seed = 0);

// --- algebra ---------------------------------------------------------------

OperatorHandle make_identity(const Shape& shape);
OperatorHandle make_scaled(const OperatorHandle& op, double factor);
/// outer ∘ inner.
OperatorHandle make_composed(const OperatorHandle& outer, const OperatorHandle& inner);
/// op scaled to unit spectral norm (unchanged if the norm is 0).
OperatorHandle normalize(const OperatorHandle& op);
/// Same, with an explicit power-iteration budget (the norm of `op` is not cached).
OperatorHandle normalize(const OperatorHandle& op, int iters, double tol);
/// diag(mask) ∘ op, mask over the range of op.
OperatorHandle make_range_masked(const OperatorHandle& op, const Tensor& mask);
/// Elementwise scaling by fixed weights; range == domain == weights.shape().
OperatorHandle make_diagonal(const Tensor& weights);
/// Dense matrix (rows = range size, cols = domain size), row-major.
OperatorHandle make_dense(std::vector<double> matrix, const Shape& domain, const Shape& range);
/// Extracts the (H, W) window at (top, left) from a (C, Hp, Wp) image.
OperatorHandle make_crop(const Shape& padded_shape, std::size_t top, std::size_t left,
                         std::size_t height, std::size_t width);

// --- imaging physics -------------------------------------------------------

/// Valid (unpadded) cross-correlation with a k x k kernel, per channel.
OperatorHandle make_blur(const Tensor& kernel, const Shape& image_shape);
/// Diagonal 0/1 mask, same shape as the image.
OperatorHandle make_inpainting(const Tensor& mask);
/// diag(m) F on complex (2, H, W) images; mask is (H, W) in unshifted k-space order.
OperatorHandle make_mri(const Tensor& mask, const Shape& image_shape);
/// Stacked coils diag(m) F diag(s_l); range (2L, H, W). Maps must satisfy sum |s_l|^2 = 1.
OperatorHandle make_multicoil_mri(const Tensor& mask, const std::vector<Tensor>& smaps);
/// Parallel-beam Radon transform, angles k*pi/num_angles, ceil(sqrt(2) H) detectors.
/// Range (C, num_angles, detectors).
OperatorHandle make_ct_radon(std::size_t num_angles, const Shape& image_shape);

enum class DownsamplingFilter { bicubic, bilinear };
/// Antialias filter (circular boundary) then decimation by `factor`.
OperatorHandle make_downsampling(std::size_t factor, DownsamplingFilter filter,
                                 const Shape& image_shape);
/// Subsampled orthonormal 2-D DST-II of the sign-flipped image. Range (m).
OperatorHandle make_compressed_sensing(const Tensor& sign_mask,
                                       const std::vector<std::size_t>& keep_indices,
                                       const Shape& image_shape);
/// RGGB Bayer selection from (3, H, W) to (1, H, W).
OperatorHandle make_demosaic(const Shape& image_shape);

enum class UpsamplerKind { kaiser_sinc, nearest };
/// 2^scale x upsampler onto `fine_shape` (C, H, W); domain (C, H/2^s, W/2^s).
/// Kaiser-windowed sinc (beta 8, 8 taps per phase) with circular boundary.
OperatorHandle make_upsampler(std::size_t scale, const Shape& fine_shape,
                              UpsamplerKind kind = UpsamplerKind::kaiser_sinc);

// Accessors for operators whose coarse versions have fast paths.
const Tensor* blur_kernel_of(const OperatorHandle& op);
const Tensor* inpainting_mask_of(const OperatorHandle& op);

/// Dense matrix of an operator by probing basis vectors (rows = range size).
std::vector<double> dense_matrix(const OperatorHandle& op);

}  // namespace reconkit
