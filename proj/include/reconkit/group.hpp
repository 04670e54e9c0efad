#pragma once

#include <string>

#include "reconkit/autodiff.hpp"
#include "reconkit/rng.hpp"
#include "reconkit/tensor.hpp"

namespace reconkit {

/// Circular shift, then `rot` quarter turns (counter-clockwise), then an
/// optional left-right flip, on (C, H, W) images. Every transform is a pixel
/// permutation, so the inverse is exact.
struct ImageTransform {
  long shift_h = 0;
  long shift_w = 0;
  int rot = 0;
  bool flip = false;

  bool is_identity() const { return shift_h == 0 && shift_w == 0 && rot == 0 && !flip; }
  /// Output shape for an input shape (H and W swap under odd rotations).
  Shape output_shape(const Shape& in) const;

  Tensor apply(const Tensor& x) const;
  Tensor inverse(const Tensor& x) const;
  ad::Var apply(const ad::Var& x) const;
  ad::Var inverse(const ad::Var& x) const;
};

enum class GroupKind { identity, shifts, rotations90, flips, composite };

GroupKind parse_group_kind(const std::string& name);

struct TransformGroup {
  GroupKind kind = GroupKind::composite;
  /// Shifts are integers in [-f * extent, f * extent].
  double max_shift_fraction = 0.1;

  /// Random element. Odd rotations are only drawn for square images so the
  /// transformed image keeps its shape.
  ImageTransform sample(Rng& rng, const Shape& image_shape) const;
};

}  // namespace reconkit
