#include "reconkit/group.hpp"

#include <cmath>
#include <vector>

#include "reconkit/errors.hpp"

namespace reconkit {

namespace {

long wrap(long i, long n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// For every output pixel, the flat (i * W + j) index of its source pixel.
std::vector<std::size_t> source_map(const ImageTransform& t, std::size_t h, std::size_t w) {
  const int rot = ((t.rot % 4) + 4) % 4;
  const bool swap = rot % 2 == 1;
  const std::size_t oh = swap ? w : h, ow = swap ? h : w;
  std::vector<std::size_t> src(oh * ow);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      long a = static_cast<long>(i), b = static_cast<long>(t.flip ? ow - 1 - j : j);
      // Undo the quarter turns one at a time; (ch, cw) is the current shape.
      long ch = static_cast<long>(oh), cw = static_cast<long>(ow);
      for (int k = 0; k < rot; ++k) {
        // B = rot90(A): B[a][b] = A[b][W_A - 1 - a], with W_A == ch.
        const long na = b, nb = ch - 1 - a;
        a = na;
        b = nb;
        std::swap(ch, cw);
      }
      a = wrap(a - t.shift_h, static_cast<long>(h));
      b = wrap(b - t.shift_w, static_cast<long>(w));
      src[i * ow + j] = static_cast<std::size_t>(a) * w + static_cast<std::size_t>(b);
    }
  return src;
}

void require_image(const Shape& s) {
  if (s.size() != 3) throw ShapeError("image transforms act on (C, H, W) tensors");
}

Tensor permute(const Tensor& x, const ImageTransform& t, bool inverse) {
  require_image(x.shape());
  const std::size_t c = x.extent(0);
  // The inverse maps an output-shaped tensor back; output_shape is an involution.
  const Shape in = inverse ? t.output_shape(x.shape()) : x.shape();
  const std::size_t h = in[1], w = in[2];
  const auto src = source_map(t, h, w);
  const std::size_t hw = h * w;
  if (!inverse) {
    Tensor out(t.output_shape(x.shape()));
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) out[ch * hw + k] = x[ch * hw + src[k]];
    return out;
  }
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < hw; ++k) out[ch * hw + src[k]] = x[ch * hw + k];
  return out;
}

}  // namespace

Shape ImageTransform::output_shape(const Shape& in) const {
  require_image(in);
  if (((rot % 4) + 4) % 2 == 1) return {in[0], in[2], in[1]};
  return in;
}

Tensor ImageTransform::apply(const Tensor& x) const { return permute(x, *this, false); }

Tensor ImageTransform::inverse(const Tensor& x) const { return permute(x, *this, true); }

ad::Var ImageTransform::apply(const ad::Var& x) const {
  const ImageTransform t = *this;
  return ad::linear_map(
      x, [t](const Tensor& v) { return t.apply(v); }, [t](const Tensor& v) { return t.inverse(v); });
}

ad::Var ImageTransform::inverse(const ad::Var& x) const {
  const ImageTransform t = *this;
  return ad::linear_map(
      x, [t](const Tensor& v) { return t.inverse(v); }, [t](const Tensor& v) { return t.apply(v); });
}

GroupKind parse_group_kind(const std::string& name) {
  if (name == "identity") return GroupKind::identity;
  if (name == "shifts") return GroupKind::shifts;
  if (name == "rotations90" || name == "rotations") return GroupKind::rotations90;
  if (name == "flips") return GroupKind::flips;
  if (name == "composite") return GroupKind::composite;
  throw DataError("unknown transform group '" + name + "'");
}

ImageTransform TransformGroup::sample(Rng& rng, const Shape& image_shape) const {
  require_image(image_shape);
  if (max_shift_fraction < 0.0 || max_shift_fraction > 1.0)
    throw DataError("transform group: max_shift_fraction must be in [0, 1]");
  ImageTransform t;
  const bool square = image_shape[1] == image_shape[2];
  auto shift = [&](std::size_t n) {
    const auto m = static_cast<long>(std::floor(max_shift_fraction * static_cast<double>(n)));
    return static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(2 * m + 1))) - m;
  };
  auto rotation = [&] {
    return square ? static_cast<int>(rng.uniform_int(4)) : 2 * static_cast<int>(rng.uniform_int(2));
  };
  switch (kind) {
    case GroupKind::identity:
      break;
    case GroupKind::shifts:
      t.shift_h = shift(image_shape[1]);
      t.shift_w = shift(image_shape[2]);
      break;
    case GroupKind::rotations90:
      t.rot = rotation();
      break;
    case GroupKind::flips:
      t.flip = rng.bernoulli(0.5);
      break;
    case GroupKind::composite:
      t.shift_h = shift(image_shape[1]);
      t.shift_w = shift(image_shape[2]);
      t.rot = rotation();
      t.flip = rng.bernoulli(0.5);
      break;
  }
  return t;
}

}  // namespace reconkit
