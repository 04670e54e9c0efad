#include "reconkit/coarse.hpp"

#include <cmath>

#include "reconkit/errors.hpp"

namespace reconkit {

namespace {

Tensor block_sum(const Tensor& x, std::size_t f) {
  const std::size_t c_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor out({c_n, h / f, w / f});
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(c, i / f, j / f) += x.at(c, i, j);
  return out;
}

Tensor block_spread(const Tensor& x, std::size_t f) {
  const std::size_t c_n = x.extent(0), h = x.extent(1) * f, w = x.extent(2) * f;
  Tensor out({c_n, h, w});
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(c, i, j) = x.at(c, i / f, j / f);
  return out;
}

CoarseOperator generic(const OperatorHandle& base, std::size_t scale, const CoarseOptions& o) {
  CoarseOperator c;
  c.scale = scale;
  c.path = CoarsePath::generic;
  OperatorHandle composed =
      scale == 0 ? base
                 : make_composed(base, make_upsampler(scale, base.domain_shape(), o.upsampler));
  c.op = normalize(composed, o.norm_iters, o.norm_tol);
  c.restrict_measurement = [](const Tensor& y) { return y; };
  c.restrict_transpose = [](const Tensor& y) { return y; };
  return c;
}

// diag(m) U_nearest rescaled to unit norm, written directly on the coarse grid:
// its normal operator is diag(frac / max frac) with frac the block-averaged mask.
std::optional<CoarseOperator> inpainting_fast(const Tensor& mask, std::size_t scale) {
  const std::size_t f = std::size_t{1} << scale;
  Tensor frac = block_sum(mask, f);
  frac *= 1.0 / static_cast<double>(f * f);
  const double top = max_abs(frac);
  if (top == 0.0) return std::nullopt;
  Tensor d = frac;
  for (double& v : d.storage()) v = std::sqrt(v / top);
  Tensor inv_d = d;
  for (double& v : inv_d.storage()) v = v > 0.0 ? 1.0 / v : 0.0;
  const double s = 1.0 / (static_cast<double>(f) * std::sqrt(top));

  CoarseOperator c;
  c.scale = scale;
  c.path = CoarsePath::mask_downscaled;
  c.op = make_diagonal(d);
  c.restrict_measurement = [mask, inv_d, f, s](const Tensor& y) {
    Tensor z = block_sum(hadamard(mask, y), f);
    z *= s;
    return hadamard(z, inv_d);
  };
  c.restrict_transpose = [mask, inv_d, f, s](const Tensor& z) {
    Tensor y = block_spread(hadamard(z, inv_d), f);
    y *= s;
    return hadamard(mask, y);
  };
  return c;
}

std::optional<CoarseOperator> blur_fast(const Tensor& kernel, const Shape& fine,
                                        std::size_t scale, const CoarseOptions& o) {
  const std::size_t f = std::size_t{1} << scale;
  const Tensor ks = downscale_kernel(kernel, scale);
  const Shape coarse{fine[0], fine[1] / f, fine[2] / f};
  if (ks.extent(0) >= coarse[1] || ks.extent(1) >= coarse[2]) return std::nullopt;
  const std::size_t r_row = (kernel.extent(0) - 1) / 2, r_col = (kernel.extent(1) - 1) / 2;
  const std::size_t rs_row = (ks.extent(0) - 1) / 2, rs_col = (ks.extent(1) - 1) / 2;

  CoarseOperator c;
  c.scale = scale;
  c.path = CoarsePath::kernel_downscaled;
  c.op = normalize(make_blur(ks, coarse), o.norm_iters, o.norm_tol);
  const Shape out = c.op.range_shape();
  const Shape fine_out{fine[0], fine[1] - kernel.extent(0) + 1, fine[2] - kernel.extent(1) + 1};
  const double inv_f = 1.0 / static_cast<double>(f);
  // Coarse output (a, b) is centred on coarse pixel (a + rs), whose f x f fine block
  // holds the centres of fine outputs f (a + rs) + t - r, t in [0, f).
  auto row0 = [=](std::size_t a) { return f * (a + rs_row) - r_row; };
  auto col0 = [=](std::size_t b) { return f * (b + rs_col) - r_col; };
  c.restrict_measurement = [=](const Tensor& y) {
    Tensor z(out);
    for (std::size_t ch = 0; ch < out[0]; ++ch)
      for (std::size_t a = 0; a < out[1]; ++a)
        for (std::size_t b = 0; b < out[2]; ++b) {
          double acc = 0.0;
          for (std::size_t t = 0; t < f; ++t)
            for (std::size_t u = 0; u < f; ++u) acc += y.at(ch, row0(a) + t, col0(b) + u);
          z.at(ch, a, b) = acc * inv_f;
        }
    return z;
  };
  c.restrict_transpose = [=](const Tensor& z) {
    Tensor y(fine_out);
    for (std::size_t ch = 0; ch < out[0]; ++ch)
      for (std::size_t a = 0; a < out[1]; ++a)
        for (std::size_t b = 0; b < out[2]; ++b)
          for (std::size_t t = 0; t < f; ++t)
            for (std::size_t u = 0; u < f; ++u)
              y.at(ch, row0(a) + t, col0(b) + u) += z.at(ch, a, b) * inv_f;
    return y;
  };
  return c;
}

}  // namespace

Tensor downscale_kernel(const Tensor& kernel, std::size_t scale) {
  if (kernel.rank() != 2 || kernel.extent(0) % 2 == 0 || kernel.extent(1) % 2 == 0)
    throw ShapeError("downscale_kernel: kernel must be 2-D with odd extents");
  if (scale == 0) return kernel;
  const std::size_t f = std::size_t{1} << scale;
  const std::size_t rr = (kernel.extent(0) - 1) / 2, rc = (kernel.extent(1) - 1) / 2;
  const std::size_t sr = (rr + f - 1) / f, sc = (rc + f - 1) / f;
  const std::size_t nr = 2 * sr + 1, nc = 2 * sc + 1;
  Tensor out({nr, nc});
  for (std::size_t i = 0; i < kernel.extent(0); ++i)
    for (std::size_t j = 0; j < kernel.extent(1); ++j) {
      const double v = kernel[i * kernel.extent(1) + j];
      if (v == 0.0) continue;
      const double pr = static_cast<double>(sr) +
                        (static_cast<double>(i) - static_cast<double>(rr)) / static_cast<double>(f);
      const double pc = static_cast<double>(sc) +
                        (static_cast<double>(j) - static_cast<double>(rc)) / static_cast<double>(f);
      const auto r0 = static_cast<std::size_t>(std::floor(pr));
      const auto c0 = static_cast<std::size_t>(std::floor(pc));
      const double fr = pr - static_cast<double>(r0), fc = pc - static_cast<double>(c0);
      out[r0 * nc + c0] += v * (1.0 - fr) * (1.0 - fc);
      if (fc > 0.0) out[r0 * nc + c0 + 1] += v * (1.0 - fr) * fc;
      if (fr > 0.0) out[(r0 + 1) * nc + c0] += v * fr * (1.0 - fc);
      if (fr > 0.0 && fc > 0.0) out[(r0 + 1) * nc + c0 + 1] += v * fr * fc;
    }
  const double total = sum(out);
  if (total != 0.0) out *= 1.0 / total;
  return out;
}

CoarseOperator make_coarse(const OperatorHandle& base, std::size_t scale,
                           const CoarseOptions& options) {
  const Shape& d = base.domain_shape();
  if (d.size() != 3) throw ShapeError("make_coarse: base domain must be (C, H, W)");
  const std::size_t f = std::size_t{1} << scale;
  if (d[1] % f || d[2] % f)
    throw ShapeError("make_coarse: extents " + shape_to_string(d) + " not divisible by 2^" +
                     std::to_string(scale));
  if (options.fast_paths && scale > 0) {
    if (const Tensor* m = inpainting_mask_of(base))
      if (auto c = inpainting_fast(*m, scale)) return std::move(*c);
    if (const Tensor* k = blur_kernel_of(base))
      if (auto c = blur_fast(*k, d, scale, options)) return std::move(*c);
  }
  return generic(base, scale, options);
}

}  // namespace reconkit
