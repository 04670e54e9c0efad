#include "reconkit/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "reconkit/autodiff.hpp"
#include "reconkit/errors.hpp"
#include "reconkit/rng.hpp"
#include "reconkit/transforms.hpp"

namespace reconkit {

// ------------------------------------------------------------------- handle

OperatorHandle::OperatorHandle(std::shared_ptr<const LinearOperator> impl,
                               std::optional<double> known_norm)
    : impl_(std::move(impl)), cache_(std::make_shared<NormCache>()) {
  cache_->value = known_norm;
}

Tensor OperatorHandle::apply(const Tensor& x) const {
  if (x.shape() != domain_shape())
    throw ShapeError(kind() + ": apply expects " + shape_to_string(domain_shape()) + ", got " +
                     shape_to_string(x.shape()));
  return impl_->apply(x);
}

Tensor OperatorHandle::adjoint(const Tensor& y) const {
  if (y.shape() != range_shape())
    throw ShapeError(kind() + ": adjoint expects " + shape_to_string(range_shape()) + ", got " +
                     shape_to_string(y.shape()));
  return impl_->adjoint(y);
}

Tensor OperatorHandle::normal(const Tensor& x) const {
  if (x.shape() != domain_shape())
    throw ShapeError(kind() + ": normal expects " + shape_to_string(domain_shape()) + ", got " +
                     shape_to_string(x.shape()));
  return impl_->normal(x);
}

double OperatorHandle::norm() const {
  std::lock_guard lock(cache_->mutex);
  if (!cache_->value) cache_->value = operator_norm(*this);
  return *cache_->value;
}

std::optional<double> OperatorHandle::cached_norm() const {
  std::lock_guard lock(cache_->mutex);
  return cache_->value;
}

double operator_norm(const OperatorHandle& op, int iters, double tol, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(op.domain_shape());
  for (double& v : x.storage()) v = rng.normal();
  double nx = norm2(x);
  if (nx == 0.0) return 0.0;
  x *= 1.0 / nx;
  double estimate = 0.0;
  for (int it = 0; it < iters; ++it) {
    Tensor z = op.normal(x);
    // Rayleigh quotient of the current unit vector.
    const double rq = dot(x, z);
    const double nz = norm2(z);
    if (nz == 0.0) return 0.0;
    x = (1.0 / nz) * std::move(z);
    if (it > 0 && std::abs(rq - estimate) <= tol * std::abs(rq)) {
      estimate = rq;
      break;
    }
    estimate = rq;
  }
  return std::sqrt(std::max(estimate, 0.0));
}

namespace {

// ------------------------------------------------------------- basic algebra

class IdentityOp final : public LinearOperator {
 public:
  explicit IdentityOp(const Shape& s) : LinearOperator(s, s) {}
  std::string kind() const override { return "identity"; }
  Tensor apply(const Tensor& x) const override { return x; }
  Tensor adjoint(const Tensor& y) const override { return y; }
  Tensor normal(const Tensor& x) const override { return x; }
};

class ScaledOp final : public LinearOperator {
 public:
  ScaledOp(OperatorHandle base, double factor)
      : LinearOperator(base.domain_shape(), base.range_shape()),
        base_(std::move(base)),
        factor_(factor) {}
  std::string kind() const override { return base_.kind(); }
  Tensor apply(const Tensor& x) const override { return factor_ * base_.apply(x); }
  Tensor adjoint(const Tensor& y) const override { return factor_ * base_.adjoint(y); }
  Tensor normal(const Tensor& x) const override { return (factor_ * factor_) * base_.normal(x); }
  const OperatorHandle& base() const { return base_; }

 private:
  OperatorHandle base_;
  double factor_;
};

class ComposedOp final : public LinearOperator {
 public:
  ComposedOp(OperatorHandle outer, OperatorHandle inner)
      : LinearOperator(inner.domain_shape(), outer.range_shape()),
        outer_(std::move(outer)),
        inner_(std::move(inner)) {}
  std::string kind() const override { return outer_.kind() + "*" + inner_.kind(); }
  Tensor apply(const Tensor& x) const override { return outer_.apply(inner_.apply(x)); }
  Tensor adjoint(const Tensor& y) const override { return inner_.adjoint(outer_.adjoint(y)); }
  Tensor normal(const Tensor& x) const override {
    return inner_.adjoint(outer_.normal(inner_.apply(x)));
  }

 private:
  OperatorHandle outer_, inner_;
};

class RangeMaskedOp final : public LinearOperator {
 public:
  RangeMaskedOp(OperatorHandle base, Tensor mask)
      : LinearOperator(base.domain_shape(), base.range_shape()),
        base_(std::move(base)),
        mask_(std::move(mask)) {}
  std::string kind() const override { return "masked:" + base_.kind(); }
  Tensor apply(const Tensor& x) const override { return hadamard(base_.apply(x), mask_); }
  Tensor adjoint(const Tensor& y) const override { return base_.adjoint(hadamard(y, mask_)); }

 private:
  OperatorHandle base_;
  Tensor mask_;
};

class DenseOp final : public LinearOperator {
 public:
  DenseOp(std::vector<double> m, const Shape& domain, const Shape& range)
      : LinearOperator(domain, range), m_(std::move(m)) {}
  std::string kind() const override { return "dense"; }
  Tensor apply(const Tensor& x) const override {
    const std::size_t rows = shape_size(range_shape()), cols = x.size();
    Tensor y(range_shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += m_[r * cols + c] * x[c];
      y[r] = acc;
    }
    return y;
  }
  Tensor adjoint(const Tensor& y) const override {
    const std::size_t rows = y.size(), cols = shape_size(domain_shape());
    Tensor x(domain_shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) x[c] += m_[r * cols + c] * y[r];
    return x;
  }

 private:
  std::vector<double> m_;
};

class CropOp final : public LinearOperator {
 public:
  CropOp(const Shape& padded, std::size_t top, std::size_t left, std::size_t h, std::size_t w)
      : LinearOperator(padded, Shape{padded[0], h, w}), top_(top), left_(left) {}
  std::string kind() const override { return "crop"; }
  Tensor apply(const Tensor& x) const override {
    const auto& r = range_shape();
    Tensor y(r);
    for (std::size_t c = 0; c < r[0]; ++c)
      for (std::size_t i = 0; i < r[1]; ++i)
        for (std::size_t j = 0; j < r[2]; ++j) y.at(c, i, j) = x.at(c, top_ + i, left_ + j);
    return y;
  }
  Tensor adjoint(const Tensor& y) const override {
    const auto& r = range_shape();
    Tensor x(domain_shape());
    for (std::size_t c = 0; c < r[0]; ++c)
      for (std::size_t i = 0; i < r[1]; ++i)
        for (std::size_t j = 0; j < r[2]; ++j) x.at(c, top_ + i, left_ + j) = y.at(c, i, j);
    return x;
  }

 private:
  std::size_t top_, left_;
};

// -------------------------------------------------------------------- blur

class BlurOp final : public LinearOperator {
 public:
  BlurOp(Tensor kernel, const Shape& image)
      : LinearOperator(image, Shape{image[0], image[1] - kernel.extent(0) + 1,
                                    image[2] - kernel.extent(1) + 1}),
        kernel_(std::move(kernel)),
        weight_(kernel_.reshaped({1, 1, kernel_.extent(0), kernel_.extent(1)})) {}
  std::string kind() const override { return "blur"; }
  Tensor apply(const Tensor& x) const override {
    const auto& d = domain_shape();
    Tensor out = ad::kernels::correlate_valid(x.reshaped({d[0], 1, d[1], d[2]}), weight_, 1);
    return out.reshaped(range_shape());
  }
  Tensor adjoint(const Tensor& y) const override {
    const auto& d = domain_shape();
    const auto& r = range_shape();
    Tensor dx({d[0], 1, d[1], d[2]});
    ad::kernels::correlate_backward_input(y.reshaped({r[0], 1, r[1], r[2]}), weight_, 1, dx);
    return dx.reshaped(d);
  }
  const Tensor& kernel() const { return kernel_; }

 private:
  Tensor kernel_;
  Tensor weight_;
};

// -------------------------------------------------------------- inpainting

class DiagonalOp final : public LinearOperator {
 public:
  explicit DiagonalOp(Tensor w) : LinearOperator(w.shape(), w.shape()), w_(std::move(w)) {}
  std::string kind() const override { return "diagonal"; }
  Tensor apply(const Tensor& x) const override { return hadamard(x, w_); }
  Tensor adjoint(const Tensor& y) const override { return hadamard(y, w_); }

 private:
  Tensor w_;
};

class InpaintingOp final : public LinearOperator {
 public:
  explicit InpaintingOp(Tensor mask)
      : LinearOperator(mask.shape(), mask.shape()), mask_(std::move(mask)) {}
  std::string kind() const override { return "inpainting"; }
  Tensor apply(const Tensor& x) const override { return hadamard(x, mask_); }
  Tensor adjoint(const Tensor& y) const override { return hadamard(y, mask_); }
  Tensor normal(const Tensor& x) const override { return hadamard(x, mask_); }
  const Tensor& mask() const { return mask_; }

 private:
  Tensor mask_;
};

// --------------------------------------------------------------------- MRI

void apply_kspace_mask(Tensor& k, const Tensor& mask, std::size_t channel_pairs) {
  const std::size_t area = mask.size();
  for (std::size_t p = 0; p < 2 * channel_pairs; ++p)
    for (std::size_t i = 0; i < area; ++i) k[p * area + i] *= mask[i];
}

class MriOp final : public LinearOperator {
 public:
  MriOp(Tensor mask, const Shape& image) : LinearOperator(image, image), mask_(std::move(mask)) {}
  std::string kind() const override { return "mri"; }
  Tensor apply(const Tensor& x) const override {
    Tensor k = dft2(x);
    apply_kspace_mask(k, mask_, 1);
    return k;
  }
  Tensor adjoint(const Tensor& y) const override {
    Tensor k = y;
    apply_kspace_mask(k, mask_, 1);
    return idft2(k);
  }
  Tensor normal(const Tensor& x) const override { return adjoint(apply(x)); }

 private:
  Tensor mask_;
};

Tensor complex_mul(const Tensor& a, const Tensor& b, bool conj_a) {
  const std::size_t area = a.size() / 2;
  Tensor out(b.shape());
  const double s = conj_a ? -1.0 : 1.0;
  for (std::size_t i = 0; i < area; ++i) {
    const double ar = a[i], ai = s * a[area + i], br = b[i], bi = b[area + i];
    out[i] = ar * br - ai * bi;
    out[area + i] = ar * bi + ai * br;
  }
  return out;
}

class MulticoilMriOp final : public LinearOperator {
 public:
  MulticoilMriOp(Tensor mask, std::vector<Tensor> smaps, const Shape& image)
      : LinearOperator(image, Shape{2 * smaps.size(), image[1], image[2]}),
        mask_(std::move(mask)),
        smaps_(std::move(smaps)) {}
  std::string kind() const override { return "multicoil_mri"; }
  Tensor apply(const Tensor& x) const override {
    const std::size_t block = x.size();
    Tensor y(range_shape());
    for (std::size_t l = 0; l < smaps_.size(); ++l) {
      Tensor k = dft2(complex_mul(smaps_[l], x, false));
      apply_kspace_mask(k, mask_, 1);
      std::copy(k.storage().begin(), k.storage().end(), y.storage().begin() + l * block);
    }
    return y;
  }
  Tensor adjoint(const Tensor& y) const override {
    const std::size_t block = shape_size(domain_shape());
    Tensor x(domain_shape());
    for (std::size_t l = 0; l < smaps_.size(); ++l) {
      Tensor k(domain_shape(), std::vector<double>(y.storage().begin() + l * block,
                                                   y.storage().begin() + (l + 1) * block));
      apply_kspace_mask(k, mask_, 1);
      x += complex_mul(smaps_[l], idft2(k), true);
    }
    return x;
  }

 private:
  Tensor mask_;
  std::vector<Tensor> smaps_;
};

// -------------------------------------------------------------------- Radon

// Pixel-driven projector: each pixel centre is projected onto the detector axis
// and its value split linearly between the two neighbouring bins. Every angle
// therefore conserves the image mass exactly; the adjoint gathers with the
// same weights.
class RadonOp final : public LinearOperator {
 public:
  RadonOp(std::size_t angles, const Shape& image, std::size_t detectors)
      : LinearOperator(image, Shape{image[0], angles, detectors}) {
    for (std::size_t a = 0; a < angles; ++a) {
      const double th = std::numbers::pi * static_cast<double>(a) / static_cast<double>(angles);
      cos_.push_back(std::cos(th));
      sin_.push_back(std::sin(th));
    }
  }
  std::string kind() const override { return "ct_radon"; }

  template <typename Fn>
  void for_each_weight(std::size_t a, Fn&& fn) const {
    const auto& d = domain_shape();
    const std::size_t h = d[1], w = d[2], nd = range_shape()[2];
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cd = (static_cast<double>(nd) - 1.0) / 2.0;
    for (std::size_t i = 0; i < h; ++i) {
      const double py = cy - static_cast<double>(i);
      for (std::size_t j = 0; j < w; ++j) {
        const double px = static_cast<double>(j) - cx;
        const double u = px * cos_[a] + py * sin_[a] + cd;
        const double fl = std::floor(u);
        const double frac = u - fl;
        const auto u0 = static_cast<std::size_t>(fl);
        fn(i * w + j, u0, 1.0 - frac);
        if (frac > 0.0) fn(i * w + j, u0 + 1, frac);
      }
    }
  }

  Tensor apply(const Tensor& x) const override {
    const auto& d = domain_shape();
    const auto& r = range_shape();
    const std::size_t area = d[1] * d[2];
    Tensor y(r);
    for (std::size_t c = 0; c < d[0]; ++c)
      for (std::size_t a = 0; a < r[1]; ++a) {
        double* row = y.raw() + (c * r[1] + a) * r[2];
        const double* img = x.raw() + c * area;
        for_each_weight(a, [&](std::size_t p, std::size_t bin, double wgt) {
          row[bin] += wgt * img[p];
        });
      }
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    const auto& d = domain_shape();
    const auto& r = range_shape();
    const std::size_t area = d[1] * d[2];
    Tensor x(d);
    for (std::size_t c = 0; c < d[0]; ++c)
      for (std::size_t a = 0; a < r[1]; ++a) {
        const double* row = y.raw() + (c * r[1] + a) * r[2];
        double* img = x.raw() + c * area;
        for_each_weight(a, [&](std::size_t p, std::size_t bin, double wgt) {
          img[p] += wgt * row[bin];
        });
      }
    return x;
  }

 private:
  std::vector<double> cos_, sin_;
};

// ------------------------------------------------------- separable resampling

/// Sparse 1-D resampling matrix: rows[out] = list of (in, weight).
struct Resampler1D {
  std::size_t in = 0, out = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

std::size_t wrap(long i, std::size_t n) {
  long m = i % static_cast<long>(n);
  if (m < 0) m += static_cast<long>(n);
  return static_cast<std::size_t>(m);
}

// axis 1 = rows (H), axis 2 = columns (W) of a (C, H, W) tensor.
Tensor resample_axis(const Tensor& x, const Resampler1D& m, int axis, bool transpose) {
  const auto& s = x.shape();
  const std::size_t from = transpose ? m.out : m.in;
  const std::size_t to = transpose ? m.in : m.out;
  if (s[axis] != from) throw ShapeError("resample: extent mismatch");
  Shape os = s;
  os[axis] = to;
  Tensor y(os);
  const std::size_t c_n = s[0];
  if (axis == 2) {
    const std::size_t rows = s[1];
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t i = 0; i < rows; ++i) {
        const double* src = x.raw() + (c * rows + i) * from;
        double* dst = y.raw() + (c * rows + i) * to;
        for (std::size_t o = 0; o < m.out; ++o)
          for (const auto& [j, w] : m.rows[o]) {
            if (transpose)
              dst[j] += w * src[o];
            else
              dst[o] += w * src[j];
          }
      }
  } else {
    const std::size_t cols = s[2];
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t o = 0; o < m.out; ++o)
        for (const auto& [j, w] : m.rows[o]) {
          const std::size_t src_row = transpose ? o : j;
          const std::size_t dst_row = transpose ? j : o;
          const double* src = x.raw() + (c * from + src_row) * cols;
          double* dst = y.raw() + (c * to + dst_row) * cols;
          for (std::size_t k = 0; k < cols; ++k) dst[k] += w * src[k];
        }
  }
  return y;
}

class SeparableOp final : public LinearOperator {
 public:
  SeparableOp(std::string kind, const Shape& domain, Resampler1D rows, Resampler1D cols)
      : LinearOperator(domain, Shape{domain[0], rows.out, cols.out}),
        kind_(std::move(kind)),
        rows_(std::move(rows)),
        cols_(std::move(cols)) {}
  std::string kind() const override { return kind_; }
  Tensor apply(const Tensor& x) const override {
    return resample_axis(resample_axis(x, cols_, 2, false), rows_, 1, false);
  }
  Tensor adjoint(const Tensor& y) const override {
    return resample_axis(resample_axis(y, rows_, 1, true), cols_, 2, true);
  }

 private:
  std::string kind_;
  Resampler1D rows_, cols_;
};

double keys_cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

double triangle(double t) { return std::max(0.0, 1.0 - std::abs(t)); }

Resampler1D downsampler_1d(std::size_t n, std::size_t factor, DownsamplingFilter filter) {
  Resampler1D m;
  m.in = n;
  m.out = n / factor;
  m.rows.resize(m.out);
  const double f = static_cast<double>(factor);
  const double support = (filter == DownsamplingFilter::bicubic ? 2.0 : 1.0) * f;
  for (std::size_t o = 0; o < m.out; ++o) {
    const double centre = f * static_cast<double>(o) + (f - 1.0) / 2.0;
    const long lo = static_cast<long>(std::ceil(centre - support));
    const long hi = static_cast<long>(std::floor(centre + support));
    double total = 0.0;
    std::vector<std::pair<long, double>> taps;
    for (long j = lo; j <= hi; ++j) {
      const double t = (static_cast<double>(j) - centre) / f;
      const double w = filter == DownsamplingFilter::bicubic ? keys_cubic(t) : triangle(t);
      if (w == 0.0) continue;
      taps.emplace_back(j, w);
      total += w;
    }
    for (auto& [j, w] : taps) m.rows[o].emplace_back(wrap(j, n), w / total);
  }
  return m;
}

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

Resampler1D upsampler_1d(std::size_t coarse, std::size_t factor, UpsamplerKind kind) {
  constexpr double beta = 8.0;
  constexpr int taps = 8;
  Resampler1D m;
  m.in = coarse;
  m.out = coarse * factor;
  m.rows.resize(m.out);
  const double f = static_cast<double>(factor);
  const double i0b = bessel_i0(beta);
  for (std::size_t o = 0; o < m.out; ++o) {
    if (kind == UpsamplerKind::nearest) {
      m.rows[o].emplace_back(o / factor, 1.0);
      continue;
    }
    const double u = (static_cast<double>(o) + 0.5) / f - 0.5;
    const long base = static_cast<long>(std::floor(u));
    std::vector<std::pair<long, double>> ws;
    double total = 0.0;
    for (long i = base - taps / 2 + 1; i <= base + taps / 2; ++i) {
      const double d = u - static_cast<double>(i);
      const double t = d / (taps / 2.0);
      if (std::abs(t) >= 1.0) continue;
      const double sinc = d == 0.0 ? 1.0 : std::sin(std::numbers::pi * d) / (std::numbers::pi * d);
      const double win = bessel_i0(beta * std::sqrt(1.0 - t * t)) / i0b;
      const double w = sinc * win;
      if (w == 0.0) continue;
      ws.emplace_back(i, w);
      total += w;
    }
    for (auto& [i, w] : ws) m.rows[o].emplace_back(wrap(i, coarse), w / total);
  }
  return m;
}

// ------------------------------------------------------ compressed sensing

class CompressedSensingOp final : public LinearOperator {
 public:
  CompressedSensingOp(Tensor signs, std::vector<std::size_t> keep, const Shape& image)
      : LinearOperator(image, Shape{keep.size()}),
        signs_(std::move(signs)),
        keep_(std::move(keep)),
        sh_(dst2_matrix(image[1])),
        sw_(dst2_matrix(image[2])) {}
  std::string kind() const override { return "compressed_sensing"; }

  // Per channel: out = S_H * in * S_W^T (or the transpose when `inverse`).
  Tensor transform(const Tensor& x, bool inverse) const {
    const auto& d = domain_shape();
    const std::size_t c_n = d[0], h = d[1], w = d[2];
    Tensor tmp(d), out(d);
    for (std::size_t c = 0; c < c_n; ++c) {
      const double* in = x.raw() + c * h * w;
      double* t = tmp.raw() + c * h * w;
      double* o = out.raw() + c * h * w;
      // rows: t[i, k] = sum_j in[i, j] * Sw[k, j]   (or Sw[j, k] for the inverse)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t k = 0; k < w; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < w; ++j)
            acc += in[i * w + j] * (inverse ? sw_[j * w + k] : sw_[k * w + j]);
          t[i * w + k] = acc;
        }
      for (std::size_t k = 0; k < h; ++k)
        for (std::size_t i = 0; i < h; ++i) {
          const double s = inverse ? sh_[i * h + k] : sh_[k * h + i];
          for (std::size_t j = 0; j < w; ++j) o[k * w + j] += s * t[i * w + j];
        }
    }
    return out;
  }

  Tensor apply(const Tensor& x) const override {
    Tensor coeffs = transform(hadamard(x, signs_), false);
    Tensor y(range_shape());
    for (std::size_t i = 0; i < keep_.size(); ++i) y[i] = coeffs[keep_[i]];
    return y;
  }
  Tensor adjoint(const Tensor& y) const override {
    Tensor coeffs(domain_shape());
    for (std::size_t i = 0; i < keep_.size(); ++i) coeffs[keep_[i]] = y[i];
    return hadamard(transform(coeffs, true), signs_);
  }

 private:
  Tensor signs_;
  std::vector<std::size_t> keep_;
  std::vector<double> sh_, sw_;
};

// --------------------------------------------------------------- demosaic

class DemosaicOp final : public LinearOperator {
 public:
  explicit DemosaicOp(const Shape& image) : LinearOperator(image, Shape{1, image[1], image[2]}) {}
  std::string kind() const override { return "demosaic"; }
  // RGGB: (even, even) red, (odd, odd) blue, otherwise green.
  static std::size_t channel_at(std::size_t i, std::size_t j) {
    if (i % 2 == 0 && j % 2 == 0) return 0;
    if (i % 2 == 1 && j % 2 == 1) return 2;
    return 1;
  }
  Tensor apply(const Tensor& x) const override {
    const auto& d = domain_shape();
    Tensor y(range_shape());
    for (std::size_t i = 0; i < d[1]; ++i)
      for (std::size_t j = 0; j < d[2]; ++j) y.at(0, i, j) = x.at(channel_at(i, j), i, j);
    return y;
  }
  Tensor adjoint(const Tensor& y) const override {
    const auto& d = domain_shape();
    Tensor x(d);
    for (std::size_t i = 0; i < d[1]; ++i)
      for (std::size_t j = 0; j < d[2]; ++j) x.at(channel_at(i, j), i, j) = y.at(0, i, j);
    return x;
  }
};

void require_image_shape(const Shape& s, const char* where) {
  if (s.size() != 3 || shape_size(s) == 0)
    throw ShapeError(std::string(where) + ": expected image shape (C, H, W), got " +
                     shape_to_string(s));
}

}  // namespace

// ------------------------------------------------------------------ factories

OperatorHandle make_identity(const Shape& shape) {
  return OperatorHandle(std::make_shared<IdentityOp>(shape), 1.0);
}

OperatorHandle make_scaled(const OperatorHandle& op, double factor) {
  std::optional<double> n;
  if (auto known = op.cached_norm()) n = std::abs(factor) * *known;
  return OperatorHandle(std::make_shared<ScaledOp>(op, factor), n);
}

OperatorHandle make_composed(const OperatorHandle& outer, const OperatorHandle& inner) {
  if (outer.domain_shape() != inner.range_shape())
    throw ShapeError("compose: inner range " + shape_to_string(inner.range_shape()) +
                     " does not match outer domain " + shape_to_string(outer.domain_shape()));
  return OperatorHandle(std::make_shared<ComposedOp>(outer, inner));
}

OperatorHandle normalize(const OperatorHandle& op) {
  const double n = op.norm();
  if (n == 0.0) return op;
  return OperatorHandle(std::make_shared<ScaledOp>(op, 1.0 / n), 1.0);
}

OperatorHandle normalize(const OperatorHandle& op, int iters, double tol) {
  const auto cached = op.cached_norm();
  const double n = cached ? *cached : operator_norm(op, iters, tol);
  if (n == 0.0) return op;
  return OperatorHandle(std::make_shared<ScaledOp>(op, 1.0 / n), 1.0);
}

OperatorHandle make_diagonal(const Tensor& weights) {
  return OperatorHandle(std::make_shared<DiagonalOp>(weights), max_abs(weights));
}

OperatorHandle make_range_masked(const OperatorHandle& op, const Tensor& mask) {
  if (mask.shape() != op.range_shape()) throw ShapeError("range mask: shape mismatch");
  return OperatorHandle(std::make_shared<RangeMaskedOp>(op, mask));
}

OperatorHandle make_dense(std::vector<double> matrix, const Shape& domain, const Shape& range) {
  if (matrix.size() != shape_size(domain) * shape_size(range))
    throw ShapeError("dense operator: matrix size mismatch");
  return OperatorHandle(std::make_shared<DenseOp>(std::move(matrix), domain, range));
}

OperatorHandle make_crop(const Shape& padded_shape, std::size_t top, std::size_t left,
                         std::size_t height, std::size_t width) {
  require_image_shape(padded_shape, "make_crop");
  if (top + height > padded_shape[1] || left + width > padded_shape[2])
    throw ShapeError("make_crop: window out of bounds");
  return OperatorHandle(std::make_shared<CropOp>(padded_shape, top, left, height, width), 1.0);
}

OperatorHandle make_blur(const Tensor& kernel, const Shape& image_shape) {
  require_image_shape(image_shape, "make_blur");
  if (kernel.rank() != 2) throw ShapeError("make_blur: kernel must be 2-D");
  if (kernel.extent(0) >= image_shape[1] || kernel.extent(1) >= image_shape[2])
    throw ShapeError("make_blur: kernel " + shape_to_string(kernel.shape()) +
                     " must be smaller than image " + shape_to_string(image_shape));
  return OperatorHandle(std::make_shared<BlurOp>(kernel, image_shape));
}

OperatorHandle make_inpainting(const Tensor& mask) {
  require_image_shape(mask.shape(), "make_inpainting");
  for (double v : mask.data())
    if (v != 0.0 && v != 1.0) throw DataError("make_inpainting: mask must be binary");
  const bool any = std::any_of(mask.data().begin(), mask.data().end(),
                               [](double v) { return v != 0.0; });
  return OperatorHandle(std::make_shared<InpaintingOp>(mask), any ? 1.0 : 0.0);
}

OperatorHandle make_mri(const Tensor& mask, const Shape& image_shape) {
  require_image_shape(image_shape, "make_mri");
  if (image_shape[0] != 2)
    throw ShapeError("make_mri: image must have 2 channels (real, imaginary)");
  if (mask.shape() != Shape{image_shape[1], image_shape[2]})
    throw ShapeError("make_mri: mask must be (H, W)");
  for (double v : mask.data())
    if (v != 0.0 && v != 1.0) throw DataError("make_mri: mask must be binary");
  return OperatorHandle(std::make_shared<MriOp>(mask, image_shape));
}

OperatorHandle make_multicoil_mri(const Tensor& mask, const std::vector<Tensor>& smaps) {
  if (smaps.empty()) throw DataError("make_multicoil_mri: no sensitivity maps");
  const Shape image = smaps.front().shape();
  require_image_shape(image, "make_multicoil_mri");
  if (image[0] != 2) throw ShapeError("make_multicoil_mri: maps must be complex (2, H, W)");
  if (mask.shape() != Shape{image[1], image[2]})
    throw ShapeError("make_multicoil_mri: mask must be (H, W)");
  const std::size_t area = image[1] * image[2];
  std::vector<double> energy(area, 0.0);
  for (const auto& s : smaps) {
    if (s.shape() != image) throw ShapeError("make_multicoil_mri: map shapes differ");
    for (std::size_t i = 0; i < area; ++i) energy[i] += s[i] * s[i] + s[area + i] * s[area + i];
  }
  for (double e : energy)
    if (std::abs(e - 1.0) > 1e-6)
      throw DataError("make_multicoil_mri: sensitivity maps not normalized (sum |s|^2 != 1)");
  return OperatorHandle(std::make_shared<MulticoilMriOp>(mask, smaps, image));
}

OperatorHandle make_ct_radon(std::size_t num_angles, const Shape& image_shape) {
  require_image_shape(image_shape, "make_ct_radon");
  if (num_angles < 1) throw DataError("make_ct_radon: need at least one angle");
  if (image_shape[1] != image_shape[2]) throw ShapeError("make_ct_radon: image must be square");
  const auto detectors =
      static_cast<std::size_t>(std::ceil(std::sqrt(2.0) * static_cast<double>(image_shape[1])));
  return OperatorHandle(std::make_shared<RadonOp>(num_angles, image_shape, detectors));
}

OperatorHandle make_downsampling(std::size_t factor, DownsamplingFilter filter,
                                 const Shape& image_shape) {
  require_image_shape(image_shape, "make_downsampling");
  if (factor != 2 && factor != 4) throw DataError("make_downsampling: factor must be 2 or 4");
  if (image_shape[1] % factor || image_shape[2] % factor)
    throw ShapeError("make_downsampling: extents not divisible by factor");
  return OperatorHandle(std::make_shared<SeparableOp>(
      "downsampling", image_shape, downsampler_1d(image_shape[1], factor, filter),
      downsampler_1d(image_shape[2], factor, filter)));
}

OperatorHandle make_compressed_sensing(const Tensor& sign_mask,
                                       const std::vector<std::size_t>& keep_indices,
                                       const Shape& image_shape) {
  require_image_shape(image_shape, "make_compressed_sensing");
  if (sign_mask.shape() != image_shape)
    throw ShapeError("make_compressed_sensing: sign mask must match the image shape");
  for (double v : sign_mask.data())
    if (v != 1.0 && v != -1.0) throw DataError("make_compressed_sensing: signs must be +-1");
  if (keep_indices.empty()) throw DataError("make_compressed_sensing: no kept coefficients");
  std::unordered_set<std::size_t> seen;
  for (auto k : keep_indices) {
    if (k >= shape_size(image_shape))
      throw DataError("make_compressed_sensing: index out of range");
    if (!seen.insert(k).second) throw DataError("make_compressed_sensing: duplicate index");
  }
  return OperatorHandle(
      std::make_shared<CompressedSensingOp>(sign_mask, keep_indices, image_shape));
}

OperatorHandle make_demosaic(const Shape& image_shape) {
  require_image_shape(image_shape, "make_demosaic");
  if (image_shape[0] != 3) throw ShapeError("make_demosaic: image must have 3 channels");
  if (image_shape[1] % 2 || image_shape[2] % 2)
    throw ShapeError("make_demosaic: extents must be even");
  return OperatorHandle(std::make_shared<DemosaicOp>(image_shape), 1.0);
}

OperatorHandle make_upsampler(std::size_t scale, const Shape& fine_shape, UpsamplerKind kind) {
  require_image_shape(fine_shape, "make_upsampler");
  const std::size_t f = std::size_t{1} << scale;
  if (fine_shape[1] % f || fine_shape[2] % f)
    throw ShapeError("make_upsampler: extents not divisible by 2^scale");
  const Shape coarse{fine_shape[0], fine_shape[1] / f, fine_shape[2] / f};
  return OperatorHandle(std::make_shared<SeparableOp>("upsampler", coarse,
                                                      upsampler_1d(coarse[1], f, kind),
                                                      upsampler_1d(coarse[2], f, kind)));
}

const Tensor* blur_kernel_of(const OperatorHandle& op) {
  if (auto* b = dynamic_cast<const BlurOp*>(&op.impl())) return &b->kernel();
  return nullptr;
}

const Tensor* inpainting_mask_of(const OperatorHandle& op) {
  if (auto* m = dynamic_cast<const InpaintingOp*>(&op.impl())) return &m->mask();
  return nullptr;
}

std::vector<double> dense_matrix(const OperatorHandle& op) {
  const std::size_t cols = shape_size(op.domain_shape());
  const std::size_t rows = shape_size(op.range_shape());
  std::vector<double> m(rows * cols);
  Tensor e(op.domain_shape());
  for (std::size_t c = 0; c < cols; ++c) {
    e[c] = 1.0;
    Tensor col = op.apply(e);
    for (std::size_t r = 0; r < rows; ++r) m[r * cols + c] = col[r];
    e[c] = 0.0;
  }
  return m;
}

}  // namespace reconkit
