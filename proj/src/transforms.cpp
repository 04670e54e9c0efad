#include "reconkit/transforms.hpp"

#include <cmath>
#include <numbers>

#include "reconkit/errors.hpp"

namespace reconkit {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

void fft_radix2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles computed directly rather than by recurrence to keep rounding flat.
      const cplx w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
      for (std::size_t i = 0; i < n; i += len) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

void dft_direct(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<cplx> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ang =
          sign * 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      acc += a[j] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  a = std::move(out);
}

void transform_line(cplx* data, std::size_t n, std::size_t stride, bool inverse, bool fast) {
  std::vector<cplx> line(n);
  for (std::size_t i = 0; i < n; ++i) line[i] = data[i * stride];
  if (fast && is_power_of_two(n))
    fft_radix2(line, inverse);
  else
    dft_direct(line, inverse);
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) data[i * stride] = line[i] * s;
}

Tensor dft2_impl(const Tensor& x, bool inverse, bool fast) {
  if (x.rank() != 3 || x.extent(0) != 2)
    throw ShapeError("dft2 expects a complex image (2, H, W), got " + shape_to_string(x.shape()));
  const std::size_t h = x.extent(1), w = x.extent(2), area = h * w;
  std::vector<cplx> buf(area);
  for (std::size_t i = 0; i < area; ++i) buf[i] = cplx(x[i], x[area + i]);
  for (std::size_t r = 0; r < h; ++r) transform_line(buf.data() + r * w, w, 1, inverse, fast);
  for (std::size_t c = 0; c < w; ++c) transform_line(buf.data() + c, h, w, inverse, fast);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < area; ++i) {
    out[i] = buf[i].real();
    out[area + i] = buf[i].imag();
  }
  return out;
}

}  // namespace

void dft1(cplx* data, std::size_t n, std::size_t stride, bool inverse) {
  transform_line(data, n, stride, inverse, true);
}

Tensor dft2(const Tensor& x) { return dft2_impl(x, false, true); }
Tensor idft2(const Tensor& x) { return dft2_impl(x, true, true); }
Tensor dft2_reference(const Tensor& x, bool inverse) { return dft2_impl(x, inverse, false); }

std::vector<double> dst2_matrix(std::size_t n) {
  std::vector<double> s(n * n);
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double scale = (k + 1 == n) ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn);
    for (std::size_t j = 0; j < n; ++j)
      s[k * n + j] = scale * std::sin(std::numbers::pi * static_cast<double>(k + 1) *
                                      static_cast<double>(2 * j + 1) / (2.0 * dn));
  }
  return s;
}

}  // namespace reconkit
