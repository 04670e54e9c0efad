#include "reconkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "reconkit/errors.hpp"

namespace reconkit {

double psnr(const Tensor& estimate, const Tensor& reference, double data_range) {
  require_same_shape(estimate, reference, "psnr");
  if (!(data_range > 0.0)) throw DataError("psnr: data_range must be positive");
  if (estimate.empty()) throw ShapeError("psnr: empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = estimate[i] - reference[i];
    mse += d * d;
  }
  mse /= static_cast<double>(estimate.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

namespace {

constexpr std::size_t kWin = 11;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double s = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable valid filtering of one (H, W) plane.
std::vector<double> filter_valid(const double* src, std::size_t h, std::size_t w,
                                 const std::array<double, kWin>& g) {
  const std::size_t oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> rows(h * ow), out(oh * ow);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWin; ++t) s += g[t] * src[i * w + j + t];
      rows[i * ow + j] = s;
    }
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWin; ++t) s += g[t] * rows[(i + t) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& estimate, const Tensor& reference, double data_range) {
  require_same_shape(estimate, reference, "ssim");
  if (estimate.rank() != 3) throw ShapeError("ssim: expected (C, H, W)");
  const std::size_t c = estimate.extent(0), h = estimate.extent(1), w = estimate.extent(2);
  if (h < kWin || w < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");
  if (!(data_range > 0.0)) throw DataError("ssim: data_range must be positive");
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const auto g = gaussian_window();
  const std::size_t hw = h * w;
  std::vector<double> xx(hw), yy(hw), xy(hw);
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* a = estimate.raw() + ch * hw;
    const double* b = reference.raw() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      xx[i] = a[i] * a[i];
      yy[i] = b[i] * b[i];
      xy[i] = a[i] * b[i];
    }
    const auto ma = filter_valid(a, h, w, g), mb = filter_valid(b, h, w, g);
    const auto saa = filter_valid(xx.data(), h, w, g), sbb = filter_valid(yy.data(), h, w, g),
               sab = filter_valid(xy.data(), h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i],
                   cov = sab[i] - ma[i] * mb[i];
      acc += ((2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(c);
}

}  // namespace reconkit
