#include "reconkit/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "reconkit/errors.hpp"
#include "reconkit/rng.hpp"

namespace reconkit {

namespace {

void require_odd(std::size_t size, const char* where) {
  if (size % 2 == 0) throw DataError(std::string(where) + ": kernel size must be odd");
}

void normalize_sum(Tensor& k) {
  const double s = sum(k);
  if (s <= 0.0) throw NumericalError("kernel has no mass");
  k *= 1.0 / s;
}

// Lower Cholesky factor of a row-major n x n matrix; pivots are floored.
std::vector<double> cholesky(std::vector<double> a, std::size_t n, double floor) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    d = std::sqrt(std::max(d, floor));
    a[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = v / d;
    }
    for (std::size_t i = 0; i < j; ++i) a[i * n + j] = 0.0;
  }
  return a;
}

}  // namespace

Tensor make_gaussian_kernel(double sigma, std::size_t size) {
  require_odd(size, "make_gaussian_kernel");
  if (!(sigma > 0.0)) throw DataError("make_gaussian_kernel: sigma must be positive");
  Tensor k({size, size});
  const double c = static_cast<double>(size / 2);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      k[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
    }
  normalize_sum(k);
  return k;
}

Tensor make_motion_kernel(double length_scale, double amplitude, std::size_t size,
                          std::uint64_t seed) {
  require_odd(size, "make_motion_kernel");
  if (!(length_scale > 0.0) || amplitude < 0.0)
    throw DataError("make_motion_kernel: need length_scale > 0 and amplitude >= 0");
  constexpr std::size_t knots = 100;
  constexpr std::size_t samples = 1000;

  std::vector<double> cov(knots * knots);
  for (std::size_t i = 0; i < knots; ++i)
    for (std::size_t j = 0; j < knots; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double dt = d / static_cast<double>(knots - 1);
      cov[i * knots + j] = std::exp(-dt * dt / (2.0 * length_scale * length_scale));
    }
  for (std::size_t i = 0; i < knots; ++i) cov[i * knots + i] += 1e-6;
  const auto chol = cholesky(std::move(cov), knots, 1e-6);

  Rng rng(seed);
  std::vector<double> path[2];
  for (auto& p : path) {
    std::vector<double> z(knots);
    for (double& v : z) v = rng.normal();
    p.assign(knots, 0.0);
    for (std::size_t i = 0; i < knots; ++i)
      for (std::size_t k = 0; k <= i; ++k) p[i] += chol[i * knots + k] * z[k];
    const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(knots);
    for (double& v : p) v = amplitude * (v - mean);
  }

  Tensor k({size, size});
  const double c = static_cast<double>(size / 2);
  const double unit = static_cast<double>(size - 1) / 2.0;  // pixels per trajectory unit
  const double hi = static_cast<double>(size - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = static_cast<double>(s) * static_cast<double>(knots - 1) /
                     static_cast<double>(samples - 1);
    const auto i0 = std::min(static_cast<std::size_t>(t), knots - 2);
    const double f = t - static_cast<double>(i0);
    const double px = (1.0 - f) * path[0][i0] + f * path[0][i0 + 1];
    const double py = (1.0 - f) * path[1][i0] + f * path[1][i0 + 1];
    const double col = std::clamp(c + unit * px, 0.0, hi);
    const double row = std::clamp(c + unit * py, 0.0, hi);
    const auto r0 = std::min(static_cast<std::size_t>(row), size - 1);
    const auto c0 = std::min(static_cast<std::size_t>(col), size - 1);
    const double fr = row - static_cast<double>(r0), fc = col - static_cast<double>(c0);
    const std::size_t r1 = std::min(r0 + 1, size - 1), c1 = std::min(c0 + 1, size - 1);
    k[r0 * size + c0] += (1.0 - fr) * (1.0 - fc);
    k[r0 * size + c1] += (1.0 - fr) * fc;
    k[r1 * size + c0] += fr * (1.0 - fc);
    k[r1 * size + c1] += fr * fc;
  }
  normalize_sum(k);
  return k;
}

BlurTier motion_tier(int tier) {
  switch (tier) {
    case 0: return {0.1, 0.1, 0.0, 0.01};
    case 1: return {0.6, 0.5, 0.0, 0.05};
    case 2: return {1.2, 1.0, 0.0, 0.1};
    default: throw DataError("blur tier must be 0, 1 or 2");
  }
}

BlurTier gaussian_tier(int tier) {
  switch (tier) {
    case 0: return {0.0, 0.0, 1.0, 0.01};
    case 1: return {0.0, 0.0, 2.0, 0.05};
    case 2: return {0.0, 0.0, 4.0, 0.1};
    default: throw DataError("blur tier must be 0, 1 or 2");
  }
}

Tensor make_bernoulli_mask(const Shape& shape, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw DataError("make_bernoulli_mask: p must lie in [0, 1]");
  Rng rng(seed);
  Tensor m(shape);
  for (double& v : m.storage()) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return m;
}

Tensor make_cartesian_mask(std::size_t height, std::size_t width, double acceleration,
                           std::uint64_t seed) {
  if (!(acceleration >= 1.0)) throw DataError("make_cartesian_mask: acceleration must be >= 1");
  const auto target = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(width) / acceleration)));
  const auto centre = std::min(
      target,
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.08 * static_cast<double>(width)))));

  // Columns ordered by |frequency| in unshifted FFT order.
  std::vector<std::size_t> order(width);
  std::iota(order.begin(), order.end(), 0);
  auto freq = [width](std::size_t j) {
    return j <= width / 2 ? static_cast<double>(j) : static_cast<double>(width - j);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return freq(a) < freq(b); });

  std::vector<bool> keep(width, false);
  for (std::size_t i = 0; i < centre; ++i) keep[order[i]] = true;
  std::vector<std::size_t> rest(order.begin() + static_cast<long>(centre), order.end());
  Rng rng(seed);
  for (std::size_t i = 0; i + centre < target; ++i) {
    const std::size_t pick = i + rng.uniform_int(rest.size() - i);
    std::swap(rest[i], rest[pick]);
    keep[rest[i]] = true;
  }

  Tensor m({height, width});
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) m[r * width + c] = keep[c] ? 1.0 : 0.0;
  return m;
}

std::vector<Tensor> make_gaussian_smaps(std::size_t coils, std::size_t height, std::size_t width) {
  if (coils == 0) throw DataError("make_gaussian_smaps: need at least one coil");
  const std::size_t area = height * width;
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double radius = 0.5 * std::min(h, w);
  const double spread = 0.4 * std::min(h, w);
  std::vector<Tensor> maps;
  std::vector<double> energy(area, 0.0);
  for (std::size_t l = 0; l < coils; ++l) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(l) / static_cast<double>(coils);
    const double ci = (h - 1.0) / 2.0 + radius * std::sin(ang);
    const double cj = (w - 1.0) / 2.0 + radius * std::cos(ang);
    Tensor s({2, height, width});
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double di = static_cast<double>(i) - ci, dj = static_cast<double>(j) - cj;
        const double mag = std::exp(-(di * di + dj * dj) / (2.0 * spread * spread));
        const double phase = ang + std::numbers::pi * (di * std::sin(ang) + dj * std::cos(ang)) /
                                       (2.0 * std::max(h, w));
        s[i * width + j] = mag * std::cos(phase);
        s[area + i * width + j] = mag * std::sin(phase);
        energy[i * width + j] += mag * mag;
      }
    maps.push_back(std::move(s));
  }
  for (auto& s : maps)
    for (std::size_t p = 0; p < area; ++p) {
      const double inv = 1.0 / std::sqrt(energy[p]);
      s[p] *= inv;
      s[area + p] *= inv;
    }
  return maps;
}

Tensor make_sign_mask(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor m(shape);
  for (double& v : m.storage()) v = rng.rademacher();
  return m;
}

std::vector<std::size_t> make_keep_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n) throw DataError("make_keep_indices: count exceeds n");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace reconkit
