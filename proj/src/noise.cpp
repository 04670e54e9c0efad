#include "reconkit/noise.hpp"

#include "reconkit/errors.hpp"

namespace reconkit {

Tensor sample_noise(const Tensor& clean, const NoiseParams& params, std::uint64_t seed,
                    bool* clamped) {
  if (params.sigma < 0.0 || params.gamma < 0.0)
    throw DataError("noise levels must be non-negative");
  if (clamped) *clamped = false;
  if (params.sigma == 0.0 && params.gamma == 0.0) return clean;
  Rng rng(seed);
  Tensor y(clean.shape());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    double v = clean[i];
    if (params.gamma > 0.0) {
      if (v < 0.0) {
        v = 0.0;
        if (clamped) *clamped = true;
      }
      v = params.gamma * static_cast<double>(rng.poisson(v / params.gamma));
    }
    if (params.sigma > 0.0) v += params.sigma * rng.normal();
    y[i] = v;
  }
  return y;
}

NoiseParams sample_params(const NoiseRanges& ranges, Rng& rng) {
  auto draw = [&rng](const std::optional<Range>& r) {
    if (!r) return 0.0;
    if (r->lo > r->hi) throw DataError("noise range has min > max");
    if (r->lo < 0.0) throw DataError("noise range must be non-negative");
    if (r->lo == r->hi) return r->lo;
    return rng.uniform(r->lo, r->hi);
  };
  NoiseParams p;
  p.sigma = draw(ranges.sigma);
  p.gamma = draw(ranges.gamma);
  return p;
}

}  // namespace reconkit
