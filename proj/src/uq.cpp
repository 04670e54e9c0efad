#include "reconkit/uq.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "reconkit/errors.hpp"
#include "reconkit/parallel.hpp"

namespace reconkit {

ValueReconstructor model_value_reconstructor(const RamModel& model) {
  struct Cache {
    std::mutex mu;
    std::map<const LinearOperator*, std::pair<OperatorHandle, std::shared_ptr<PreparedOperator>>> entries;
  };
  auto cache = std::make_shared<Cache>();
  const RamModel* m = &model;
  return [m, cache](const Tensor& y, const OperatorHandle& op, const NoiseParams& noise) {
    std::shared_ptr<PreparedOperator> prep;
    {
      // Held while preparing so concurrent replicates share one preparation.
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->entries.find(&op.impl());
      if (it == cache->entries.end()) {
        if (cache->entries.size() >= 32) cache->entries.clear();
        it = cache->entries
                 .emplace(&op.impl(), std::make_pair(op, std::make_shared<PreparedOperator>(
                                                             prepare_operator(m->config(), op))))
                 .first;
      }
      prep = it->second.second;
    }
    return m->reconstruct(y, *prep, noise);
  };
}

BootstrapSample equivariant_bootstrap(const ValueReconstructor& r, const ProblemInstance& inst,
                                      const TransformGroup& group, std::size_t replicates,
                                      std::uint64_t seed, std::size_t threads) {
  if (replicates < 1) throw DataError("bootstrap: need at least one replicate");
  BootstrapSample out;
  out.seed = seed;
  out.estimate = r(inst.y, inst.op, inst.noise);
  out.estimate.require_finite("bootstrap estimate");
  const Shape& shape = out.estimate.shape();
  out.replicates.resize(replicates);
  out.transforms.resize(replicates);
  std::atomic<std::size_t> calls{1};
  parallel_for(replicates, resolve_threads(threads), [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    const ImageTransform t = group.sample(rng, shape);
    if (t.output_shape(shape) != shape) throw ShapeError("bootstrap: transform changes the image shape");
    const std::uint64_t noise_seed = rng.uniform_int(std::uint64_t{1} << 62);
    const Tensor yb = sample_noise(inst.op.apply(t.apply(out.estimate)), inst.noise, noise_seed);
    Tensor xb = t.inverse(r(yb, inst.op, inst.noise));
    ++calls;
    xb.require_finite("bootstrap replicate");
    out.replicates[i] = std::move(xb);
    out.transforms[i] = t;
  });
  out.evaluations = calls.load();
  return out;
}

Tensor pixelwise_errors(const BootstrapSample& sample) {
  if (sample.replicates.empty()) throw DataError("pixelwise_errors: no replicates");
  const Shape& s = sample.estimate.shape();
  if (s.size() != 3) throw ShapeError("pixelwise_errors: expected (C, H, W) images");
  const std::size_t c = s[0], hw = s[1] * s[2];
  Tensor err({1, s[1], s[2]});
  const double scale = 1.0 / static_cast<double>(sample.replicates.size() * c);
  for (const auto& xr : sample.replicates) {
    require_same_shape(xr, sample.estimate, "pixelwise_errors");
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) {
        const double d = xr[ch * hw + k] - sample.estimate[ch * hw + k];
        err[k] += scale * d * d;
      }
  }
  return err;
}

std::vector<double> replicate_deviations(const BootstrapSample& sample) {
  std::vector<double> d;
  d.reserve(sample.replicates.size());
  for (const auto& xr : sample.replicates) d.push_back(norm2(xr - sample.estimate));
  return d;
}

double deviation_quantile(std::vector<double> deviations, double level) {
  if (deviations.empty()) throw DataError("deviation_quantile: no deviations");
  if (!(level >= 0.0 && level <= 1.0)) throw DataError("deviation_quantile: level must be in [0, 1]");
  if (level == 0.0) return -1.0;
  std::sort(deviations.begin(), deviations.end());
  const auto k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(deviations.size())));
  return deviations[std::clamp<std::size_t>(k, 1, deviations.size()) - 1];
}

std::vector<CoveragePoint> coverage_curve(const ValueReconstructor& r,
                                          const std::vector<ProblemInstance>& instances,
                                          const TransformGroup& group, std::size_t replicates,
                                          const std::vector<double>& levels, std::uint64_t seed,
                                          std::size_t threads) {
  if (instances.empty()) throw DataError("coverage_curve: no instances");
  std::vector<std::size_t> inside(levels.size(), 0);
  for (std::size_t n = 0; n < instances.size(); ++n) {
    const auto& inst = instances[n];
    if (!inst.x) throw DataError("coverage_curve: instance without ground truth");
    const auto sample = equivariant_bootstrap(r, inst, group, replicates, derive_seed(seed, n), threads);
    const auto dev = replicate_deviations(sample);
    const double err = norm2(*inst.x - sample.estimate);
    for (std::size_t k = 0; k < levels.size(); ++k)
      if (err <= deviation_quantile(dev, levels[k])) ++inside[k];
  }
  std::vector<CoveragePoint> curve;
  for (std::size_t k = 0; k < levels.size(); ++k)
    curve.push_back({levels[k], static_cast<double>(inside[k]) / static_cast<double>(instances.size())});
  return curve;
}

}  // namespace reconkit
