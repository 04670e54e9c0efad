#include <doctest.h>

#include <cmath>

#include "reconkit/errors.hpp"
#include "reconkit/generators.hpp"
#include "reconkit/parallel.hpp"
#include "reconkit/uq.hpp"
#include "support.hpp"

using namespace reconkit;
using testutil::random_tensor;

namespace {

ValueReconstructor shrink(double c) {
  return [c](const Tensor& y, const OperatorHandle&, const NoiseParams&) { return c * y; };
}

ProblemInstance gaussian_toy(double s, double sigma, const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  ProblemInstance inst;
  inst.spec.image_shape = shape;
  inst.op = make_identity(shape);
  inst.noise = {sigma, 0.0};
  Tensor x(shape);
  for (double& v : x.storage()) v = s * rng.normal();
  inst.x = x;
  inst.y = sample_noise(x, inst.noise, derive_seed(seed, 1));
  return inst;
}

}  // namespace

TEST_CASE("bootstrap noiseless fixed point") {
  const TransformGroup trivial{GroupKind::identity, 0.1};
  ProblemInstance inst;
  inst.op = make_identity({1, 8, 8});
  inst.y = random_tensor({1, 8, 8}, 1);
  ValueReconstructor adj = [](const Tensor& y, const OperatorHandle& op, const NoiseParams&) {
    return op.adjoint(y);
  };
  auto s = equivariant_bootstrap(adj, inst, trivial, 10, 3, 1);
  for (const auto& r : s.replicates) CHECK(r == s.estimate);
  CHECK(norm1(pixelwise_errors(s)) == 0.0);

  // Unitary MRI with a full mask.
  ProblemInstance mri;
  mri.op = make_mri(Tensor({8, 8}, 1.0), {2, 8, 8});
  mri.y = mri.op.apply(random_tensor({2, 8, 8}, 2));
  s = equivariant_bootstrap(adj, mri, trivial, 10, 3, 1);
  for (const auto& r : s.replicates) CHECK(norm2(r - s.estimate) < 1e-12 * norm2(s.estimate));
  CHECK_THROWS_AS(equivariant_bootstrap(adj, mri, trivial, 0, 3, 1), DataError);
}

TEST_CASE("bootstrap evaluation count and determinism") {
  RamConfig cfg;
  cfg.num_scales = 1;
  cfg.base_width = 4;
  cfg.blocks_per_scale = 1;
  cfg.krylov_order = 1;
  cfg.heads = {1};
  cfg.norm_iters = 20;
  RamModel model(cfg, 1);
  ProblemInstance inst;
  inst.spec.kind = "inpainting";
  inst.spec.image_shape = {1, 8, 8};
  inst.spec.p = 0.7;
  inst.op = build_operator(inst.spec);
  inst.noise = {0.05, 0.02};
  inst.y = sample_noise(inst.op.apply(Tensor({1, 8, 8}, 0.5)), inst.noise, 4);
  const auto r = model_value_reconstructor(model);
  const auto before = model.evaluations();
  const auto a = equivariant_bootstrap(r, inst, TransformGroup{}, 100, 9, 1);
  CHECK(model.evaluations() - before == 101);
  CHECK(a.evaluations == 101);
  const auto b = equivariant_bootstrap(r, inst, TransformGroup{}, 100, 9, 3);
  REQUIRE(a.replicates.size() == b.replicates.size());
  for (std::size_t i = 0; i < a.replicates.size(); ++i) {
    CHECK(a.replicates[i] == b.replicates[i]);
    CHECK(a.transforms[i].rot == b.transforms[i].rot);
  }
  CHECK(a.estimate == b.estimate);
  const auto err = pixelwise_errors(a);
  CHECK(err.shape() == Shape{1, 8, 8});
  for (double v : err.data()) CHECK(v >= 0.0);
}

TEST_CASE("pixelwise errors arithmetic") {
  BootstrapSample s;
  s.estimate = Tensor({2, 2, 2}, 0.5);
  Tensor up = s.estimate, down = s.estimate;
  up.at(0, 1, 0) += 0.3;
  down.at(0, 1, 0) -= 0.3;
  s.replicates = {up, down};
  const Tensor e = pixelwise_errors(s);
  // Channel average: 0.09 in channel 0, 0 in channel 1.
  CHECK(e.at(0, 1, 0) == doctest::Approx(0.045).epsilon(1e-12));
  CHECK(e.at(0, 0, 0) == 0.0);
  CHECK(deviation_quantile({3.0, 1.0, 2.0}, 0.0) < 0.0);
  CHECK(deviation_quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(deviation_quantile({3.0, 1.0, 2.0}, 1.0) == 3.0);
  CHECK_THROWS_AS(pixelwise_errors(BootstrapSample{}), DataError);
}

TEST_CASE("error map matches the analytic replicate variance") {
  const double s = 1.0, sigma = 0.2;
  const double c = s * s / (s * s + sigma * sigma);
  const auto inst = gaussian_toy(s, sigma, {1, 16, 16}, 5);
  const auto sample = equivariant_bootstrap(shrink(c), inst, TransformGroup{GroupKind::identity, 0.1}, 500, 6);
  const Tensor err = pixelwise_errors(sample);
  Tensor oracle(err.shape());
  for (std::size_t i = 0; i < oracle.size(); ++i)
    oracle[i] = (c - 1.0) * (c - 1.0) * sample.estimate[i] * sample.estimate[i] + c * c * sigma * sigma;
  const double rel = norm2(err - oracle) / norm2(oracle);
  MESSAGE("error map relative deviation " << rel);
  CHECK(rel < 0.10);
}

TEST_CASE("coverage on the linear-gaussian toy") {
  const double s = 1.0, sigma = 0.2;
  const double c = s * s / (s * s + sigma * sigma);
  std::vector<ProblemInstance> insts;
  for (std::uint64_t n = 0; n < 200; ++n) insts.push_back(gaussian_toy(s, sigma, {1, 8, 8}, 100 + n));
  std::vector<double> levels;
  for (int k = 0; k <= 10; ++k) levels.push_back(k / 10.0);
  const auto curve = coverage_curve(shrink(c), insts, TransformGroup{}, 200, levels, 7);
  REQUIRE(curve.size() == levels.size());
  CHECK(curve.front().empirical == 0.0);
  for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].empirical >= curve[k - 1].empirical);
  for (std::size_t k = 1; k + 1 < curve.size(); ++k) {
    MESSAGE("nominal " << curve[k].nominal << " empirical " << curve[k].empirical);
    CHECK(std::abs(curve[k].empirical - curve[k].nominal) <= 0.10);
  }
  const auto again = coverage_curve(shrink(c), insts, TransformGroup{}, 200, levels, 7);
  for (std::size_t k = 0; k < curve.size(); ++k) CHECK(again[k].empirical == curve[k].empirical);
  CHECK_THROWS_AS(coverage_curve(shrink(c), {}, TransformGroup{}, 10, levels, 7), DataError);
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 5) throw DataError("boom");
                  }),
                  DataError);
  CHECK(resolve_threads(3) == 3);
}
