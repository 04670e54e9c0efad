#include <doctest.h>

#include <cmath>

#include "reconkit/errors.hpp"
#include "reconkit/generators.hpp"
#include "reconkit/noise.hpp"
#include "reconkit/solvers.hpp"
#include "support.hpp"

using namespace reconkit;
using testutil::random_tensor;
using testutil::rel_diff;

namespace {

OperatorHandle random_dense(std::size_t rows, const Shape& domain, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> m(rows * shape_size(domain));
  for (double& v : m) v = rng.normal() / std::sqrt(static_cast<double>(rows));
  return make_dense(m, domain, {rows});
}

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const Tensor& t) {
  Moments m;
  for (double v : t.data()) m.mean += v;
  m.mean /= static_cast<double>(t.size());
  for (double v : t.data()) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(t.size() - 1);
  return m;
}

}  // namespace

TEST_CASE("cg solves identity and random SPD systems") {
  const Tensor b = random_tensor({32}, 1);
  CGReport rep;
  const Tensor x = conjugate_gradient([](const Tensor& v) { return v; }, b, 10, 1e-12, &rep);
  CHECK(x == b);
  CHECK(rep.iterations == 1);
  CHECK(rep.converged);

  Rng rng(2);
  Eigen::MatrixXd B = Eigen::MatrixXd::NullaryExpr(32, 32, [&] { return rng.normal(); });
  Eigen::MatrixXd M = B.transpose() * B + Eigen::MatrixXd::Identity(32, 32);
  auto apply = [&](const Tensor& v) {
    return testutil::from_eigen(M * testutil::to_eigen(v), v.shape());
  };
  CGReport r2;
  const Tensor sol = conjugate_gradient(apply, b, 500, 1e-14, &r2);
  const Tensor ref = testutil::from_eigen(M.ldlt().solve(testutil::to_eigen(b)), b.shape());
  CHECK(rel_diff(sol, ref) < 1e-8);
  for (std::size_t i = 1; i < r2.history.size(); ++i) CHECK(r2.history[i] <= r2.history[i - 1]);

  // Finite termination in n steps.
  Eigen::MatrixXd B8 = Eigen::MatrixXd::NullaryExpr(8, 8, [&] { return rng.normal(); });
  Eigen::MatrixXd M8 = B8.transpose() * B8 + 0.5 * Eigen::MatrixXd::Identity(8, 8);
  const Tensor b8 = random_tensor({8}, 3);
  CGReport r8;
  conjugate_gradient(
      [&](const Tensor& v) { return testutil::from_eigen(M8 * testutil::to_eigen(v), v.shape()); },
      b8, 8, 1e-12, &r8);
  CHECK(r8.converged);
  CHECK(r8.iterations <= 8);

  CGReport r0;
  const Tensor z = conjugate_gradient(apply, Tensor({32}), 10, 1e-6, &r0);
  CHECK(norm2(z) == 0.0);
  CHECK(r0.iterations == 0);
}

TEST_CASE("lambda schedule") {
  Tensor y({100}, 1.0);
  CHECK(lambda_schedule(0.1, 1.0, y) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(lambda_schedule(0.0, 1.0, y) == 0.0);
  CHECK(lambda_schedule(0.1, 1.0, Tensor({10})) == 0.0);
  const Tensor yr = random_tensor({50}, 4);
  CHECK(lambda_schedule(0.7 * 3.0, 2.0, 3.0 * yr) ==
        doctest::Approx(lambda_schedule(0.7, 2.0, yr)).epsilon(1e-14));
}

TEST_CASE("prox estimate closed forms") {
  const Shape g{1, 12, 12};
  const Tensor mask = make_bernoulli_mask(g, 0.5, 1);
  const auto op = make_inpainting(mask);
  const Tensor y = random_tensor(g, 2);
  for (double lam : {0.1, 1.0, 10.0}) {
    const Tensor u = prox_estimate(op, y, lam, 50, 1e-14);
    Tensor ref(g);
    for (std::size_t i = 0; i < ref.size(); ++i)
      ref[i] = (1.0 + lam) * mask[i] * y[i] / (lam * mask[i] + 1.0);
    CHECK(norm2(u - ref) <= 1e-8 * norm2(ref));
  }
  CHECK(prox_estimate(op, y, 0.0) == op.adjoint(y));

  // Unitary operator: fixed point.
  const auto mri = make_mri(Tensor({12, 12}, 1.0), {2, 12, 12});
  const Tensor ym = mri.apply(random_tensor({2, 12, 12}, 3));
  for (double lam : {0.5, 100.0}) CHECK(rel_diff(prox_estimate(mri, ym, lam, 20, 1e-14), mri.adjoint(ym)) < 1e-12);
}

TEST_CASE("prox and pseudo-inverse match dense solves") {
  const Shape g{1, 4, 4};
  std::vector<OperatorHandle> ops{random_dense(24, g, 5), make_blur(make_gaussian_kernel(1.0, 3), {1, 8, 8}),
                                  make_ct_radon(6, {1, 8, 8})};
  for (const auto& op : ops) {
    CAPTURE(op.kind());
    const Eigen::MatrixXd A = testutil::to_eigen(op);
    const Tensor y = random_tensor(op.range_shape(), 6);
    const Eigen::VectorXd aty = A.transpose() * testutil::to_eigen(y);
    const Eigen::Index n = A.cols();
    for (double lam : {0.3, 5.0}) {
      const Eigen::MatrixXd M = lam * A.transpose() * A + Eigen::MatrixXd::Identity(n, n);
      const Tensor ref = testutil::from_eigen(M.ldlt().solve((1.0 + lam) * aty), op.domain_shape());
      const Tensor u = prox_estimate(op, y, lam, 500, 1e-13);
      CHECK(rel_diff(u, ref) < 1e-5);
      // Optimality residual within 10 x tol.
      const Tensor res = u + lam * op.normal(u) - (1.0 + lam) * op.adjoint(y);
      CHECK(norm2(res) <= 1e-5 * (1.0 + lam) * norm2(op.adjoint(y)));
    }
    const double eps = 1e-8;
    const Eigen::MatrixXd N = A.transpose() * A + eps * Eigen::MatrixXd::Identity(n, n);
    const Tensor ref = testutil::from_eigen(N.ldlt().solve(aty), op.domain_shape());
    if (op.kind() == "dense") CHECK(rel_diff(pseudo_inverse_apply(op, y, eps), ref) < 1e-5);
  }
  // Inpainting pseudo-inverse.
  const Tensor mask = make_bernoulli_mask({1, 8, 8}, 0.5, 2);
  const auto ip = make_inpainting(mask);
  const Tensor y = random_tensor({1, 8, 8}, 3);
  CHECK(rel_diff(pseudo_inverse_apply(ip, y, 1e-3), (1.0 / (1.0 + 1e-3)) * hadamard(mask, y)) < 1e-10);
}

TEST_CASE("prox is linear in y and interpolates toward the pseudo-inverse") {
  const auto op = make_blur(make_gaussian_kernel(1.2, 5), {1, 12, 12});
  const Tensor a = random_tensor(op.range_shape(), 1), b = random_tensor(op.range_shape(), 2);
  const Tensor lhs = prox_estimate(op, 2.0 * a + b, 0.8, 300, 1e-14);
  const Tensor rhs = 2.0 * prox_estimate(op, a, 0.8, 300, 1e-14) + prox_estimate(op, b, 0.8, 300, 1e-14);
  CHECK(rel_diff(lhs, rhs) < 1e-8);

  const Tensor mask = make_bernoulli_mask({1, 8, 8}, 0.6, 3);
  const auto ip = make_scaled(make_inpainting(mask), 0.5);
  const Tensor y = random_tensor({1, 8, 8}, 4);
  const Tensor aty = ip.adjoint(y);
  const Tensor pinv = pseudo_inverse_apply(ip, y, 1e-12);
  Tensor prev = aty;
  for (double lam : {0.1, 1.0, 10.0, 100.0}) {
    const Tensor u = prox_estimate(ip, y, lam, 50, 1e-14);
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (mask[i] == 0.0) continue;
      CHECK(std::abs(u[i] - pinv[i]) <= std::abs(prev[i] - pinv[i]) + 1e-12);
    }
    prev = u;
  }
}

TEST_CASE("differentiable cg matches the numeric solver") {
  const auto op = make_blur(make_gaussian_kernel(1.0, 3), {1, 8, 8});
  const Tensor y = random_tensor(op.range_shape(), 9);
  const Tensor u = prox_estimate(op, y, 0.7, 10, 1e-6);
  const Tensor v = ad::prox_estimate(op, ad::constant(y), ad::scalar(0.7), 10, 1e-6).value();
  CHECK(rel_diff(u, v) < 1e-10);
}

TEST_CASE("noise sampling identities") {
  const Tensor clean({1}, 0.4);
  CHECK(sample_noise(clean, {0.0, 0.0}, 1) == clean);

  const std::size_t n = 100000;
  SUBCASE("gaussian mean") {
    const Moments m = moments(sample_noise(Tensor({n}, 0.4), {0.1, 0.0}, 2));
    CHECK(std::abs(m.mean - 0.4) < 3.0 * 0.1 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(m.var - 0.01) < 0.05 * 0.01);
  }
  SUBCASE("poisson variance") {
    const Moments m = moments(sample_noise(Tensor({n}, 0.4), {0.0, 0.5}, 3));
    CHECK(std::abs(m.mean - 0.4) < 0.05 * 0.4);
    CHECK(std::abs(m.var - 0.5 * 0.4) < 0.05 * 0.2);
  }
  SUBCASE("mixed, including high flux") {
    for (double c : {0.2, 50.0}) {
      const NoiseParams p{0.05, 0.01};
      const Moments m = moments(sample_noise(Tensor({n}, c), p, 4));
      const double var = p.gamma * c + p.sigma * p.sigma;
      CHECK(std::abs(m.mean - c) < 0.05 * c);
      CHECK(std::abs(m.var - var) < 0.05 * var);
    }
  }
  SUBCASE("determinism and clamping") {
    const Tensor x = random_tensor({64}, 5);
    CHECK(sample_noise(x, {0.1, 0.2}, 7) == sample_noise(x, {0.1, 0.2}, 7));
    CHECK(!(sample_noise(x, {0.1, 0.2}, 7) == sample_noise(x, {0.1, 0.2}, 8)));
    bool clamped = false;
    sample_noise(x, {0.0, 0.2}, 7, &clamped);
    CHECK(clamped);
    clamped = false;
    sample_noise(Tensor({4}, 1.0), {0.0, 0.2}, 7, &clamped);
    CHECK(!clamped);
  }
}

TEST_CASE("noise parameter ranges") {
  Rng rng(3);
  NoiseRanges fixed;
  fixed.sigma = Range{0.1, 0.1};
  for (int i = 0; i < 10; ++i) CHECK(sample_params(fixed, rng).sigma == 0.1);
  CHECK(sample_params(fixed, rng).gamma == 0.0);

  NoiseRanges r;
  r.sigma = Range{0.001, 0.2};
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double s = sample_params(r, rng).sigma;
    CHECK(s >= 0.001);
    CHECK(s <= 0.2);
    mean += s / 10000.0;
  }
  CHECK(std::abs(mean - 0.1005) < 0.02 * 0.1005);

  NoiseRanges bad;
  bad.gamma = Range{0.5, 0.1};
  CHECK_THROWS_AS(sample_params(bad, rng), DataError);
}
