#include <doctest.h>

#include <cmath>
#include <numeric>

#include "reconkit/errors.hpp"
#include "reconkit/generators.hpp"
#include "reconkit/metrics.hpp"
#include "reconkit/selfsup.hpp"
#include "reconkit/solvers.hpp"
#include "reconkit/train.hpp"
#include "support.hpp"

using namespace reconkit;
using testutil::random_tensor;

namespace {

ProblemInstance denoising_instance(const Tensor& x, double sigma, std::uint64_t seed) {
  ProblemInstance inst;
  inst.spec.image_shape = x.shape();
  inst.op = make_identity(x.shape());
  inst.noise = {sigma, 0.0};
  inst.x = x;
  inst.y = sample_noise(x, inst.noise, seed);
  return inst;
}

Reconstructor shrinkage(double c) {
  return [c](const ad::Var& y, const OperatorHandle&, const NoiseParams&) { return ad::scale(y, c); };
}

RamConfig toy_config() {
  RamConfig c;
  c.num_scales = 1;
  c.base_width = 4;
  c.blocks_per_scale = 1;
  c.krylov_order = 1;
  c.heads = {1};
  c.norm_iters = 30;
  return c;
}

}  // namespace

TEST_CASE("image transforms invert exactly") {
  const Tensor x = random_tensor({2, 6, 6}, 1);
  const Tensor r = random_tensor({1, 5, 7}, 2);
  Rng rng(3);
  TransformGroup g;
  for (int i = 0; i < 50; ++i) {
    const auto t = g.sample(rng, x.shape());
    CHECK(t.inverse(t.apply(x)) == x);
    const auto tr = g.sample(rng, r.shape());
    CHECK(tr.output_shape(r.shape()) == r.shape());
    CHECK(tr.inverse(tr.apply(r)) == r);
    CHECK(std::abs(t.rot) < 4);
    CHECK(std::abs(t.shift_h) <= 0);  // floor(0.1 * 6) == 0
  }
  // Explicit rotation: a single quarter turn moves the top-right corner to top-left.
  Tensor a({1, 2, 3});
  for (std::size_t i = 0; i < 6; ++i) a[i] = static_cast<double>(i);
  ImageTransform rot;
  rot.rot = 1;
  const Tensor b = rot.apply(a);
  CHECK(b.shape() == Shape{1, 3, 2});
  CHECK(b.at(0, 0, 0) == a.at(0, 0, 2));
  CHECK(b.at(0, 2, 1) == a.at(0, 1, 0));
  CHECK(rot.inverse(b) == a);
  ImageTransform sh;
  sh.shift_h = 1;
  sh.shift_w = -1;
  const Tensor c = sh.apply(a);
  CHECK(c.at(0, 1, 0) == a.at(0, 0, 1));
  // Graph versions are adjoint pairs.
  ImageTransform t{2, -3, 3, true};
  const Tensor big = random_tensor({1, 20, 20}, 4);
  CHECK(std::abs(dot(t.apply(big), big) - dot(big, t.inverse(big))) < 1e-12);
  ad::Var v = ad::leaf(big);
  ad::backward(ad::dot(t.apply(v), ad::constant(big)));
  CHECK(v.grad() == t.inverse(big));
  TransformGroup shifts{GroupKind::shifts, 0.1};
  for (int i = 0; i < 100; ++i) {
    const auto s = shifts.sample(rng, {1, 40, 40});
    CHECK(std::abs(s.shift_h) <= 4);
    CHECK(s.rot == 0);
  }
  CHECK(parse_group_kind("flips") == GroupKind::flips);
  CHECK_THROWS_AS(parse_group_kind("affine"), DataError);
}

TEST_CASE("monte-carlo divergence") {
  const Tensor y = random_tensor({100}, 1);
  CHECK(mc_divergence([](const Tensor& v) { return v; }, y, 1e-3, 3, 2) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(mc_divergence([](const Tensor& v) { return Tensor(v.shape(), 2.0); }, y, 1e-3, 3, 2) == 0.0);

  // Random PSD W = B^T B / n keeps the trace well away from zero.
  Rng rng(3);
  const Eigen::MatrixXd B = Eigen::MatrixXd::NullaryExpr(50, 50, [&] { return rng.normal(); });
  const Eigen::MatrixXd W = B.transpose() * B / 50.0;
  auto fn = [&](const Tensor& v) { return testutil::from_eigen(W * testutil::to_eigen(v), v.shape()); };
  const Tensor y50 = random_tensor({50}, 4);
  const double est = mc_divergence(fn, y50, 1e-3, 2000, 5);
  CHECK(std::abs(est - W.trace()) < 0.03 * W.trace());

  // Unbiasedness: 50 single-probe repetitions, mean within 3 standard errors.
  std::vector<double> reps;
  for (int k = 0; k < 50; ++k) reps.push_back(mc_divergence(fn, y50, 1e-3, 1, 100 + k));
  const double mean = std::accumulate(reps.begin(), reps.end(), 0.0) / 50.0;
  double var = 0.0;
  for (double r : reps) var += (r - mean) * (r - mean) / 49.0;
  CHECK(std::abs(mean - W.trace()) < 3.0 * std::sqrt(var / 50.0));

  // Graph version agrees with the numeric one and carries gradients.
  ad::Var c = ad::leaf(Tensor({1}, 0.7));
  auto gfn = [&](const ad::Var& v) { return ad::scalar_mul(c, v); };
  const ad::Var d = mc_divergence(gfn, y, ad::Var{}, 1e-3, 2, 9);
  CHECK(d.item() == doctest::Approx(70.0).epsilon(1e-9));
  ad::backward(d);
  CHECK(c.grad()[0] == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("sure matches the risk of linear shrinkage") {
  const double sigma = 0.1;
  Tensor xs({1, 10, 10});
  Rng rng(2);
  for (double& v : xs.storage()) v = 0.2 * rng.normal();
  const std::size_t m = xs.size();
  for (double c : {0.3, 0.8}) {
    double sure = 0.0, risk = 0.0;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
      const auto inst = denoising_instance(xs, sigma, 1000 + k);
      sure += sure_loss(shrinkage(c), inst, 1, k).item() - m * sigma * sigma;
      risk += norm2(c * inst.y - xs) * norm2(c * inst.y - xs);
    }
    CHECK(std::abs(sure - risk) < 0.05 * risk);
  }

  // R == 0: loss is ||y||^2.
  const auto inst = denoising_instance(xs, sigma, 3);
  CHECK(sure_loss(shrinkage(0.0), inst, 1, 0).item() == doctest::Approx(norm2(inst.y) * norm2(inst.y)).epsilon(1e-12));
  ProblemInstance pg = inst;
  pg.noise.gamma = 0.1;
  CHECK_THROWS_AS(sure_loss(shrinkage(1.0), pg, 1, 0), DataError);
}

TEST_CASE("sure minimizer is the wiener shrinkage") {
  const double sigma = 0.2;
  Tensor x({1, 100, 100});
  Rng rng(7);
  for (double& v : x.storage()) v = 0.3 * rng.normal();
  const auto inst = denoising_instance(x, sigma, 8);
  double s2 = 0.0;
  for (double v : x.data()) s2 += v * v / static_cast<double>(x.size());
  double best_c = 0.0, best = 1e300;
  for (int k = 0; k <= 1000; ++k) {
    const double c = k / 1000.0;
    const double v = sure_loss(shrinkage(c), inst, 1, 0).item();
    if (v < best) {
      best = v;
      best_c = c;
    }
  }
  CHECK(std::abs(best_c - s2 / (s2 + sigma * sigma)) < 0.02);
}

TEST_CASE("split loss") {
  const Tensor x = random_tensor({1, 12, 12}, 1);
  const auto inst = denoising_instance(x, 0.3, 2);
  CHECK(split_loss(shrinkage(0.5), inst, 1.0, 3).item() == 0.0);
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(split_loss(shrinkage(0.5), inst, 0.7, s).item() >= 0.0);
  CHECK_THROWS_AS(split_loss(shrinkage(0.5), inst, 0.0, 3), DataError);

  // The model never sees held-out entries.
  Tensor seen;
  Reconstructor spy = [&](const ad::Var& y, const OperatorHandle&, const NoiseParams&) {
    seen = y.value();
    return ad::scale(y, 1.0);
  };
  split_loss(spy, inst, 0.6, 11);
  const Tensor first = seen;
  ProblemInstance other = inst;
  for (std::size_t i = 0; i < other.y.size(); ++i)
    if (first[i] == 0.0) other.y[i] += 5.0;
  split_loss(spy, other, 0.6, 11);
  CHECK(seen == first);

  // Noise2self-style scan: predicting held-out pixels from their neighbours
  // prefers shrinkage.
  Tensor smooth({1, 32, 32});
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) smooth.at(0, i, j) = 0.3 * std::sin(0.3 * i) * std::cos(0.25 * j);
  const auto noisy = denoising_instance(smooth, 0.3, 5);
  auto neighbour_mean = [](const Tensor& v) {
    Tensor out(v.shape());
    const std::size_t n = 32;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0, cnt = 0.0;
        const std::size_t is[4] = {(i + 1) % n, (i + n - 1) % n, i, i};
        const std::size_t js[4] = {j, j, (j + 1) % n, (j + n - 1) % n};
        for (int k = 0; k < 4; ++k)
          if (v.at(0, is[k], js[k]) != 0.0) {
            s += v.at(0, is[k], js[k]);
            cnt += 1.0;
          }
        out.at(0, i, j) = cnt > 0.0 ? s / cnt : 0.0;
      }
    return out;
  };
  auto scan = [&](std::uint64_t seed) {
    double best_c = 0.0, best = 1e300;
    for (int k = 0; k <= 150; ++k) {
      const double c = k / 100.0;
      Reconstructor r = [&](const ad::Var& y, const OperatorHandle&, const NoiseParams&) {
        return ad::constant(c * neighbour_mean(y.value()));
      };
      const double v = split_loss(r, noisy, 0.8, seed).item();
      if (v < best) {
        best = v;
        best_c = c;
      }
    }
    return best_c;
  };
  for (std::uint64_t s = 0; s < 3; ++s) {
    const double c = scan(s);
    CHECK(c < 1.0);
    CHECK(c > 0.0);
  }
}

TEST_CASE("equivariant imaging loss") {
  const Tensor x = random_tensor({1, 16, 16}, 1);
  const auto inst = denoising_instance(x, 0.1, 2);
  Reconstructor ident = [](const ad::Var& y, const OperatorHandle&, const NoiseParams&) { return y; };
  TransformGroup g;
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(ei_loss(ident, inst, g, s).item() == 0.0);

  RamModel model(toy_config(), 3);
  const auto r = model_reconstructor(model);
  ProblemInstance ip;
  ip.spec.image_shape = {1, 16, 16};
  ip.op = make_inpainting(make_bernoulli_mask({1, 16, 16}, 0.6, 4));
  const auto data = make_synthetic_dataset(SyntheticKind::smooth_bumps, 1, {1, 16, 16}, 5);
  ip.x = data[0];
  ip.noise = {0.02, 0.0};
  ip.y = sample_noise(ip.op.apply(data[0]), ip.noise, 6);
  CHECK(ei_loss(r, ip, g, 1).item() >= 0.0);

  // Loss trajectory under Adam on the EI loss alone.
  TransformGroup shifts{GroupKind::shifts, 0.1};
  ad::Adam opt(1e-3);
  auto params = model.params().all();
  std::vector<double> losses;
  for (std::uint64_t step = 0; step < 200; ++step) {
    model.params().zero_grad();
    const ad::Var l = ei_loss(r, ip, shifts, step);
    ad::backward(l);
    opt.step(params);
    losses.push_back(l.item());
  }
  const double head = std::accumulate(losses.begin(), losses.begin() + 20, 0.0);
  const double tail = std::accumulate(losses.end() - 20, losses.end(), 0.0);
  MESSAGE("EI loss first 20 " << head << " last 20 " << tail);
  CHECK(tail < head);
}

TEST_CASE("multi-operator loss") {
  Tensor w({1, 8, 8});
  Rng rng(1);
  for (double& v : w.storage()) v = rng.uniform(0.5, 2.0);
  const auto a = make_diagonal(w);
  ProblemInstance inst;
  inst.op = a;
  inst.x = random_tensor({1, 8, 8}, 2);
  inst.y = a.apply(*inst.x);
  Reconstructor inverse = [&](const ad::Var& y, const OperatorHandle&, const NoiseParams&) {
    Tensor inv(w.shape());
    for (std::size_t i = 0; i < w.size(); ++i) inv[i] = 1.0 / w[i];
    return ad::mul_const(y, inv);
  };
  CHECK(moi_loss(inverse, inst, {a}, 3).item() < 1e-24);
  const auto other = make_inpainting(make_bernoulli_mask({1, 8, 8}, 0.5, 3));
  CHECK(moi_loss(inverse, inst, {other}, 3).item() >= 0.0);
  CHECK_THROWS_AS(moi_loss(inverse, inst, {}, 3), DataError);
}

TEST_CASE("finetune objective and loop") {
  const auto data = make_synthetic_dataset(SyntheticKind::smooth_bumps, 2, {1, 16, 16}, 1);
  std::vector<ProblemInstance> insts;
  for (std::size_t i = 0; i < 2; ++i) {
    ProblemInstance p;
    p.spec.kind = "inpainting";
    p.spec.image_shape = {1, 16, 16};
    p.spec.p = 0.7;
    p.spec.seed = i;
    p.op = build_operator(p.spec);
    p.noise = {0.05, 0.0};
    p.x = data[i];
    p.y = sample_noise(p.op.apply(data[i]), p.noise, 10 + i);
    insts.push_back(p);
  }
  RamModel model(toy_config(), 2);
  const auto r = model_reconstructor(model);
  FinetuneConfig cfg;
  cfg.omega = 0.0;
  const double pure = finetune_objective(r, insts, cfg, 5).item();
  double expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) expected += sure_loss(r, insts[i], 1, derive_seed(5, 2 * i)).item();
  CHECK(pure == doctest::Approx(expected).epsilon(1e-12));

  cfg.omega = 0.1;
  cfg.steps = 6;
  cfg.eval_every = 2;
  cfg.lr = 1e-3;
  RamModel m1(toy_config(), 2), m2(toy_config(), 2);
  const auto r1 = finetune(m1, insts, cfg);
  const auto r2 = finetune(m2, insts, cfg);
  CHECK(r1.losses == r2.losses);
  CHECK(r1.evaluations.size() == 4);
  // The model holds the selected checkpoint.
  double best = 1e300;
  for (const auto& e : r1.evaluations) best = std::min(best, e.second);
  CHECK(r1.best_score == best);

  cfg.oracle_selection = true;
  RamModel m3(toy_config(), 2);
  const auto r3 = finetune(m3, insts, cfg);
  CHECK(r3.best_score < 0.0);  // negative PSNR
  auto no_truth = insts;
  no_truth[0].x.reset();
  CHECK_THROWS_AS(finetune(m3, no_truth, cfg), DataError);

  cfg.oracle_selection = false;
  auto poisson = insts;
  poisson[1].noise.gamma = 0.1;
  CHECK_THROWS_AS(finetune(m3, poisson, cfg), DataError);
  cfg.mc_loss = McLoss::split;
  cfg.null_loss = NullLoss::moi;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  CHECK(parse_mc_loss("split") == McLoss::split);
  CHECK(parse_null_loss("none") == NullLoss::none);
}

TEST_CASE("multi-operator loss helps with complementary masks") {
  const Shape g{1, 16, 16};
  const Tensor m = make_bernoulli_mask(g, 0.5, 3);
  Tensor mc(g);
  for (std::size_t i = 0; i < m.size(); ++i) mc[i] = 1.0 - m[i];
  const std::vector<OperatorHandle> family{make_inpainting(m), make_inpainting(mc)};
  const NoiseParams noise{0.01, 0.0};
  auto measure = [&](const Dataset& d, std::uint64_t base) {
    std::vector<ProblemInstance> out;
    for (std::size_t i = 0; i < d.size(); ++i) {
      ProblemInstance p;
      p.op = family[i % 2];
      p.noise = noise;
      p.x = d[i];
      p.y = sample_noise(p.op.apply(d[i]), noise, base + i);
      out.push_back(p);
    }
    return out;
  };
  const auto train = measure(make_synthetic_dataset(SyntheticKind::piecewise_constant, 20, g, 11), 100);
  const auto test = measure(make_synthetic_dataset(SyntheticKind::piecewise_constant, 10, g, 12), 200);
  RamConfig c;
  c.num_scales = 2;
  c.base_width = 8;
  c.blocks_per_scale = 1;
  c.krylov_order = 2;
  c.heads = {1};
  c.fast_coarse = true;
  c.norm_iters = 50;
  auto run = [&](double omega) {
    RamModel model(c, 0);
    FinetuneConfig fc;
    fc.mc_loss = McLoss::split;
    fc.split_keep = 0.7;
    fc.null_loss = omega > 0.0 ? NullLoss::moi : NullLoss::none;
    fc.omega = omega;
    fc.moi_family = family;
    fc.steps = 100;
    fc.lr = 1e-3;
    fc.eval_every = 100;
    fc.seed = 1;
    finetune(model, train, fc);
    double acc = 0.0;
    for (const auto& p : test) acc += psnr(model.reconstruct(p.y, p.op, p.noise), *p.x);
    return acc / static_cast<double>(test.size());
  };
  const double split_only = run(0.0), with_moi = run(1.0);
  MESSAGE("held-out PSNR split " << split_only << " split+moi " << with_moi);
  CHECK(with_moi > split_only);
}
