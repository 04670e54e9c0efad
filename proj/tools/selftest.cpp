#include "selftest.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <string>
#include <vector>

#include "reconkit/coarse.hpp"
#include "reconkit/generators.hpp"
#include "reconkit/model.hpp"
#include "reconkit/problem.hpp"
#include "reconkit/solvers.hpp"

namespace reconkit::cli {
namespace {

Tensor randn(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

double adjoint_error(const OperatorHandle& op, int probes, Rng& rng) {
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Tensor x = randn(op.domain_shape(), rng);
    const Tensor y = randn(op.range_shape(), rng);
    const double a = dot(op.apply(x), y), b = dot(x, op.adjoint(y));
    worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-300));
  }
  return worst;
}

OperatorSpec spec_for(const std::string& kind) {
  OperatorSpec s;
  s.kind = kind;
  s.image_shape = {1, 16, 16};
  s.seed = 3;
  if (kind == "mri" || kind == "multicoil_mri") s.image_shape = {2, 16, 16};
  if (kind == "demosaic") s.image_shape = {3, 16, 16};
  if (kind == "cs") s.factor = 4;
  return s;
}

// Worst relative error between backprop and central differences over a few entries.
double grad_check(const std::function<ad::Var()>& loss, std::vector<ad::Parameter*> params, Rng& rng) {
  for (auto* p : params) p->grad = Tensor(p->value.shape());
  ad::backward(loss());
  double worst = 0.0;
  const double h = 1e-6;
  for (auto* p : params) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = rng.uniform_int(p->value.size());
      const double analytic = p->grad[i];
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss().item();
      p->value[i] = keep - h;
      const double down = loss().item();
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace

bool run_selftest(std::ostream& out) {
  bool ok = true;
  auto report = [&](const std::string& name, double value, double tol) {
    const bool pass = value < tol;
    ok = ok && pass;
    out << (pass ? "PASS " : "FAIL ") << name << " " << std::scientific << std::setprecision(3) << value
        << " (tol " << tol << ")\n";
  };
  Rng rng(20240501);

  for (const char* kind : {"identity", "inpainting", "gaussian_blur", "motion_blur", "mri", "multicoil_mri",
                           "ct", "sr", "cs", "demosaic"}) {
    const auto op = build_operator(spec_for(kind));
    report(std::string("adjoint ") + kind, adjoint_error(op, 20, rng), 1e-10);
  }
  {
    const auto base = build_operator(spec_for("gaussian_blur"));
    report("adjoint coarse", adjoint_error(make_coarse(base, 2, {}).op, 20, rng), 1e-10);
  }

  {
    // Elementary ops through a small conv graph.
    ad::Parameter w("w", randn({3, 2, 3, 3}, rng));
    ad::Parameter wt("wt", randn({3, 2, 2, 2}, rng));
    const Tensor x = randn({1, 2, 7, 7}, rng);
    auto loss = [&] {
      ad::Var a = ad::relu(ad::conv2d(ad::constant(x), ad::param(w), 1, ad::Padding::reflect(1)));
      ad::Var b = ad::conv_transpose2d(a, ad::param(wt), 2);
      return ad::sum_squares(ad::crop2d(b, 1, 1, 10, 10));
    };
    report("gradient conv graph", grad_check(loss, {&w, &wt}, rng), 1e-4);
  }
  {
    RamConfig cfg;
    cfg.num_scales = 1;
    cfg.base_width = 4;
    cfg.blocks_per_scale = 1;
    cfg.krylov_order = 1;
    cfg.heads = {1};
    cfg.cg_tol = 0.0;
    RamModel model(cfg, 5);
    OperatorSpec s = spec_for("inpainting");
    s.image_shape = {1, 8, 8};
    const auto op = build_operator(s);
    const auto prep = prepare_operator(cfg, op);
    const Tensor y = op.apply(randn({1, 8, 8}, rng));
    const Tensor target = randn({1, 8, 8}, rng);
    auto loss = [&] {
      return ad::sum_squares(ad::sub(model.forward(ad::constant(y), prep, {0.1, 0.0}), ad::constant(target)));
    };
    report("gradient model", grad_check(loss, model.params().all(), rng), 1e-4);
  }
  {
    OperatorSpec s = spec_for("inpainting");
    const auto op = build_operator(s);
    const Tensor y = randn(op.range_shape(), rng);
    const double lambda = 0.7;
    const Tensor u = prox_estimate(op, y, lambda, 50, 0.0);
    const Tensor m = make_bernoulli_mask(s.image_shape, s.p, s.seed);
    const Tensor aty = op.adjoint(y);
    Tensor closed(aty.shape());
    for (std::size_t i = 0; i < closed.size(); ++i)
      closed[i] = (1.0 + lambda) * aty[i] / (lambda * m[i] + 1.0);
    report("prox closed form", max_abs(u - closed), 1e-8);
    report("prox lambda=0", max_abs(prox_estimate(op, y, 0.0) - aty), 1e-300);
  }
  {
    RamConfig cfg;
    cfg.num_scales = 2;
    cfg.base_width = 4;
    cfg.blocks_per_scale = 1;
    cfg.krylov_order = 2;
    cfg.heads = {1, 2};
    RamModel model(cfg, 9);
    double worst = 0.0;
    for (const char* kind : {"inpainting", "gaussian_blur", "mri"}) {
      const auto op = build_operator(spec_for(kind));
      const auto prep = prepare_operator(cfg, op);
      const Tensor y = op.apply(randn(op.domain_shape(), rng));
      const NoiseParams n{0.05, 0.01};
      const Tensor base = model.reconstruct(y, prep, n);
      for (double alpha : {0.5, 2.0, 10.0}) {
        const Tensor scaled = model.reconstruct(alpha * y, prep, {alpha * n.sigma, alpha * n.gamma});
        worst = std::max(worst, norm2(scaled - alpha * base) / norm2(alpha * base));
      }
    }
    report("scale equivariance", worst, 1e-8);
  }
  out << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok;
}

}  // namespace reconkit::cli
