#include "reconkit/selfsup.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "reconkit/errors.hpp"
#include "reconkit/metrics.hpp"
#include "reconkit/solvers.hpp"

namespace reconkit {

Reconstructor model_reconstructor(const RamModel& model) {
  struct Cache {
    std::mutex mu;
    // Keyed by operator instance; the handle keeps the key alive.
    std::map<const LinearOperator*, std::pair<OperatorHandle, std::shared_ptr<PreparedOperator>>> entries;
  };
  auto cache = std::make_shared<Cache>();
  const RamModel* m = &model;
  return [m, cache](const ad::Var& y, const OperatorHandle& op, const NoiseParams& noise) {
    std::shared_ptr<PreparedOperator> prep;
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->entries.find(&op.impl());
      if (it != cache->entries.end()) prep = it->second.second;
    }
    if (!prep) {
      prep = std::make_shared<PreparedOperator>(prepare_operator(m->config(), op));
      std::lock_guard<std::mutex> lock(cache->mu);
      if (cache->entries.size() >= 32) cache->entries.clear();
      cache->entries[&op.impl()] = {op, prep};
    }
    return m->forward(y, *prep, noise);
  };
}

double divergence_epsilon(const Tensor& y) { return std::max(1e-3 * max_abs(y), 1e-6); }

double mc_divergence(const std::function<Tensor(const Tensor&)>& fn, const Tensor& y, double eps,
                     int probes, std::uint64_t seed) {
  if (!(eps > 0.0)) throw DataError("mc_divergence: eps must be positive");
  if (probes < 1) throw DataError("mc_divergence: need at least one probe");
  Rng rng(seed);
  const Tensor fy = fn(y);
  double acc = 0.0;
  for (int j = 0; j < probes; ++j) {
    Tensor b(y.shape());
    for (double& v : b.storage()) v = rng.rademacher();
    Tensor yb = y;
    axpy(eps, b, yb);
    acc += dot(b, fn(yb) - fy) / eps;
  }
  return acc / probes;
}

ad::Var mc_divergence(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& y,
                      const ad::Var& fy_in, double eps, int probes, std::uint64_t seed) {
  if (!(eps > 0.0)) throw DataError("mc_divergence: eps must be positive");
  if (probes < 1) throw DataError("mc_divergence: need at least one probe");
  Rng rng(seed);
  const ad::Var fy = fy_in.defined() ? fy_in : fn(ad::constant(y));
  ad::Var acc;
  for (int j = 0; j < probes; ++j) {
    Tensor b(y.shape());
    for (double& v : b.storage()) v = rng.rademacher();
    Tensor yb = y;
    axpy(eps, b, yb);
    ad::Var term = ad::dot(ad::constant(b), ad::sub(fn(ad::constant(yb)), fy));
    acc = j == 0 ? term : ad::add(acc, term);
  }
  return ad::scale(acc, 1.0 / (eps * probes));
}

ad::Var sure_loss(const Reconstructor& r, const ProblemInstance& inst, int probes, std::uint64_t seed) {
  if (inst.noise.gamma > 0.0) throw DataError("sure_loss: only Gaussian noise (gamma == 0) is supported");
  const OperatorHandle op = inst.op;
  const NoiseParams noise = inst.noise;
  auto fn = [&](const ad::Var& yy) { return ad::apply_op(op, r(yy, op, noise)); };
  const ad::Var fy = fn(ad::constant(inst.y));
  ad::Var loss = ad::sum_squares(ad::sub(fy, ad::constant(inst.y)));
  if (noise.sigma == 0.0) return loss;
  const ad::Var div = mc_divergence(fn, inst.y, fy, divergence_epsilon(inst.y), probes, seed);
  return ad::add(loss, ad::scale(div, 2.0 * noise.sigma * noise.sigma));
}

ad::Var split_loss(const Reconstructor& r, const ProblemInstance& inst, double keep_prob,
                   std::uint64_t seed) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw DataError("split_loss: keep_prob must be in (0, 1]");
  Tensor mask(inst.y.shape());
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    for (double& v : mask.storage()) v = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
    if (norm1(mask) > 0.0) break;
    if (attempt > 1000) throw DataError("split_loss: could not draw a non-empty mask");
  }
  Tensor held(mask.shape());
  for (std::size_t i = 0; i < held.size(); ++i) held[i] = 1.0 - mask[i];
  if (norm1(held) == 0.0) return ad::sum_squares(ad::constant(Tensor({1})));

  const OperatorHandle masked = make_range_masked(inst.op, mask);
  const double n = operator_norm(masked, 200, 1e-9);
  if (n == 0.0) throw NumericalError("split_loss: kept measurements carry no signal");
  const OperatorHandle a = make_scaled(masked, 1.0 / n);
  const Tensor y_in = (1.0 / n) * hadamard(mask, inst.y);
  const NoiseParams noise{inst.noise.sigma / n, inst.noise.gamma / n};
  const ad::Var x = r(ad::constant(y_in), a, noise);
  const ad::Var resid = ad::sub(ad::apply_op(inst.op, x), ad::constant(inst.y));
  return ad::sum_squares(ad::mul_const(resid, held));
}

ad::Var ei_loss(const Reconstructor& r, const ProblemInstance& inst, const TransformGroup& group,
                std::uint64_t seed) {
  Rng rng(seed);
  const ad::Var x = r(ad::constant(inst.y), inst.op, inst.noise);
  const ImageTransform t = group.sample(rng, x.shape());
  const ad::Var tx = t.apply(x);
  const ad::Var x2 = r(ad::apply_op(inst.op, tx), inst.op, inst.noise);
  return ad::sum_squares(ad::sub(tx, x2));
}

ad::Var moi_loss(const Reconstructor& r, const ProblemInstance& inst,
                 const std::vector<OperatorHandle>& family, std::uint64_t seed) {
  if (family.empty()) throw DataError("moi_loss: empty operator family");
  Rng rng(seed);
  const OperatorHandle& ar = family[rng.uniform_int(family.size())];
  if (ar.domain_shape() != inst.op.domain_shape())
    throw ShapeError("moi_loss: family operator domain does not match the instance");
  const ad::Var x = r(ad::constant(inst.y), inst.op, inst.noise);
  const ad::Var x2 = r(ad::apply_op(ar, x), ar, inst.noise);
  return ad::sum_squares(ad::sub(x, x2));
}

// ---------------------------------------------------------------- finetune

void FinetuneConfig::validate() const {
  if (!(omega >= 0.0)) throw DataError("finetune: omega must be non-negative");
  if (probes < 1) throw DataError("finetune: probes must be positive");
  if (!(split_keep > 0.0 && split_keep <= 1.0)) throw DataError("finetune: split_keep must be in (0, 1]");
  if (steps < 1 || eval_every < 1) throw DataError("finetune: steps and eval_every must be positive");
  if (!(lr >= 0.0)) throw DataError("finetune: lr must be non-negative");
  if (null_loss == NullLoss::moi && omega > 0.0 && moi_family.empty())
    throw DataError("finetune: MOI needs an operator family");
}

McLoss parse_mc_loss(const std::string& name) {
  if (name == "sure") return McLoss::sure;
  if (name == "split") return McLoss::split;
  throw DataError("unknown mc_loss '" + name + "'");
}

NullLoss parse_null_loss(const std::string& name) {
  if (name == "none") return NullLoss::none;
  if (name == "ei") return NullLoss::ei;
  if (name == "moi") return NullLoss::moi;
  throw DataError("unknown null_loss '" + name + "'");
}

ad::Var finetune_objective(const Reconstructor& r, const std::vector<ProblemInstance>& data,
                           const FinetuneConfig& config, std::uint64_t seed) {
  if (data.empty()) throw DataError("finetune: no measurements");
  ad::Var total;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& inst = data[i];
    const std::uint64_t s_mc = derive_seed(seed, 2 * i), s_null = derive_seed(seed, 2 * i + 1);
    ad::Var l = config.mc_loss == McLoss::sure ? sure_loss(r, inst, config.probes, s_mc)
                                               : split_loss(r, inst, config.split_keep, s_mc);
    if (config.omega > 0.0 && config.null_loss != NullLoss::none) {
      ad::Var n = config.null_loss == NullLoss::ei ? ei_loss(r, inst, config.group, s_null)
                                                   : moi_loss(r, inst, config.moi_family, s_null);
      l = ad::add(l, ad::scale(n, config.omega));
    }
    total = i == 0 ? l : ad::add(total, l);
  }
  return total;
}

FinetuneReport finetune(RamModel& model, const std::vector<ProblemInstance>& data,
                        const FinetuneConfig& config) {
  config.validate();
  if (data.empty()) throw DataError("finetune: no measurements");
  for (const auto& inst : data) {
    if (config.mc_loss == McLoss::sure && inst.noise.gamma > 0.0)
      throw DataError("finetune: SURE requires Gaussian noise (gamma == 0)");
    if (config.oracle_selection && !inst.x) throw DataError("finetune: oracle selection needs ground truth");
  }
  const Reconstructor r = model_reconstructor(model);
  auto params = model.params().all();
  ad::Adam opt(config.lr);
  FinetuneReport report;
  const std::uint64_t eval_seed = derive_seed(config.seed, 0xE7A1u);

  auto score = [&] {
    if (config.oracle_selection) {
      ad::NoGradGuard guard;
      double acc = 0.0;
      for (const auto& inst : data)
        acc += psnr(r(ad::constant(inst.y), inst.op, inst.noise).value(), *inst.x);
      return -acc / static_cast<double>(data.size());
    }
    ad::NoGradGuard guard;
    return finetune_objective(r, data, config, eval_seed).item();
  };
  std::vector<Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (auto* p : params) best.push_back(p->value);
  };
  report.best_score = score();
  report.evaluations.emplace_back(0, report.best_score);
  snapshot();

  for (std::size_t step = 0; step < config.steps; ++step) {
    model.params().zero_grad();
    const ad::Var loss = finetune_objective(r, data, config, derive_seed(config.seed, step + 1));
    if (!std::isfinite(loss.item()))
      throw NumericalError("finetune: non-finite loss at step " + std::to_string(step));
    ad::backward(loss);
    opt.step(params);
    report.losses.push_back(loss.item());
    if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
      const double s = score();
      report.evaluations.emplace_back(step + 1, s);
      if (s < report.best_score) {
        report.best_score = s;
        report.best_step = step + 1;
        snapshot();
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return report;
}

}  // namespace reconkit
