#pragma once

#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "reconkit/group.hpp"
#include "reconkit/model.hpp"
#include "reconkit/problem.hpp"

namespace reconkit {

/// Differentiable reconstruction R(y, A, sigma, gamma).
using Reconstructor =
    std::function<ad::Var(const ad::Var& y, const OperatorHandle& op, const NoiseParams& noise)>;

/// Wraps a model; prepared operators are cached per operator instance.
Reconstructor model_reconstructor(const RamModel& model);

/// Probe step: 1e-3 * max|y|, at least 1e-6.
double divergence_epsilon(const Tensor& y);

/// (1/N) sum_j b_j^T (fn(y + eps b_j) - fn(y)) / eps, Rademacher b_j.
double mc_divergence(const std::function<Tensor(const Tensor&)>& fn, const Tensor& y, double eps,
                     int probes, std::uint64_t seed);
/// Graph version; `fy` is fn(y) when already computed (may be undefined).
ad::Var mc_divergence(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& y,
                      const ad::Var& fy, double eps, int probes, std::uint64_t seed);

/// ||A R(y) - y||^2 + 2 sigma^2 div(A o R)(y). Gaussian noise only.
ad::Var sure_loss(const Reconstructor& r, const ProblemInstance& inst, int probes, std::uint64_t seed);

/// Keeps each measurement with probability keep_prob, reconstructs from the kept
/// part with the renormalized operator diag(m) A, and scores the held-out part.
ad::Var split_loss(const Reconstructor& r, const ProblemInstance& inst, double keep_prob,
                   std::uint64_t seed);

/// ||T x - R(A T x)||^2 with x = R(y) and one random T from the group.
ad::Var ei_loss(const Reconstructor& r, const ProblemInstance& inst, const TransformGroup& group,
                std::uint64_t seed);

/// ||x - R(A_r x, A_r)||^2 with x = R(y, A) and one random A_r from the family.
ad::Var moi_loss(const Reconstructor& r, const ProblemInstance& inst,
                 const std::vector<OperatorHandle>& family, std::uint64_t seed);

enum class McLoss { sure, split };
enum class NullLoss { none, ei, moi };

struct FinetuneConfig {
  McLoss mc_loss = McLoss::sure;
  NullLoss null_loss = NullLoss::ei;
  double omega = 0.1;
  int probes = 1;
  double split_keep = 0.9;
  TransformGroup group;
  /// Operators for the MOI loss (domain must match the instances).
  std::vector<OperatorHandle> moi_family;
  std::size_t steps = 200;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  /// Checkpoint selection interval, in steps.
  std::size_t eval_every = 10;
  /// Select the checkpoint by PSNR against the instances' ground truth.
  bool oracle_selection = false;

  void validate() const;
};

McLoss parse_mc_loss(const std::string& name);
NullLoss parse_null_loss(const std::string& name);

struct FinetuneReport {
  /// Training objective at every step.
  std::vector<double> losses;
  /// Selection score at every evaluation (self-supervised loss, or -PSNR in oracle mode).
  std::vector<std::pair<std::size_t, double>> evaluations;
  std::size_t best_step = 0;
  double best_score = 0.0;
};

/// Sum over the data of L_MC + omega * L_NULL.
ad::Var finetune_objective(const Reconstructor& r, const std::vector<ProblemInstance>& data,
                           const FinetuneConfig& config, std::uint64_t seed);

/// Adam on the objective; the model ends with the selected checkpoint's weights.
FinetuneReport finetune(RamModel& model, const std::vector<ProblemInstance>& data,
                        const FinetuneConfig& config);

}  // namespace reconkit
