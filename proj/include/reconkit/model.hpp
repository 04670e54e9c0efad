#pragma once

#include <atomic>
#include <filesystem>
#include <vector>

#include "reconkit/autodiff.hpp"
#include "reconkit/coarse.hpp"
#include "reconkit/noise.hpp"
#include "reconkit/operators.hpp"

namespace reconkit {

struct RamConfig {
  std::size_t num_scales = 3;
  std::size_t base_width = 32;
  std::size_t blocks_per_scale = 2;
  std::size_t krylov_order = 3;
  std::vector<std::size_t> heads{1, 2, 3};
  int cg_iters = 10;
  double cg_tol = 1e-6;
  /// Diagnostic: 1x1 KSM combination so the output stays in the Krylov span.
  bool combine_1x1 = false;
  /// Start the output head at zero so the network returns its prox input.
  bool zero_init_output = false;
  /// Downscaled-kernel / downscaled-mask coarse operators where possible.
  bool fast_coarse = false;
  int norm_iters = 200;
  double norm_tol = 1e-9;

  void validate() const;
};

/// Operator-dependent state of one forward pass, reusable across calls with
/// the same operator.
struct PreparedOperator {
  OperatorHandle base;
  /// base applied after cropping the reflect-padded grid.
  OperatorHandle padded;
  Shape image_shape;
  Shape padded_shape;
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
  std::vector<CoarseOperator> scales;
};

PreparedOperator prepare_operator(const RamConfig& config, const OperatorHandle& op);

/// Parameter pointers of one channel head plus the shared trunk.
struct HeadView {
  std::size_t channels = 0;
  std::vector<ad::Parameter*> head;
  std::vector<ad::Parameter*> trunk;
};

class RamModel {
 public:
  explicit RamModel(RamConfig config = {}, std::uint64_t seed = 0);
  RamModel(RamModel&& other) noexcept;

  const RamConfig& config() const { return config_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  /// Graph forward. y lives in the operator range; the result has the operator
  /// domain shape.
  ad::Var forward(const ad::Var& y, const PreparedOperator& op, const NoiseParams& noise) const;
  ad::Var forward(const ad::Var& y, const OperatorHandle& op, const NoiseParams& noise) const;
  /// Value-only forward.
  Tensor reconstruct(const Tensor& y, const PreparedOperator& op, const NoiseParams& noise) const;
  Tensor reconstruct(const Tensor& y, const OperatorHandle& op, const NoiseParams& noise) const;

  HeadView select_head(std::size_t channels);
  std::vector<ad::Parameter*> trunk_parameters();

  /// 2-channel constant maps (1, 2, H, W) holding sigma and gamma.
  static Tensor noise_maps(const NoiseParams& noise, std::size_t height, std::size_t width);

  /// Output of the KSM combination convolution of `channels`' head at `scale`,
  /// applied to the Krylov stack of (x_s, A_s^T y).
  Tensor ksm_combine(const Tensor& x_s, const CoarseOperator& op_s, const Tensor& y,
                     std::size_t channels) const;

  /// Number of forward passes run so far.
  long evaluations() const { return evaluations_.load(); }
  void reset_evaluations() { evaluations_.store(0); }

 private:
  ad::Var param(const std::string& name) const;
  ad::Var ksm_block(const ad::Var& h, const ad::Var& y, const CoarseOperator& op_s,
                    std::size_t channels, std::size_t scale) const;
  ad::Var ksm_stack(const ad::Var& x_s, const ad::Var& y, const CoarseOperator& op_s) const;

  RamConfig config_;
  mutable ad::ParameterStore params_;
  mutable std::atomic<long> evaluations_{0};
};

/// Groups {(A_s^T A_s)^k x_s} then {(A_s^T A_s)^k A_s^T y}, k = 0..K, each of x_s's shape.
std::vector<Tensor> build_ksm_stack(const Tensor& x_s, const CoarseOperator& op_s, const Tensor& y,
                                    std::size_t order);

/// Checkpoints: one TNSR entry per parameter plus "meta.config".
void save_checkpoint(const RamModel& model, const std::filesystem::path& path, bool f32 = false);
RamModel load_checkpoint(const std::filesystem::path& path);

}  // namespace reconkit
