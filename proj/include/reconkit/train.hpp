#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reconkit/model.hpp"
#include "reconkit/noise.hpp"
#include "reconkit/problem.hpp"

namespace reconkit {

using Dataset = std::vector<Tensor>;

enum class SyntheticKind { piecewise_constant, smooth_bumps, text_like };

SyntheticKind parse_synthetic_kind(const std::string& name);

/// Deterministic images in [0, 1] of shape (C, H, W). Two-channel images are
/// complex: a grayscale magnitude times a smooth phase in [0, pi/2].
Dataset make_synthetic_dataset(SyntheticKind kind, std::size_t count, const Shape& shape,
                               std::uint64_t seed);

struct TaskSpec {
  std::string name;
  /// Operator template; image_shape is replaced by the patch shape.
  OperatorSpec op;
  /// Redraw the operator seed for every sample (masks, motion kernels).
  bool fresh_operator = false;
  /// Inpainting keep probability drawn per sample when set.
  std::optional<Range> p_range;
  NoiseRanges noise;
  std::size_t channels = 1;
  std::shared_ptr<const Dataset> dataset;

  void validate() const;
};

/// Named presets: denoising, inpainting, gaussian_blur_{easy,medium,hard},
/// motion_blur_{easy,medium,hard}, sr2, sr4, ct, mri4, mri8, cs4, demosaic.
TaskSpec make_task(const std::string& name, std::size_t channels,
                   std::shared_ptr<const Dataset> dataset, std::size_t kernel_size = 9);
std::vector<std::string> task_names();

/// Random crops (reflect-padded when the image is smaller than the patch),
/// operator and noise draws, simulated measurements. Deterministic in seed.
std::vector<ProblemInstance> sample_batch(const TaskSpec& task, std::size_t batch,
                                          std::uint64_t seed, std::size_t patch);

/// One draw of the task's operator and noise applied to a full image x.
ProblemInstance simulate_instance(const TaskSpec& task, const Tensor& x, std::uint64_t seed);

inline constexpr double kSigmaFloor = 1e-3;

/// ||A^T y||_2 / max(sigma, sigma floor).
double loss_weight(const Tensor& aty, double sigma);

/// omega * ||R(y, A, sigma, gamma) - x||_1. `prepared` may be null.
ad::Var task_loss(const RamModel& model, const ProblemInstance& inst,
                  const PreparedOperator* prepared = nullptr);

struct TrainConfig {
  std::size_t batch_per_task = 4;
  std::size_t steps = 2000;
  double lr = 1e-3;
  /// The learning rate is divided by 10 from this step on.
  std::size_t lr_decay_step = 1800;
  std::size_t patch = 32;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  /// 0 disables periodic checkpoints.
  std::size_t checkpoint_every = 0;
  std::string checkpoint_path;
  /// CSV log (step,task,loss,psnr,baseline_psnr); empty disables.
  std::string log_path;

  void validate() const;
};

struct TrainLogRow {
  std::size_t step = 0;
  std::string task;
  /// Means over the steps since the previous row.
  double loss = 0.0;
  double psnr = 0.0;
  /// PSNR of A^T y against the ground truth on the same samples.
  double baseline_psnr = 0.0;
};

struct TrainReport {
  std::vector<TrainLogRow> log;
  /// Last row per task, in task order.
  std::vector<TrainLogRow> final_rows;
  /// Summed task loss of every step.
  std::vector<double> step_losses;
};

TrainReport train(RamModel& model, const std::vector<TaskSpec>& tasks, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& on_log = {});

}  // namespace reconkit
