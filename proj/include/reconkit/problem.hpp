#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "reconkit/noise.hpp"
#include "reconkit/operators.hpp"

namespace reconkit {

/// Serializable recipe for an operator. Only the fields used by `kind` matter.
///
/// kinds: identity, inpainting, gaussian_blur, motion_blur, mri, multicoil_mri,
/// ct, sr, cs, demosaic.
struct OperatorSpec {
  std::string kind = "identity";
  Shape image_shape{1, 32, 32};
  double p = 0.5;                  // inpainting keep probability
  double kernel_sigma = 1.0;       // gaussian_blur
  double length_scale = 0.1;       // motion_blur
  double amplitude = 0.1;          // motion_blur
  std::size_t kernel_size = 9;     // blur kernels
  double acceleration = 4.0;       // mri, multicoil_mri
  std::size_t coils = 4;           // multicoil_mri
  std::size_t angles = 10;         // ct
  std::size_t factor = 2;          // sr decimation, cs undersampling ratio
  std::string filter = "bicubic";  // sr
  std::uint64_t seed = 0;          // random masks, kernels, signs
};

OperatorHandle build_operator(const OperatorSpec& spec);

void to_json(nlohmann::json& j, const OperatorSpec& spec);
void from_json(const nlohmann::json& j, OperatorSpec& spec);
void to_json(nlohmann::json& j, const NoiseParams& p);
void from_json(const nlohmann::json& j, NoiseParams& p);

/// One reconstruction problem: y = A x + noise.
struct ProblemInstance {
  OperatorSpec spec;
  OperatorHandle op;
  Tensor y;
  NoiseParams noise;
  std::optional<Tensor> x;
  std::uint64_t seed = 0;
};

/// Writes `manifest` (JSON) and, next to it, `<stem>.tnsr` holding entries "y"
/// and, when present, "x".
void save_instance(const ProblemInstance& inst, const std::filesystem::path& manifest);
ProblemInstance load_instance(const std::filesystem::path& manifest);

}  // namespace reconkit
