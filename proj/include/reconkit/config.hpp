#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "reconkit/model.hpp"
#include "reconkit/selfsup.hpp"
#include "reconkit/train.hpp"

namespace reconkit {

// JSON forms. Missing keys keep the struct defaults; unknown keys are rejected
// so typos do not pass silently.
void to_json(nlohmann::json& j, const RamConfig& c);
void from_json(const nlohmann::json& j, RamConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const TransformGroup& g);
void from_json(const nlohmann::json& j, TransformGroup& g);

/// Images for a task: synthetic, or every entry of a TNSR file.
struct DatasetSpec {
  std::string kind = "piecewise_constant";
  std::size_t count = 200;
  Shape shape{1, 32, 32};
  std::uint64_t seed = 0;
  /// TNSR file; overrides the synthetic fields when set. Relative to the config file.
  std::string path;
};

void from_json(const nlohmann::json& j, DatasetSpec& d);
Dataset load_dataset(const DatasetSpec& spec, const std::filesystem::path& base_dir);

/// A training run: model architecture, init seed, schedule and tasks.
///   {"model": {...}, "init_seed": 0, "train": {...}, "dataset": {...},
///    "tasks": ["denoising", {"name": "inpainting", "dataset": {...}}]}
/// A task's channel count defaults to its dataset's.
struct TrainJob {
  RamConfig model;
  std::uint64_t init_seed = 0;
  TrainConfig train;
  std::vector<TaskSpec> tasks;
};

TrainJob parse_train_job(const nlohmann::json& j, const std::filesystem::path& base_dir);
TrainJob load_train_job(const std::filesystem::path& path);

/// {"mc_loss": "sure", "null_loss": "ei", "omega": 0.1, "probes": 1,
///  "split_keep": 0.9, "group": {...}, "moi_family": [operator specs],
///  "steps": 200, "lr": 1e-4, "seed": 0, "eval_every": 10, "oracle_selection": false}
FinetuneConfig parse_finetune_config(const nlohmann::json& j);
FinetuneConfig load_finetune_config(const std::filesystem::path& path);

/// Parses a file, mapping syntax errors to DataError.
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace reconkit
