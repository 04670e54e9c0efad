#include "reconkit/config.hpp"

#include <set>

#include "reconkit/errors.hpp"
#include "reconkit/io.hpp"

namespace reconkit {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw DataError(what + ": expected a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) throw DataError(what + ": unknown key '" + item.key() + "'");
}

std::string group_kind_name(GroupKind k) {
  switch (k) {
    case GroupKind::identity: return "identity";
    case GroupKind::shifts: return "shifts";
    case GroupKind::rotations90: return "rotations90";
    case GroupKind::flips: return "flips";
    case GroupKind::composite: return "composite";
  }
  return "composite";
}

template <typename F>
auto wrap(const std::string& what, F&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

}  // namespace

void to_json(json& j, const RamConfig& c) {
  j = json{{"num_scales", c.num_scales},   {"base_width", c.base_width},
           {"blocks_per_scale", c.blocks_per_scale}, {"krylov_order", c.krylov_order},
           {"heads", c.heads},             {"cg_iters", c.cg_iters},
           {"cg_tol", c.cg_tol},           {"combine_1x1", c.combine_1x1},
           {"zero_init_output", c.zero_init_output}, {"fast_coarse", c.fast_coarse},
           {"norm_iters", c.norm_iters},   {"norm_tol", c.norm_tol}};
}

void from_json(const json& j, RamConfig& c) {
  reject_unknown(j,
                 {"num_scales", "base_width", "blocks_per_scale", "krylov_order", "heads", "cg_iters",
                  "cg_tol", "combine_1x1", "zero_init_output", "fast_coarse", "norm_iters", "norm_tol"},
                 "model config");
  RamConfig d;
  c.num_scales = j.value("num_scales", d.num_scales);
  c.base_width = j.value("base_width", d.base_width);
  c.blocks_per_scale = j.value("blocks_per_scale", d.blocks_per_scale);
  c.krylov_order = j.value("krylov_order", d.krylov_order);
  c.heads = j.value("heads", d.heads);
  c.cg_iters = j.value("cg_iters", d.cg_iters);
  c.cg_tol = j.value("cg_tol", d.cg_tol);
  c.combine_1x1 = j.value("combine_1x1", d.combine_1x1);
  c.zero_init_output = j.value("zero_init_output", d.zero_init_output);
  c.fast_coarse = j.value("fast_coarse", d.fast_coarse);
  c.norm_iters = j.value("norm_iters", d.norm_iters);
  c.norm_tol = j.value("norm_tol", d.norm_tol);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_per_task", c.batch_per_task},
           {"steps", c.steps},
           {"lr", c.lr},
           {"lr_decay_step", c.lr_decay_step},
           {"patch", c.patch},
           {"seed", c.seed},
           {"log_every", c.log_every},
           {"checkpoint_every", c.checkpoint_every},
           {"checkpoint_path", c.checkpoint_path},
           {"log_path", c.log_path}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"batch_per_task", "steps", "lr", "lr_decay_step", "patch", "seed", "log_every",
                  "checkpoint_every", "checkpoint_path", "log_path"},
                 "train config");
  TrainConfig d;
  c.batch_per_task = j.value("batch_per_task", d.batch_per_task);
  c.steps = j.value("steps", d.steps);
  c.lr = j.value("lr", d.lr);
  // Default decay point tracks the step count (90% of training).
  c.lr_decay_step = j.value("lr_decay_step", std::max<std::size_t>(1, c.steps * 9 / 10));
  c.patch = j.value("patch", d.patch);
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", d.checkpoint_path);
  c.log_path = j.value("log_path", d.log_path);
}

void to_json(json& j, const TransformGroup& g) {
  j = json{{"kind", group_kind_name(g.kind)}, {"max_shift_fraction", g.max_shift_fraction}};
}

void from_json(const json& j, TransformGroup& g) {
  reject_unknown(j, {"kind", "max_shift_fraction"}, "transform group");
  TransformGroup d;
  g.kind = parse_group_kind(j.value("kind", group_kind_name(d.kind)));
  g.max_shift_fraction = j.value("max_shift_fraction", d.max_shift_fraction);
  if (!(g.max_shift_fraction >= 0.0 && g.max_shift_fraction <= 1.0))
    throw DataError("transform group: max_shift_fraction must be in [0, 1]");
}

void from_json(const json& j, DatasetSpec& d) {
  reject_unknown(j, {"kind", "count", "shape", "seed", "path"}, "dataset");
  DatasetSpec def;
  d.kind = j.value("kind", def.kind);
  d.count = j.value("count", def.count);
  d.shape = j.value("shape", def.shape);
  d.seed = j.value("seed", def.seed);
  d.path = j.value("path", def.path);
}

Dataset load_dataset(const DatasetSpec& spec, const std::filesystem::path& base_dir) {
  if (!spec.path.empty()) {
    std::filesystem::path p = spec.path;
    if (p.is_relative()) p = base_dir / p;
    Dataset out;
    for (auto& e : read_tnsr(p)) {
      if (e.value.rank() == 2) e.value = e.value.reshaped({1, e.value.extent(0), e.value.extent(1)});
      if (e.value.rank() != 3) throw ShapeError("dataset entry '" + e.name + "' must be (C, H, W)");
      out.push_back(std::move(e.value));
    }
    if (out.empty()) throw DataError("dataset " + p.string() + " has no entries");
    return out;
  }
  if (spec.shape.size() != 3) throw ShapeError("dataset shape must be (C, H, W)");
  if (spec.count < 1) throw DataError("dataset count must be positive");
  return make_synthetic_dataset(parse_synthetic_kind(spec.kind), spec.count, spec.shape, spec.seed);
}

TrainJob parse_train_job(const json& j, const std::filesystem::path& base_dir) {
  return wrap("train job", [&] {
    reject_unknown(j, {"model", "init_seed", "train", "dataset", "tasks"}, "train job");
    TrainJob job;
    if (j.contains("model")) job.model = j.at("model").get<RamConfig>();
    job.model.validate();
    job.init_seed = j.value("init_seed", std::uint64_t{0});
    if (j.contains("train")) job.train = j.at("train").get<TrainConfig>();
    std::shared_ptr<const Dataset> shared;
    if (j.contains("dataset"))
      shared = std::make_shared<const Dataset>(load_dataset(j.at("dataset").get<DatasetSpec>(), base_dir));
    if (!j.contains("tasks") || !j.at("tasks").is_array() || j.at("tasks").empty())
      throw DataError("train job: 'tasks' must be a non-empty array");
    for (const auto& t : j.at("tasks")) {
      std::string name;
      std::shared_ptr<const Dataset> data = shared;
      std::size_t kernel_size = 9;
      std::optional<std::size_t> channels;
      if (t.is_string()) {
        name = t.get<std::string>();
      } else {
        reject_unknown(t, {"name", "channels", "dataset", "kernel_size"}, "task");
        name = t.at("name").get<std::string>();
        if (t.contains("dataset"))
          data = std::make_shared<const Dataset>(load_dataset(t.at("dataset").get<DatasetSpec>(), base_dir));
        kernel_size = t.value("kernel_size", kernel_size);
        if (t.contains("channels")) channels = t.at("channels").get<std::size_t>();
      }
      if (!data) throw DataError("task " + name + ": no dataset");
      job.tasks.push_back(make_task(name, channels.value_or(data->front().extent(0)), data, kernel_size));
    }
    return job;
  });
}

TrainJob load_train_job(const std::filesystem::path& path) {
  return parse_train_job(read_json(path), path.parent_path());
}

FinetuneConfig parse_finetune_config(const json& j) {
  return wrap("finetune config", [&] {
    reject_unknown(j,
                   {"mc_loss", "null_loss", "omega", "probes", "split_keep", "group", "moi_family", "steps",
                    "lr", "seed", "eval_every", "oracle_selection"},
                   "finetune config");
    FinetuneConfig c;
    if (j.contains("mc_loss")) c.mc_loss = parse_mc_loss(j.at("mc_loss").get<std::string>());
    if (j.contains("null_loss")) c.null_loss = parse_null_loss(j.at("null_loss").get<std::string>());
    c.omega = j.value("omega", c.omega);
    c.probes = j.value("probes", c.probes);
    c.split_keep = j.value("split_keep", c.split_keep);
    if (j.contains("group")) c.group = j.at("group").get<TransformGroup>();
    if (j.contains("moi_family"))
      for (const auto& s : j.at("moi_family")) c.moi_family.push_back(build_operator(s.get<OperatorSpec>()));
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.oracle_selection = j.value("oracle_selection", c.oracle_selection);
    c.validate();
    return c;
  });
}

FinetuneConfig load_finetune_config(const std::filesystem::path& path) {
  return parse_finetune_config(read_json(path));
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace reconkit
