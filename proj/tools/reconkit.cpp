// reconkit command-line front end.
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "reconkit/config.hpp"
#include "reconkit/errors.hpp"
#include "reconkit/io.hpp"
#include "reconkit/metrics.hpp"
#include "reconkit/problem.hpp"
#include "reconkit/selfsup.hpp"
#include "reconkit/train.hpp"
#include "reconkit/uq.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using namespace reconkit;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Entry "x" when present, else the first entry. 2-D arrays become one channel.
Tensor read_image(const fs::path& path) {
  const auto entries = read_tnsr(path);
  if (entries.empty()) throw DataError(path.string() + ": no entries");
  auto it = std::find_if(entries.begin(), entries.end(), [](const TnsrEntry& e) { return e.name == "x"; });
  Tensor t = (it != entries.end() ? *it : entries.front()).value;
  if (t.rank() == 2) t = t.reshaped({1, t.extent(0), t.extent(1)});
  if (t.rank() != 3) throw ShapeError(path.string() + ": expected a (C, H, W) image");
  return t;
}

// Reference image from a TNSR file or an instance manifest.
Tensor read_reference(const fs::path& path) {
  if (path.extension() == ".json") {
    auto inst = load_instance(path);
    if (!inst.x) throw DataError(path.string() + ": instance has no ground truth");
    return *inst.x;
  }
  return read_image(path);
}

Tensor displayable(const Tensor& x) {
  if (x.extent(0) != 2) return x;
  Tensor mag({1, x.extent(1), x.extent(2)});
  const std::size_t hw = mag.size();
  for (std::size_t i = 0; i < hw; ++i) mag[i] = std::hypot(x[i], x[hw + i]);
  return mag;
}

std::vector<ProblemInstance> load_instance_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") manifests.push_back(e.path());
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) throw DataError(dir.string() + ": no instance manifests");
  std::vector<ProblemInstance> out;
  for (const auto& m : manifests) out.push_back(load_instance(m));
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_simulate(const std::string& task, const fs::path& in, const fs::path& out, std::uint64_t seed) {
  const Tensor x = read_image(in);
  ProblemInstance inst;
  if (fs::path(task).extension() == ".json") {
    const auto j = read_json(task);
    try {
      inst.spec = j.at("operator").get<OperatorSpec>();
      inst.noise = j.value("noise", NoiseParams{});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(task + ": " + e.what());
    }
    inst.spec.image_shape = x.shape();
    inst.op = build_operator(inst.spec);
    inst.seed = seed;
    inst.y = sample_noise(inst.op.apply(x), inst.noise, seed);
    inst.x = x;
  } else {
    auto data = std::make_shared<const Dataset>(Dataset{x});
    inst = simulate_instance(make_task(task, x.extent(0), data), x, seed);
  }
  save_instance(inst, out);
  return kOk;
}

int cmd_synth(const std::string& kind, std::size_t count, const std::vector<std::size_t>& shape,
              std::uint64_t seed, const fs::path& out) {
  if (shape.size() != 3) throw ShapeError("synth: --shape must be C,H,W");
  const auto data = make_synthetic_dataset(parse_synthetic_kind(kind), count, shape, seed);
  std::vector<TnsrEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img%05zu", i);
    entries.push_back({name, data[i], DType::f64});
  }
  // A single image is stored as "x" so simulate picks it up directly.
  if (entries.size() == 1) entries[0].name = "x";
  write_tnsr(out, entries);
  return kOk;
}

int cmd_train(const fs::path& config, const fs::path& out, const std::string& log, bool quiet) {
  auto job = load_train_job(config);
  if (!log.empty()) job.train.log_path = log;
  RamModel model(job.model, job.init_seed);
  const auto report = train(model, job.tasks, job.train, [&](const TrainLogRow& r) {
    if (!quiet)
      std::cerr << "step " << r.step << " " << r.task << " loss " << fmt(r.loss) << " psnr " << fmt(r.psnr)
                << " baseline " << fmt(r.baseline_psnr) << "\n";
  });
  save_checkpoint(model, out);
  std::cout << "task,psnr,baseline_psnr\n";
  for (const auto& r : report.final_rows)
    std::cout << r.task << "," << fmt(r.psnr) << "," << fmt(r.baseline_psnr) << "\n";
  return kOk;
}

int cmd_finetune(const fs::path& config, const fs::path& model_path, const fs::path& data, const fs::path& out) {
  const auto cfg = load_finetune_config(config);
  RamModel model = load_checkpoint(model_path);
  const auto insts = load_instance_dir(data);
  const auto report = finetune(model, insts, cfg);
  save_checkpoint(model, out);
  std::cout << "step,score\n";
  for (const auto& [step, score] : report.evaluations) std::cout << step << "," << fmt(score) << "\n";
  std::cout << "best_step," << report.best_step << "\n";
  return kOk;
}

int cmd_reconstruct(const fs::path& model_path, const fs::path& instance, const fs::path& out,
                    const std::string& pgm) {
  const RamModel model = load_checkpoint(model_path);
  const auto inst = load_instance(instance);
  const Tensor xhat = model.reconstruct(inst.y, inst.op, inst.noise);
  write_tnsr(out, {{"xhat", xhat, DType::f64}});
  if (!pgm.empty()) export_pnm(displayable(xhat), pgm);
  return kOk;
}

int cmd_eval(const fs::path& pred, const fs::path& ref, const std::string& metrics, double range) {
  const Tensor a = read_image(pred);
  const Tensor b = read_reference(ref);
  require_same_shape(a, b, "eval");
  if (range <= 0.0) {
    // Complex images are scored against their own peak magnitude.
    range = 1.0;
    if (b.extent(0) == 2) range = max_abs(displayable(b));
    if (range == 0.0) range = 1.0;
  }
  std::vector<std::string> names;
  std::stringstream ss(metrics);
  for (std::string m; std::getline(ss, m, ',');)
    if (!m.empty()) names.push_back(m);
  if (names.empty()) throw DataError("eval: no metrics requested");
  std::vector<double> values;
  for (const auto& m : names) {
    if (m == "psnr") values.push_back(psnr(a, b, range));
    else if (m == "ssim") values.push_back(ssim(a, b, range));
    else throw DataError("eval: unknown metric '" + m + "'");
  }
  for (std::size_t i = 0; i < names.size(); ++i) std::cout << (i ? "," : "") << names[i];
  std::cout << "\n";
  for (std::size_t i = 0; i < values.size(); ++i) std::cout << (i ? "," : "") << fmt(values[i]);
  std::cout << "\n";
  return kOk;
}

struct UqArgs {
  std::string model, instance, out, heatmap, coverage, coverage_data, group = "composite";
  std::size_t samples = 100, threads = 0;
  std::uint64_t seed = 0;
};

int cmd_uq(const UqArgs& a) {
  const RamModel model = load_checkpoint(a.model);
  const auto inst = load_instance(a.instance);
  const auto r = model_value_reconstructor(model);
  const TransformGroup group{parse_group_kind(a.group), 0.1};
  const auto sample = equivariant_bootstrap(r, inst, group, a.samples, a.seed, a.threads);
  const Tensor err = pixelwise_errors(sample);
  write_tnsr(a.out, {{"error", err, DType::f64}, {"estimate", sample.estimate, DType::f64}});
  if (!a.heatmap.empty()) {
    const double peak = max_abs(err);
    export_pnm(peak > 0.0 ? (1.0 / peak) * err : err, a.heatmap);
  }
  std::cout << "evaluations," << sample.evaluations << "\n";
  std::cout << "mean_error," << fmt(norm1(err) / static_cast<double>(err.size())) << "\n";
  if (!a.coverage.empty()) {
    const auto insts = a.coverage_data.empty() ? std::vector<ProblemInstance>{inst} : load_instance_dir(a.coverage_data);
    std::vector<double> levels;
    for (int k = 0; k <= 10; ++k) levels.push_back(k / 10.0);
    const auto curve = coverage_curve(r, insts, group, a.samples, levels, a.seed, a.threads);
    std::ostringstream csv;
    csv << "nominal,empirical\n";
    for (const auto& p : curve) csv << fmt(p.nominal) << "," << fmt(p.empirical) << "\n";
    write_file(a.coverage, csv.str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reconkit: multi-operator image reconstruction toolkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  std::string task, in, out, config, model, data, instance, pred, ref, log, pgm;
  std::string metrics = "psnr,ssim";
  std::uint64_t seed = 0;
  double range = 0.0;
  bool quiet = false;
  UqArgs uq;

  auto* sim = app.add_subcommand("simulate", "Simulate a measurement from a clean image");
  sim->add_option("--task", task, "Task preset name or operator/noise JSON")->required();
  sim->add_option("--in", in, "Clean image (TNSR)")->required();
  sim->add_option("--out", out, "Instance manifest to write")->required();
  sim->add_option("--seed", seed, "Random seed");
  sim->callback([&] { action = [&] { return cmd_simulate(task, in, out, seed); }; });

  std::string kind = "piecewise_constant";
  std::size_t count = 1;
  std::vector<std::size_t> shape{1, 32, 32};
  auto* syn = app.add_subcommand("synth", "Write synthetic clean images");
  syn->add_option("--kind", kind, "piecewise_constant, smooth_bumps or text_like");
  syn->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  syn->add_option("--shape", shape, "C,H,W")->delimiter(',');
  syn->add_option("--seed", seed, "Random seed");
  syn->add_option("--out", out, "TNSR file to write")->required();
  syn->callback([&] { action = [&] { return cmd_synth(kind, count, shape, seed, out); }; });

  auto* tr = app.add_subcommand("train", "Supervised multi-task training");
  tr->add_option("--config", config, "Training job JSON")->required();
  tr->add_option("--out", out, "Checkpoint to write")->required();
  tr->add_option("--log", log, "CSV log path");
  tr->add_flag("--quiet", quiet, "No progress output");
  tr->callback([&] { action = [&] { return cmd_train(config, out, log, quiet); }; });

  auto* ft = app.add_subcommand("finetune", "Self-supervised finetuning on measurements");
  ft->add_option("--config", config, "Finetune JSON")->required();
  ft->add_option("--model", model, "Checkpoint")->required();
  ft->add_option("--data", data, "Directory of instance manifests")->required();
  ft->add_option("--out", out, "Checkpoint to write")->required();
  ft->callback([&] { action = [&] { return cmd_finetune(config, model, data, out); }; });

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct an instance");
  rec->add_option("--model", model, "Checkpoint")->required();
  rec->add_option("--instance", instance, "Instance manifest")->required();
  rec->add_option("--out", out, "Reconstruction (TNSR)")->required();
  rec->add_option("--export-pgm", pgm, "Also write an 8-bit PGM/PPM");
  rec->callback([&] { action = [&] { return cmd_reconstruct(model, instance, out, pgm); }; });

  auto* ev = app.add_subcommand("eval", "Compare a reconstruction with a reference");
  ev->add_option("--pred", pred, "Reconstruction (TNSR)")->required();
  ev->add_option("--ref", ref, "Reference (TNSR or instance manifest)")->required();
  ev->add_option("--metrics", metrics, "Comma-separated: psnr,ssim");
  ev->add_option("--range", range, "Data range (default 1, or peak magnitude for complex images)");
  ev->callback([&] { action = [&] { return cmd_eval(pred, ref, metrics, range); }; });

  auto* u = app.add_subcommand("uq", "Equivariant bootstrap error map");
  u->add_option("--model", uq.model, "Checkpoint")->required();
  u->add_option("--instance", uq.instance, "Instance manifest")->required();
  u->add_option("--samples", uq.samples, "Bootstrap replicates")->check(CLI::PositiveNumber);
  u->add_option("--out", uq.out, "Error map (TNSR)")->required();
  u->add_option("--heatmap", uq.heatmap, "Error map as PGM, scaled to its peak");
  u->add_option("--coverage", uq.coverage, "Write the coverage curve CSV");
  u->add_option("--coverage-data", uq.coverage_data, "Instances with ground truth for the coverage curve");
  u->add_option("--group", uq.group, "identity, shifts, rotations90, flips or composite");
  u->add_option("--seed", uq.seed, "Random seed");
  u->add_option("--threads", uq.threads, "Worker threads (default RECONKIT_THREADS or 1)");
  u->callback([&] { action = [&] { return cmd_uq(uq); }; });

  auto* st = app.add_subcommand("selftest", "Run the invariant checks");
  st->callback([&] { action = [&] { return cli::run_selftest(std::cout) ? kOk : kNumerical; }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  try {
    return action();
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
