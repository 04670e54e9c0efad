#include "reconkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "reconkit/errors.hpp"
#include "reconkit/generators.hpp"
#include "reconkit/metrics.hpp"
#include "reconkit/rng.hpp"

namespace reconkit {

// ---------------------------------------------------------------- datasets

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "piecewise_constant" || name == "piecewise-constant" || name == "piecewise")
    return SyntheticKind::piecewise_constant;
  if (name == "smooth_bumps" || name == "smooth-bumps" || name == "bumps") return SyntheticKind::smooth_bumps;
  if (name == "text_like" || name == "text-like" || name == "text") return SyntheticKind::text_like;
  throw DataError("unknown synthetic dataset kind '" + name + "'");
}

namespace {

void fill_rect(Tensor& img, std::size_t ch, std::size_t i0, std::size_t j0, std::size_t i1,
               std::size_t j1, double v) {
  for (std::size_t i = i0; i < i1; ++i)
    for (std::size_t j = j0; j < j1; ++j) img.at(ch, i, j) = v;
}

// Grayscale or colour image of the requested kind, channels == shape[0] (1 or 3).
Tensor synth_image(SyntheticKind kind, const Shape& shape, Rng& rng) {
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  Tensor img(shape);
  auto colour = [&](double lo, double hi) {
    std::vector<double> v(c);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
  };
  switch (kind) {
    case SyntheticKind::piecewise_constant: {
      const auto bg = colour(0.0, 1.0);
      for (std::size_t ch = 0; ch < c; ++ch) fill_rect(img, ch, 0, 0, h, w, bg[ch]);
      const std::size_t shapes = 2 + rng.uniform_int(4);
      for (std::size_t s = 0; s < shapes; ++s) {
        const std::size_t rh = std::max<std::size_t>(2, h / 6 + rng.uniform_int(h / 3 + 1));
        const std::size_t rw = std::max<std::size_t>(2, w / 6 + rng.uniform_int(w / 3 + 1));
        const std::size_t i0 = rng.uniform_int(h - std::min(rh, h) + 1);
        const std::size_t j0 = rng.uniform_int(w - std::min(rw, w) + 1);
        const auto v = colour(0.0, 1.0);
        for (std::size_t ch = 0; ch < c; ++ch)
          fill_rect(img, ch, i0, j0, std::min(h, i0 + rh), std::min(w, j0 + rw), v[ch]);
      }
      break;
    }
    case SyntheticKind::smooth_bumps: {
      const std::size_t bumps = 3 + rng.uniform_int(4);
      const double ext = static_cast<double>(std::min(h, w));
      for (std::size_t b = 0; b < bumps; ++b) {
        const double ci = rng.uniform(0.0, static_cast<double>(h));
        const double cj = rng.uniform(0.0, static_cast<double>(w));
        const double r = rng.uniform(ext / 10.0, ext / 4.0);
        const auto a = colour(-1.0, 1.0);
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
            const double g = std::exp(-d2 / (2.0 * r * r));
            for (std::size_t ch = 0; ch < c; ++ch) img.at(ch, i, j) += a[ch] * g;
          }
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto first = img.storage().begin() + static_cast<long>(ch * h * w);
        auto last = first + static_cast<long>(h * w);
        const auto [lo, hi] = std::minmax_element(first, last);
        const double l = *lo, span = *hi - *lo;
        for (auto it = first; it != last; ++it) *it = span > 0.0 ? (*it - l) / span : 0.5;
      }
      break;
    }
    case SyntheticKind::text_like: {
      const auto page = colour(0.75, 1.0);
      const auto ink = colour(0.0, 0.3);
      for (std::size_t ch = 0; ch < c; ++ch) fill_rect(img, ch, 0, 0, h, w, page[ch]);
      // Glyphs on a grid of cells, each a few horizontal and vertical strokes.
      const std::size_t cell = std::max<std::size_t>(6, std::min(h, w) / 4);
      for (std::size_t ci = 0; ci + cell <= h; ci += cell)
        for (std::size_t cj = 0; cj + cell <= w; cj += cell) {
          if (rng.bernoulli(0.2)) continue;
          const std::size_t strokes = 2 + rng.uniform_int(3);
          const std::size_t m = 1, inner = cell - 2 * m;
          for (std::size_t s = 0; s < strokes; ++s) {
            const std::size_t thick = 1 + rng.uniform_int(2);
            const std::size_t len = inner / 2 + rng.uniform_int(inner / 2 + 1);
            const std::size_t a = rng.uniform_int(inner - thick + 1);
            const std::size_t b = rng.uniform_int(inner - len + 1);
            const bool horizontal = rng.bernoulli(0.5);
            for (std::size_t ch = 0; ch < c; ++ch) {
              if (horizontal)
                fill_rect(img, ch, ci + m + a, cj + m + b, ci + m + a + thick, cj + m + b + len, ink[ch]);
              else
                fill_rect(img, ch, ci + m + b, cj + m + a, ci + m + b + len, cj + m + a + thick, ink[ch]);
            }
          }
        }
      break;
    }
  }
  return img;
}

}  // namespace

Dataset make_synthetic_dataset(SyntheticKind kind, std::size_t count, const Shape& shape,
                               std::uint64_t seed) {
  if (shape.size() != 3 || shape[0] < 1 || shape[0] > 3 || shape[1] < 8 || shape[2] < 8)
    throw ShapeError("synthetic images need shape (C in 1..3, H >= 8, W >= 8)");
  Dataset out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, n));
    if (shape[0] != 2) {
      out.push_back(synth_image(kind, shape, rng));
      continue;
    }
    const Tensor mag = synth_image(kind, {1, shape[1], shape[2]}, rng);
    const double ph0 = rng.uniform(0.0, 0.5), gi = rng.uniform(-1.0, 1.0), gj = rng.uniform(-1.0, 1.0);
    Tensor z(shape);
    for (std::size_t i = 0; i < shape[1]; ++i)
      for (std::size_t j = 0; j < shape[2]; ++j) {
        const double u = static_cast<double>(i) / shape[1], v = static_cast<double>(j) / shape[2];
        const double phase = std::clamp(ph0 + 0.5 * (gi * u + gj * v) + 0.5, 0.0, 1.0) * (M_PI / 2.0);
        z.at(0, i, j) = mag.at(0, i, j) * std::cos(phase);
        z.at(1, i, j) = mag.at(0, i, j) * std::sin(phase);
      }
    out.push_back(std::move(z));
  }
  return out;
}

// ------------------------------------------------------------------- tasks

void TaskSpec::validate() const {
  if (channels < 1 || channels > 3) throw DataError("task " + name + ": channels must be 1, 2 or 3");
  if (!dataset || dataset->empty()) throw DataError("task " + name + ": empty dataset");
  for (const auto& img : *dataset)
    if (img.rank() != 3 || img.extent(0) != channels)
      throw ShapeError("task " + name + ": dataset images must have " + std::to_string(channels) +
                       " channels");
  auto check = [&](const std::optional<Range>& r, const char* what) {
    if (r && (r->lo > r->hi || r->lo < 0.0))
      throw DataError("task " + name + ": invalid " + what + " range");
  };
  check(noise.sigma, "sigma");
  check(noise.gamma, "gamma");
  check(p_range, "p");
  if (p_range && (p_range->lo <= 0.0 || p_range->hi > 1.0))
    throw DataError("task " + name + ": p range must lie in (0, 1]");
}

std::vector<std::string> task_names() {
  return {"denoising",         "inpainting",         "gaussian_blur_easy", "gaussian_blur_medium",
          "gaussian_blur_hard", "motion_blur_easy",  "motion_blur_medium", "motion_blur_hard",
          "sr2",                "sr4",               "ct",                 "mri4",
          "mri8",               "cs4",               "demosaic"};
}

TaskSpec make_task(const std::string& name, std::size_t channels, std::shared_ptr<const Dataset> dataset,
                   std::size_t kernel_size) {
  TaskSpec t;
  t.name = name;
  t.channels = channels;
  t.dataset = std::move(dataset);
  auto fixed = [](double v) { return Range{v, v}; };
  auto tier_of = [&](const std::string& prefix) {
    const std::string s = name.substr(prefix.size());
    if (s == "easy") return 0;
    if (s == "medium") return 1;
    if (s == "hard") return 2;
    throw DataError("unknown task '" + name + "'");
  };
  if (name == "denoising") {
    t.op.kind = "identity";
    t.noise.sigma = Range{0.001, 0.2};
    t.noise.gamma = Range{0.01, 1.0};
  } else if (name == "inpainting") {
    t.op.kind = "inpainting";
    t.fresh_operator = true;
    t.p_range = Range{0.3, 0.9};
    t.noise.sigma = Range{0.01, 0.2};
    t.noise.gamma = Range{0.01, 1.0};
  } else if (name.rfind("gaussian_blur_", 0) == 0) {
    const auto tier = gaussian_tier(tier_of("gaussian_blur_"));
    t.op.kind = "gaussian_blur";
    t.op.kernel_sigma = tier.gaussian_sigma;
    t.op.kernel_size = kernel_size;
    t.noise.sigma = fixed(tier.noise_sigma);
  } else if (name.rfind("motion_blur_", 0) == 0) {
    const auto tier = motion_tier(tier_of("motion_blur_"));
    t.op.kind = "motion_blur";
    t.op.length_scale = tier.length_scale;
    t.op.amplitude = tier.amplitude;
    t.op.kernel_size = kernel_size;
    t.fresh_operator = true;
    t.noise.sigma = fixed(tier.noise_sigma);
  } else if (name == "sr2" || name == "sr4") {
    t.op.kind = "sr";
    t.op.factor = name == "sr2" ? 2 : 4;
    t.noise.sigma = Range{0.001, 0.01};
  } else if (name == "ct") {
    t.op.kind = "ct";
    t.op.angles = 10;
    t.noise.sigma = fixed(0.01);
  } else if (name == "mri4" || name == "mri8") {
    t.op.kind = "mri";
    t.op.acceleration = name == "mri4" ? 4.0 : 8.0;
    t.fresh_operator = true;
    t.noise.sigma = Range{0.001, 0.1};
  } else if (name == "cs4") {
    t.op.kind = "cs";
    t.op.factor = 4;
    t.noise.sigma = fixed(0.05);
  } else if (name == "demosaic") {
    t.op.kind = "demosaic";
    t.noise.sigma = fixed(0.01);
  } else {
    throw DataError("unknown task '" + name + "'");
  }
  return t;
}

namespace {

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * n - 2);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

ProblemInstance draw_instance(const TaskSpec& task, Tensor x, Rng& rng) {
  ProblemInstance inst;
  inst.spec = task.op;
  inst.spec.image_shape = x.shape();
  const std::uint64_t op_seed = rng.uniform_int(std::uint64_t{1} << 62);
  if (task.fresh_operator) inst.spec.seed = op_seed;
  const double p = task.p_range ? rng.uniform(task.p_range->lo, task.p_range->hi) : 0.0;
  if (task.p_range) inst.spec.p = p;
  inst.noise = sample_params(task.noise, rng);
  inst.seed = rng.uniform_int(std::uint64_t{1} << 62);
  inst.op = build_operator(inst.spec);
  inst.y = sample_noise(inst.op.apply(x), inst.noise, inst.seed);
  inst.x = std::move(x);
  return inst;
}

}  // namespace

std::vector<ProblemInstance> sample_batch(const TaskSpec& task, std::size_t batch, std::uint64_t seed,
                                          std::size_t patch) {
  task.validate();
  if (patch < 1) throw DataError("patch size must be positive");
  std::vector<ProblemInstance> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Rng rng(derive_seed(seed, b));
    const Tensor& img = (*task.dataset)[rng.uniform_int(task.dataset->size())];
    const std::size_t h = img.extent(1), w = img.extent(2);
    const std::size_t top = h > patch ? rng.uniform_int(h - patch + 1) : 0;
    const std::size_t left = w > patch ? rng.uniform_int(w - patch + 1) : 0;
    Tensor x({task.channels, patch, patch});
    for (std::size_t c = 0; c < task.channels; ++c)
      for (std::size_t i = 0; i < patch; ++i)
        for (std::size_t j = 0; j < patch; ++j)
          x.at(c, i, j) = img.at(c, reflect_index(static_cast<std::ptrdiff_t>(top + i), h),
                                 reflect_index(static_cast<std::ptrdiff_t>(left + j), w));

    out.push_back(draw_instance(task, std::move(x), rng));
  }
  return out;
}

ProblemInstance simulate_instance(const TaskSpec& task, const Tensor& x, std::uint64_t seed) {
  if (x.rank() != 3 || x.extent(0) != task.channels)
    throw ShapeError("simulate: image must be (" + std::to_string(task.channels) + ", H, W)");
  Rng rng(seed);
  return draw_instance(task, x, rng);
}

// -------------------------------------------------------------------- loss

double loss_weight(const Tensor& aty, double sigma) {
  return norm2(aty) / std::max(sigma, kSigmaFloor);
}

ad::Var task_loss(const RamModel& model, const ProblemInstance& inst, const PreparedOperator* prepared) {
  if (!inst.x) throw DataError("task_loss: instance has no ground truth");
  const double omega = loss_weight(inst.op.adjoint(inst.y), inst.noise.sigma);
  ad::Var out = prepared ? model.forward(ad::constant(inst.y), *prepared, inst.noise)
                         : model.forward(ad::constant(inst.y), inst.op, inst.noise);
  return ad::scale(ad::abs_sum(ad::sub(out, ad::constant(*inst.x))), omega);
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (batch_per_task < 1 || steps < 1 || patch < 1 || log_every < 1 || lr_decay_step < 1)
    throw DataError("train config: sizes and steps must be positive");
  if (!(lr >= 0.0)) throw DataError("train config: learning rate must be non-negative");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw DataError("train config: checkpoint_every needs checkpoint_path");
}

TrainReport train(RamModel& model, const std::vector<TaskSpec>& tasks, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& on_log) {
  config.validate();
  if (tasks.empty()) throw DataError("train: no tasks");
  for (const auto& t : tasks) {
    t.validate();
    if (std::find(model.config().heads.begin(), model.config().heads.end(), t.channels) ==
        model.config().heads.end())
      throw DataError("train: model has no head for task " + t.name);
  }
  std::ofstream csv;
  if (!config.log_path.empty()) {
    csv.open(config.log_path, std::ios::trunc);
    if (!csv) throw DataError("cannot write " + config.log_path);
    csv << "step,task,loss,psnr,baseline_psnr\n";
    csv.precision(10);
  }

  ad::Adam opt(config.lr);
  auto params = model.params().all();
  std::map<std::string, PreparedOperator> cache;
  struct Acc {
    double loss = 0.0, psnr = 0.0, base = 0.0;
    std::size_t steps = 0, samples = 0;
  };
  std::vector<Acc> acc(tasks.size());
  TrainReport report;
  report.final_rows.resize(tasks.size());

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (step == config.lr_decay_step) opt.set_lr(config.lr / 10.0);
    model.params().zero_grad();
    double total = 0.0;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
      const auto& task = tasks[ti];
      const auto batch = sample_batch(task, config.batch_per_task,
                                      derive_seed(config.seed, step * tasks.size() + ti), config.patch);
      double task_total = 0.0;
      for (const auto& inst : batch) {
        PreparedOperator local;
        const PreparedOperator* prep = nullptr;
        if (task.fresh_operator) {
          local = prepare_operator(model.config(), inst.op);
          prep = &local;
        } else {
          const std::string key = task.name + nlohmann::json(inst.spec).dump();
          auto it = cache.find(key);
          if (it == cache.end()) it = cache.emplace(key, prepare_operator(model.config(), inst.op)).first;
          prep = &it->second;
        }
        const double omega = loss_weight(inst.op.adjoint(inst.y), inst.noise.sigma);
        ad::Var out = model.forward(ad::constant(inst.y), *prep, inst.noise);
        ad::Var loss = ad::scale(ad::abs_sum(ad::sub(out, ad::constant(*inst.x))), omega);
        if (!std::isfinite(loss.item()))
          throw NumericalError("train: non-finite loss at step " + std::to_string(step) + " (" + task.name + ")");
        ad::backward(loss);
        task_total += loss.item();
        acc[ti].psnr += psnr(out.value(), *inst.x);
        acc[ti].base += psnr(inst.op.adjoint(inst.y), *inst.x);
        ++acc[ti].samples;
      }
      acc[ti].loss += task_total;
      ++acc[ti].steps;
      total += task_total;
    }
    for (auto* p : params)
      if (!p->grad.all_finite()) throw NumericalError("train: non-finite gradient for " + p->name());
    opt.step(params);
    report.step_losses.push_back(total);

    const bool last = step + 1 == config.steps;
    if ((step + 1) % config.log_every == 0 || last) {
      for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        TrainLogRow row{step + 1, tasks[ti].name, acc[ti].loss / static_cast<double>(acc[ti].steps),
                        acc[ti].psnr / static_cast<double>(acc[ti].samples),
                        acc[ti].base / static_cast<double>(acc[ti].samples)};
        report.log.push_back(row);
        report.final_rows[ti] = row;
        if (csv) csv << row.step << ',' << row.task << ',' << row.loss << ',' << row.psnr << ','
                     << row.baseline_psnr << '\n';
        if (on_log) on_log(row);
        acc[ti] = Acc{};
      }
    }
    if (config.checkpoint_every > 0 && ((step + 1) % config.checkpoint_every == 0 || last))
      save_checkpoint(model, config.checkpoint_path);
  }
  return report;
}

}  // namespace reconkit
