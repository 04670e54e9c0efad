#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "reconkit/errors.hpp"
#include "reconkit/metrics.hpp"
#include "reconkit/train.hpp"
#include "support.hpp"

using namespace reconkit;

namespace {

std::shared_ptr<const Dataset> toy_data(std::size_t count = 20, std::size_t channels = 1,
                                        SyntheticKind kind = SyntheticKind::piecewise_constant) {
  return std::make_shared<Dataset>(make_synthetic_dataset(kind, count, {channels, 32, 32}, 3));
}

RamConfig toy_model() {
  RamConfig c;
  c.num_scales = 1;
  c.base_width = 4;
  c.blocks_per_scale = 1;
  c.krylov_order = 1;
  c.heads = {1, 3};
  c.norm_iters = 30;
  return c;
}

}  // namespace

TEST_CASE("synthetic datasets are bounded and deterministic") {
  for (auto kind : {SyntheticKind::piecewise_constant, SyntheticKind::smooth_bumps, SyntheticKind::text_like})
    for (std::size_t c : {1, 2, 3}) {
      const auto a = make_synthetic_dataset(kind, 5, {c, 24, 20}, 9);
      const auto b = make_synthetic_dataset(kind, 5, {c, 24, 20}, 9);
      REQUIRE(a.size() == 5);
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        CHECK(a[i].shape() == Shape{c, 24, 20});
        for (double v : a[i].data()) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
      }
    }
  CHECK(parse_synthetic_kind("text-like") == SyntheticKind::text_like);
  CHECK_THROWS_AS(parse_synthetic_kind("noise"), DataError);
}

TEST_CASE("piecewise-constant images have sparse gradients") {
  const auto data = make_synthetic_dataset(SyntheticKind::piecewise_constant, 50, {1, 32, 32}, 1);
  for (const auto& img : data) {
    std::size_t flat = 0;
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 32; ++j) {
        const double dx = j + 1 < 32 ? img.at(0, i, j + 1) - img.at(0, i, j) : 0.0;
        const double dy = i + 1 < 32 ? img.at(0, i + 1, j) - img.at(0, i, j) : 0.0;
        if (dx == 0.0 && dy == 0.0) ++flat;
      }
    CHECK(static_cast<double>(flat) / 1024.0 >= 0.8);
  }
}

TEST_CASE("task presets") {
  const auto data = toy_data();
  for (const auto& name : task_names()) {
    CAPTURE(name);
    const std::size_t c = name.rfind("mri", 0) == 0 ? 2 : (name == "demosaic" ? 3 : 1);
    const auto d = c == 1 ? data : toy_data(4, c);
    const TaskSpec t = make_task(name, c, d);
    CHECK_NOTHROW(t.validate());
    const auto batch = sample_batch(t, 2, 1, 16);
    for (const auto& inst : batch) {
      CHECK(inst.x->shape() == Shape{c, 16, 16});
      CHECK(inst.y.shape() == inst.op.range_shape());
      CHECK(inst.y.all_finite());
    }
  }
  CHECK_THROWS_AS(make_task("deblur", 1, data), DataError);
  const TaskSpec easy = make_task("gaussian_blur_easy", 1, data);
  CHECK(easy.op.kernel_sigma == 1.0);
  CHECK(easy.noise.sigma->lo == 0.01);
  CHECK_FALSE(easy.noise.gamma.has_value());
  const TaskSpec hard = make_task("motion_blur_hard", 1, data);
  CHECK(hard.op.length_scale == 1.2);
  CHECK(hard.op.amplitude == 1.0);
  CHECK(hard.noise.sigma->hi == 0.1);
  CHECK_THROWS_AS(make_task("inpainting", 3, data).validate(), ShapeError);
}

TEST_CASE("sample_batch is deterministic and respects ranges") {
  const auto data = toy_data();
  const TaskSpec t = make_task("inpainting", 1, data);
  const auto a = sample_batch(t, 3, 5, 32);
  const auto b = sample_batch(t, 3, 5, 32);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].y == b[i].y);
    CHECK(*a[i].x == *b[i].x);
    CHECK(a[i].spec.seed == b[i].spec.seed);
    CHECK(a[i].x->shape() == Shape{1, 32, 32});
  }
  CHECK(a[0].spec.seed != a[1].spec.seed);

  const auto many = sample_batch(t, 10000, 6, 4);
  double lo = 1.0, hi = 0.0;
  for (const auto& inst : many) {
    lo = std::min(lo, inst.spec.p);
    hi = std::max(hi, inst.spec.p);
    CHECK(inst.noise.sigma >= 0.01);
    CHECK(inst.noise.sigma <= 0.2);
  }
  CHECK(lo >= 0.3);
  CHECK(hi <= 0.9);
  CHECK(hi - lo > 0.55);

  // Patches larger than the images are reflect-padded.
  const auto big = sample_batch(t, 1, 7, 48);
  CHECK(big[0].x->shape() == Shape{1, 48, 48});
}

TEST_CASE("loss weighting") {
  Tensor aty({100}, 1.0);  // norm 10
  CHECK(loss_weight(aty, 0.1) == doctest::Approx(100.0));
  CHECK(loss_weight(aty, 0.2) == doctest::Approx(50.0));
  CHECK(loss_weight(aty, 0.0) == doctest::Approx(10.0 / kSigmaFloor));
  CHECK(loss_weight(Tensor({4}), 0.1) == 0.0);

  // Perfect reconstruction gives zero loss.
  RamConfig c = toy_model();
  c.zero_init_output = true;
  RamModel model(c);
  ProblemInstance inst;
  inst.spec.image_shape = {1, 8, 8};
  inst.op = build_operator(inst.spec);
  inst.x = testutil::random_tensor({1, 8, 8}, 1);
  inst.y = *inst.x;
  CHECK(task_loss(model, inst).item() == 0.0);
  inst.x.reset();
  CHECK_THROWS_AS(task_loss(model, inst), DataError);
}

TEST_CASE("training bookkeeping") {
  const auto data = toy_data();
  std::vector<TaskSpec> tasks{make_task("denoising", 1, data), make_task("inpainting", 1, data)};
  TrainConfig cfg;
  cfg.batch_per_task = 2;
  cfg.steps = 3;
  cfg.lr_decay_step = 2;
  cfg.patch = 16;
  cfg.log_every = 1;
  cfg.seed = 4;

  SUBCASE("lr = 0 leaves parameters unchanged and losses are additive") {
    RamModel model(toy_model(), 1);
    std::vector<Tensor> before;
    for (auto* p : model.params().all()) before.push_back(p->value);
    cfg.lr = 0.0;
    const auto report = train(model, tasks, cfg);
    std::size_t k = 0;
    for (auto* p : model.params().all()) CHECK(p->value == before[k++]);
    REQUIRE(report.step_losses.size() == 3);
    for (std::size_t step = 0; step < 3; ++step) {
      double expected = 0.0;
      for (std::size_t ti = 0; ti < tasks.size(); ++ti)
        for (const auto& inst : sample_batch(tasks[ti], cfg.batch_per_task,
                                             derive_seed(cfg.seed, step * tasks.size() + ti), cfg.patch))
          expected += task_loss(model, inst).item();
      CHECK(report.step_losses[step] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(report.step_losses[step] > 0.0);
    }
    CHECK(report.log.size() == 6);
    CHECK(report.final_rows[1].task == "inpainting");
  }

  SUBCASE("runs are reproducible and write logs and checkpoints") {
    const auto dir = std::filesystem::temp_directory_path();
    cfg.log_path = (dir / "reconkit_train_log.csv").string();
    cfg.checkpoint_path = (dir / "reconkit_train_ckpt.tnsr").string();
    cfg.checkpoint_every = 2;
    RamModel a(toy_model(), 2), b(toy_model(), 2);
    const auto ra = train(a, tasks, cfg);
    const auto rb = train(b, tasks, cfg);
    for (std::size_t i = 0; i < ra.step_losses.size(); ++i)
      CHECK(std::abs(ra.step_losses[i] - rb.step_losses[i]) <= 1e-12 * ra.step_losses[i]);
    std::ifstream log(cfg.log_path);
    std::string header;
    std::getline(log, header);
    CHECK(header == "step,task,loss,psnr,baseline_psnr");
    std::size_t rows = 0;
    for (std::string line; std::getline(log, line);) ++rows;
    CHECK(rows == 6);
    const RamModel back = load_checkpoint(cfg.checkpoint_path);
    for (const auto* p : b.params().all()) CHECK(back.params().get(p->name()).value == p->value);
    std::filesystem::remove(cfg.log_path);
    std::filesystem::remove(cfg.checkpoint_path);
  }
}

TEST_CASE("both tasks push gradients into the shared trunk") {
  const auto gray = toy_data();
  const auto colour = toy_data(10, 3);
  RamModel model(toy_model(), 3);
  const auto g1 = sample_batch(make_task("denoising", 1, gray), 1, 1, 16);
  const auto g3 = sample_batch(make_task("inpainting", 3, colour), 1, 2, 16);
  auto trunk_grad = [&](const ProblemInstance& inst) {
    model.params().zero_grad();
    ad::backward(task_loss(model, inst));
    std::vector<Tensor> out;
    for (auto* p : model.trunk_parameters()) out.push_back(p->grad);
    return out;
  };
  const auto a = trunk_grad(g1[0]);
  const auto b = trunk_grad(g3[0]);
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += norm2(a[i]);
    nb += norm2(b[i]);
  }
  CHECK(na > 0.0);
  CHECK(nb > 0.0);
}

TEST_CASE("single-task denoising beats the noisy input") {
  const auto data = toy_data(200, 1, SyntheticKind::smooth_bumps);
  TaskSpec t = make_task("denoising", 1, data);
  t.noise.sigma = Range{0.1, 0.1};
  t.noise.gamma.reset();
  RamConfig c = toy_model();
  c.base_width = 8;
  c.heads = {1};
  RamModel model(c, 5);
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.lr = 2e-3;
  cfg.lr_decay_step = 350;
  cfg.log_every = 50;
  const auto report = train(model, {t}, cfg);
  const auto& row = report.final_rows[0];
  MESSAGE("denoising psnr " << row.psnr << " vs input " << row.baseline_psnr);
  CHECK(row.psnr >= row.baseline_psnr + 3.0);
}

TEST_CASE("problem instances round trip through manifests") {
  const auto data = toy_data(4, 2);
  const auto inst = sample_batch(make_task("mri8", 2, data), 1, 3, 16)[0];
  const auto path = std::filesystem::temp_directory_path() / "reconkit_inst.json";
  save_instance(inst, path);
  const auto back = load_instance(path);
  CHECK(back.y == inst.y);
  CHECK(*back.x == *inst.x);
  CHECK(back.noise.sigma == inst.noise.sigma);
  CHECK(back.op.apply(*inst.x) == inst.op.apply(*inst.x));
  std::filesystem::remove(path);
  auto tn = path;
  std::filesystem::remove(tn.replace_extension(".tnsr"));

  OperatorSpec bad;
  bad.kind = "warp";
  CHECK_THROWS_AS(build_operator(bad), DataError);
  bad.kind = "mri";
  CHECK_THROWS_AS(build_operator(bad), ShapeError);
}
