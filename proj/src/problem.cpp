#include "reconkit/problem.hpp"

#include "reconkit/errors.hpp"
#include "reconkit/generators.hpp"
#include "reconkit/io.hpp"
#include "reconkit/rng.hpp"

namespace reconkit {

using nlohmann::json;

OperatorHandle build_operator(const OperatorSpec& s) {
  const Shape& shape = s.image_shape;
  if (shape.size() != 3) throw ShapeError("operator spec: image_shape must be (C, H, W)");
  const std::string& k = s.kind;
  if (k == "identity") return make_identity(shape);
  if (k == "inpainting") {
    if (!(s.p > 0.0 && s.p <= 1.0)) throw DataError("operator spec: p must be in (0, 1]");
    return make_inpainting(make_bernoulli_mask(shape, s.p, s.seed));
  }
  if (k == "gaussian_blur") return make_blur(make_gaussian_kernel(s.kernel_sigma, s.kernel_size), shape);
  if (k == "motion_blur")
    return make_blur(make_motion_kernel(s.length_scale, s.amplitude, s.kernel_size, s.seed), shape);
  if (k == "mri") {
    if (shape[0] != 2) throw ShapeError("operator spec: mri needs a 2-channel image");
    return make_mri(make_cartesian_mask(shape[1], shape[2], s.acceleration, s.seed), shape);
  }
  if (k == "multicoil_mri") {
    if (shape[0] != 2) throw ShapeError("operator spec: multicoil_mri needs a 2-channel image");
    return make_multicoil_mri(make_cartesian_mask(shape[1], shape[2], s.acceleration, s.seed),
                              make_gaussian_smaps(s.coils, shape[1], shape[2]));
  }
  if (k == "ct") return make_ct_radon(s.angles, shape);
  if (k == "sr") {
    DownsamplingFilter f;
    if (s.filter == "bicubic")
      f = DownsamplingFilter::bicubic;
    else if (s.filter == "bilinear")
      f = DownsamplingFilter::bilinear;
    else
      throw DataError("operator spec: unknown filter '" + s.filter + "'");
    return make_downsampling(s.factor, f, shape);
  }
  if (k == "cs") {
    const std::size_t n = shape_size(shape);
    if (s.factor < 1 || s.factor > n) throw DataError("operator spec: bad cs factor");
    return make_compressed_sensing(make_sign_mask(shape, derive_seed(s.seed, 0)),
                                   make_keep_indices(n, n / s.factor, derive_seed(s.seed, 1)), shape);
  }
  if (k == "demosaic") return make_demosaic(shape);
  throw DataError("operator spec: unknown kind '" + k + "'");
}

void to_json(json& j, const OperatorSpec& s) {
  j = json{{"kind", s.kind},
           {"image_shape", s.image_shape},
           {"p", s.p},
           {"kernel_sigma", s.kernel_sigma},
           {"length_scale", s.length_scale},
           {"amplitude", s.amplitude},
           {"kernel_size", s.kernel_size},
           {"acceleration", s.acceleration},
           {"coils", s.coils},
           {"angles", s.angles},
           {"factor", s.factor},
           {"filter", s.filter},
           {"seed", s.seed}};
}

void from_json(const json& j, OperatorSpec& s) {
  // Missing fields keep their defaults.
  OperatorSpec d;
  s.kind = j.value("kind", d.kind);
  s.image_shape = j.value("image_shape", d.image_shape);
  s.p = j.value("p", d.p);
  s.kernel_sigma = j.value("kernel_sigma", d.kernel_sigma);
  s.length_scale = j.value("length_scale", d.length_scale);
  s.amplitude = j.value("amplitude", d.amplitude);
  s.kernel_size = j.value("kernel_size", d.kernel_size);
  s.acceleration = j.value("acceleration", d.acceleration);
  s.coils = j.value("coils", d.coils);
  s.angles = j.value("angles", d.angles);
  s.factor = j.value("factor", d.factor);
  s.filter = j.value("filter", d.filter);
  s.seed = j.value("seed", d.seed);
}

void to_json(json& j, const NoiseParams& p) { j = json{{"sigma", p.sigma}, {"gamma", p.gamma}}; }

void from_json(const json& j, NoiseParams& p) {
  p.sigma = j.value("sigma", 0.0);
  p.gamma = j.value("gamma", 0.0);
  if (p.sigma < 0.0 || p.gamma < 0.0) throw DataError("noise levels must be non-negative");
}

void save_instance(const ProblemInstance& inst, const std::filesystem::path& manifest) {
  auto data_path = manifest;
  data_path.replace_extension(".tnsr");
  std::vector<TnsrEntry> entries{{"y", inst.y, DType::f64}};
  if (inst.x) entries.push_back({"x", *inst.x, DType::f64});
  write_tnsr(data_path, entries);
  json j{{"operator", inst.spec},
         {"noise", inst.noise},
         {"data", data_path.filename().string()},
         {"y", "y"},
         {"seed", inst.seed}};
  if (inst.x) j["x"] = "x";
  write_file(manifest, j.dump(2) + "\n");
}

ProblemInstance load_instance(const std::filesystem::path& manifest) {
  json j;
  try {
    j = json::parse(read_file(manifest));
  } catch (const json::exception& e) {
    throw DataError("instance manifest " + manifest.string() + ": " + e.what());
  }
  ProblemInstance inst;
  try {
    inst.spec = j.at("operator").get<OperatorSpec>();
    inst.noise = j.value("noise", NoiseParams{});
    inst.seed = j.value("seed", std::uint64_t{0});
    const auto entries = read_tnsr(manifest.parent_path() / j.at("data").get<std::string>());
    inst.y = find_entry(entries, j.value("y", std::string("y"))).value;
    if (j.contains("x")) inst.x = find_entry(entries, j["x"].get<std::string>()).value;
  } catch (const json::exception& e) {
    throw DataError("instance manifest " + manifest.string() + ": " + e.what());
  }
  inst.op = build_operator(inst.spec);
  if (inst.y.shape() != inst.op.range_shape())
    throw ShapeError("instance: y has shape " + shape_to_string(inst.y.shape()) + ", operator range is " +
                     shape_to_string(inst.op.range_shape()));
  if (inst.x && inst.x->shape() != inst.op.domain_shape())
    throw ShapeError("instance: x does not match the operator domain");
  return inst;
}

}  // namespace reconkit
