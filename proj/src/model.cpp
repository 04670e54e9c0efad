#include "reconkit/model.hpp"

#include <algorithm>
#include <cmath>

#include "reconkit/errors.hpp"
#include "reconkit/io.hpp"
#include "reconkit/rng.hpp"
#include "reconkit/solvers.hpp"

namespace reconkit {

using namespace ad;

void RamConfig::validate() const {
  if (num_scales < 1) throw DataError("RamConfig: num_scales must be >= 1");
  if (base_width < 4) throw DataError("RamConfig: base_width must be >= 4");
  if (heads.empty()) throw DataError("RamConfig: at least one head is required");
  for (auto c : heads)
    if (c < 1 || c > 3) throw DataError("RamConfig: heads must be 1, 2 or 3 channels");
  if (cg_iters < 0 || cg_tol < 0.0) throw DataError("RamConfig: bad CG budget");
}

namespace {

std::string head_prefix(std::size_t c) { return "heads.c" + std::to_string(c) + "."; }

std::size_t width_at(const RamConfig& cfg, std::size_t s) { return cfg.base_width << s; }

}  // namespace

// ------------------------------------------------------------ preparation

PreparedOperator prepare_operator(const RamConfig& config, const OperatorHandle& op) {
  const Shape& d = op.domain_shape();
  if (d.size() != 3) throw ShapeError("model operators must have a (C, H, W) domain");
  if (d[0] < 1 || d[0] > 3)
    throw ShapeError("model supports 1, 2 or 3 channels, got " + std::to_string(d[0]));
  PreparedOperator p;
  p.base = op;
  p.image_shape = d;
  const std::size_t m = std::size_t{1} << config.num_scales;
  const std::size_t extra_h = (m - d[1] % m) % m, extra_w = (m - d[2] % m) % m;
  p.top = extra_h / 2;
  p.bottom = extra_h - p.top;
  p.left = extra_w / 2;
  p.right = extra_w - p.left;
  p.padded_shape = {d[0], d[1] + extra_h, d[2] + extra_w};
  p.padded = extra_h + extra_w == 0
                 ? op
                 : make_composed(op, make_crop(p.padded_shape, p.top, p.left, d[1], d[2]));
  CoarseOptions opts;
  opts.fast_paths = config.fast_coarse;
  opts.norm_iters = config.norm_iters;
  opts.norm_tol = config.norm_tol;
  for (std::size_t s = 0; s < config.num_scales; ++s)
    p.scales.push_back(make_coarse(p.padded, s, opts));
  return p;
}

// ------------------------------------------------------------------ model

RamModel::RamModel(RamConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k,
                  double gain) {
    Tensor w({out, in, k, k});
    const double sd = gain / std::sqrt(static_cast<double>(in * k * k));
    for (double& v : w.storage()) v = sd * rng.normal();
    params_.add(name, std::move(w));
  };
  const std::size_t S = config_.num_scales, K = config_.krylov_order;
  params_.add("prox.eta", Tensor({1}, 1.0));
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t w = width_at(config_, s);
    for (std::size_t b = 0; b < config_.blocks_per_scale; ++b) {
      const std::string pre = "trunk.enc" + std::to_string(s) + ".block" + std::to_string(b);
      conv(pre + ".conv1.weight", w, w, 3, std::sqrt(2.0));
      conv(pre + ".conv2.weight", w, w, 3, 0.1);
    }
    if (s + 1 < S) {
      const std::size_t w2 = width_at(config_, s + 1);
      conv("trunk.down" + std::to_string(s) + ".weight", w2, w, 2, 1.0);
      // Transposed conv weights are (in, out, k, k).
      conv("trunk.up" + std::to_string(s) + ".weight", w2, w, 2, 1.0);
      for (std::size_t b = 0; b < config_.blocks_per_scale; ++b) {
        const std::string pre = "trunk.dec" + std::to_string(s) + ".block" + std::to_string(b);
        conv(pre + ".conv1.weight", w, w, 3, std::sqrt(2.0));
        conv(pre + ".conv2.weight", w, w, 3, 0.1);
      }
    }
  }
  for (std::size_t c : config_.heads) {
    const std::string pre = head_prefix(c);
    conv(pre + "in.weight", config_.base_width, c + 2, 3, 1.0);
    conv(pre + "out.weight", c, config_.base_width, 3, 0.1);
    if (config_.zero_init_output) {
      auto& out = params_.get(pre + "out.weight").value;
      std::fill(out.storage().begin(), out.storage().end(), 0.0);
    }
    for (std::size_t s = 0; s < S; ++s) {
      const std::string k = pre + "ksm" + std::to_string(s) + ".";
      const std::size_t w = width_at(config_, s);
      conv(k + "decode.weight", c, w, 3, 1.0);
      conv(k + "combine.weight", c, 2 * (K + 1) * c, config_.combine_1x1 ? 1 : 3, 1.0);
      conv(k + "encode.weight", w, c, 3, 0.1);
    }
  }
}

RamModel::RamModel(RamModel&& other) noexcept
    : config_(std::move(other.config_)),
      params_(std::move(other.params_)),
      evaluations_(other.evaluations_.load()) {}

Var RamModel::param(const std::string& name) const { return ad::param(params_.get(name)); }

Tensor RamModel::noise_maps(const NoiseParams& noise, std::size_t height, std::size_t width) {
  Tensor m({1, 2, height, width});
  const std::size_t area = height * width;
  std::fill(m.storage().begin(), m.storage().begin() + static_cast<long>(area), noise.sigma);
  std::fill(m.storage().begin() + static_cast<long>(area), m.storage().end(), noise.gamma);
  return m;
}

Var RamModel::ksm_stack(const Var& x_s, const Var& y, const CoarseOperator& op_s) const {
  const Shape& s = x_s.shape();
  const Shape s4{1, s[0], s[1], s[2]};
  std::vector<Var> groups;
  Var g = x_s;
  groups.push_back(reshape(g, s4));
  for (std::size_t k = 0; k < config_.krylov_order; ++k) {
    g = normal_op(op_s.op, g);
    groups.push_back(reshape(g, s4));
  }
  // Captured by value: the graph may outlive the prepared operator.
  g = linear_map(
      y, [op = op_s](const Tensor& t) { return op.back_project(t); },
      [op = op_s](const Tensor& t) { return op.restrict_transpose(op.op.apply(t)); });
  groups.push_back(reshape(g, s4));
  for (std::size_t k = 0; k < config_.krylov_order; ++k) {
    g = normal_op(op_s.op, g);
    groups.push_back(reshape(g, s4));
  }
  return concat_channels(groups);
}

Var RamModel::ksm_block(const Var& h, const Var& y, const CoarseOperator& op_s,
                        std::size_t channels, std::size_t scale) const {
  const std::string pre = head_prefix(channels) + "ksm" + std::to_string(scale) + ".";
  Var z = conv2d(h, param(pre + "decode.weight"), 1, Padding::zeros(1));
  const Shape& zs = z.shape();
  Var stack = ksm_stack(reshape(z, {zs[1], zs[2], zs[3]}), y, op_s);
  Var comb = conv2d(stack, param(pre + "combine.weight"), 1,
                    config_.combine_1x1 ? Padding::valid() : Padding::zeros(1));
  return add(h, conv2d(comb, param(pre + "encode.weight"), 1, Padding::zeros(1)));
}

Var RamModel::forward(const Var& y, const PreparedOperator& op, const NoiseParams& noise) const {
  ++evaluations_;
  const std::size_t C = op.image_shape[0];
  if (std::find(config_.heads.begin(), config_.heads.end(), C) == config_.heads.end())
    throw DataError("model has no head for " + std::to_string(C) + " channels");
  if (y.shape() != op.base.range_shape())
    throw ShapeError("measurement shape " + shape_to_string(y.shape()) +
                     " does not match operator range " + shape_to_string(op.base.range_shape()));
  if (noise.sigma < 0.0 || noise.gamma < 0.0) throw DataError("noise levels must be non-negative");
  y.value().require_finite("model input");

  // Proximal input; lambda = sigma |eta| / ||y||_1.
  Var x0;
  if (noise.sigma == 0.0 || norm1(y.value()) == 0.0) {
    x0 = adjoint_op(op.base, y);
  } else {
    Var lam = scalar_div(scalar_mul(scalar(noise.sigma), abs_sum(param("prox.eta"))), abs_sum(y));
    x0 = ad::prox_estimate(op.base, y, lam, config_.cg_iters, config_.cg_tol);
  }

  const Shape& d = op.image_shape;
  const Shape& ps = op.padded_shape;
  Var xp = reshape(x0, {1, d[0], d[1], d[2]});
  if (ps != d) xp = pad2d(xp, op.top, op.bottom, op.left, op.right, PadKind::reflect);

  const std::string hp = head_prefix(C);
  std::vector<Var> inputs{xp, constant(noise_maps(noise, ps[1], ps[2]))};
  Var h = conv2d(concat_channels(inputs), param(hp + "in.weight"), 1, Padding::zeros(1));

  auto blocks = [&](Var v, const std::string& where) {
    for (std::size_t b = 0; b < config_.blocks_per_scale; ++b) {
      const std::string pre = where + ".block" + std::to_string(b);
      Var r = relu(conv2d(v, param(pre + ".conv1.weight"), 1, Padding::zeros(1)));
      v = add(v, conv2d(r, param(pre + ".conv2.weight"), 1, Padding::zeros(1)));
    }
    return v;
  };

  const std::size_t S = config_.num_scales;
  std::vector<Var> skips;
  for (std::size_t s = 0; s < S; ++s) {
    h = ksm_block(h, y, op.scales[s], C, s);
    h = blocks(h, "trunk.enc" + std::to_string(s));
    if (s + 1 < S) {
      skips.push_back(h);
      h = conv2d(h, param("trunk.down" + std::to_string(s) + ".weight"), 2, Padding::valid());
    }
  }
  for (std::size_t s = S - 1; s-- > 0;) {
    h = add(conv_transpose2d(h, param("trunk.up" + std::to_string(s) + ".weight"), 2), skips[s]);
    h = blocks(h, "trunk.dec" + std::to_string(s));
  }
  Var out = add(xp, conv2d(h, param(hp + "out.weight"), 1, Padding::zeros(1)));
  if (ps != d) out = crop2d(out, op.top, op.left, d[1], d[2]);
  return reshape(out, d);
}

Var RamModel::forward(const Var& y, const OperatorHandle& op, const NoiseParams& noise) const {
  return forward(y, prepare_operator(config_, op), noise);
}

Tensor RamModel::reconstruct(const Tensor& y, const PreparedOperator& op,
                             const NoiseParams& noise) const {
  NoGradGuard guard;
  Tensor out = forward(constant(y), op, noise).value();
  out.require_finite("reconstruction");
  return out;
}

Tensor RamModel::reconstruct(const Tensor& y, const OperatorHandle& op,
                             const NoiseParams& noise) const {
  return reconstruct(y, prepare_operator(config_, op), noise);
}

HeadView RamModel::select_head(std::size_t channels) {
  if (std::find(config_.heads.begin(), config_.heads.end(), channels) == config_.heads.end())
    throw DataError("model has no head for " + std::to_string(channels) + " channels");
  HeadView v;
  v.channels = channels;
  const std::string pre = head_prefix(channels);
  for (Parameter* p : params_.all()) {
    if (p->name().rfind(pre, 0) == 0)
      v.head.push_back(p);
    else if (p->name().rfind("heads.", 0) != 0)
      v.trunk.push_back(p);
  }
  return v;
}

std::vector<Parameter*> RamModel::trunk_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : params_.all())
    if (p->name().rfind("heads.", 0) != 0) out.push_back(p);
  return out;
}

Tensor RamModel::ksm_combine(const Tensor& x_s, const CoarseOperator& op_s, const Tensor& y,
                             std::size_t channels) const {
  NoGradGuard guard;
  const std::string pre =
      head_prefix(channels) + "ksm" + std::to_string(op_s.scale) + ".combine.weight";
  Var stack = ksm_stack(constant(x_s), constant(y), op_s);
  Var comb = conv2d(stack, param(pre), 1,
                    config_.combine_1x1 ? Padding::valid() : Padding::zeros(1));
  return comb.value().reshaped(x_s.shape());
}

std::vector<Tensor> build_ksm_stack(const Tensor& x_s, const CoarseOperator& op_s, const Tensor& y,
                                    std::size_t order) {
  std::vector<Tensor> groups;
  Tensor g = x_s;
  groups.push_back(g);
  for (std::size_t k = 0; k < order; ++k) {
    g = op_s.op.normal(g);
    groups.push_back(g);
  }
  g = op_s.back_project(y);
  groups.push_back(g);
  for (std::size_t k = 0; k < order; ++k) {
    g = op_s.op.normal(g);
    groups.push_back(g);
  }
  return groups;
}

// ------------------------------------------------------------ checkpoints

namespace {

Tensor encode_config(const RamConfig& c) {
  double heads = 0.0;
  for (auto h : c.heads) heads += static_cast<double>(1u << h);
  std::vector<double> v{static_cast<double>(c.num_scales),
                        static_cast<double>(c.base_width),
                        static_cast<double>(c.blocks_per_scale),
                        static_cast<double>(c.krylov_order),
                        heads,
                        static_cast<double>(c.cg_iters),
                        c.cg_tol,
                        c.combine_1x1 ? 1.0 : 0.0,
                        c.zero_init_output ? 1.0 : 0.0,
                        c.fast_coarse ? 1.0 : 0.0,
                        static_cast<double>(c.norm_iters),
                        c.norm_tol};
  return Tensor({v.size()}, v);
}

RamConfig decode_config(const Tensor& t) {
  if (t.size() != 12) throw DataError("checkpoint: malformed meta.config");
  RamConfig c;
  c.num_scales = static_cast<std::size_t>(t[0]);
  c.base_width = static_cast<std::size_t>(t[1]);
  c.blocks_per_scale = static_cast<std::size_t>(t[2]);
  c.krylov_order = static_cast<std::size_t>(t[3]);
  c.heads.clear();
  const auto mask = static_cast<unsigned>(t[4]);
  for (std::size_t h = 1; h <= 3; ++h)
    if (mask & (1u << h)) c.heads.push_back(h);
  c.cg_iters = static_cast<int>(t[5]);
  c.cg_tol = t[6];
  c.combine_1x1 = t[7] != 0.0;
  c.zero_init_output = t[8] != 0.0;
  c.fast_coarse = t[9] != 0.0;
  c.norm_iters = static_cast<int>(t[10]);
  c.norm_tol = t[11];
  return c;
}

}  // namespace

void save_checkpoint(const RamModel& model, const std::filesystem::path& path, bool f32) {
  std::vector<TnsrEntry> entries;
  entries.push_back({"meta.config", encode_config(model.config()), DType::f64});
  for (const Parameter* p : model.params().all())
    entries.push_back({p->name(), p->value, f32 ? DType::f32 : DType::f64});
  write_tnsr(path, entries);
}

RamModel load_checkpoint(const std::filesystem::path& path) {
  const auto entries = read_tnsr(path);
  RamModel model(decode_config(find_entry(entries, "meta.config").value));
  std::size_t loaded = 0;
  for (const auto& e : entries) {
    if (e.name == "meta.config") continue;
    if (!model.params().contains(e.name))
      throw DataError("checkpoint: unexpected parameter '" + e.name + "'");
    auto& p = model.params().get(e.name);
    if (p.value.shape() != e.value.shape())
      throw ShapeError("checkpoint: shape mismatch for '" + e.name + "'");
    p.value = e.value;
    ++loaded;
  }
  if (loaded != model.params().size()) throw DataError("checkpoint: missing parameters");
  return model;
}

}  // namespace reconkit
