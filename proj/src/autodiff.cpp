#include "reconkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "reconkit/errors.hpp"

namespace reconkit::ad {

// ---------------------------------------------------------------- parameters

Parameter::Parameter(std::string name, Tensor v)
    : value(std::move(v)), name_(std::move(name)) {
  grad = Tensor::zeros_like(value);
  adam_m = Tensor::zeros_like(value);
  adam_v = Tensor::zeros_like(value);
}

void Parameter::zero_grad() { std::fill(grad.storage().begin(), grad.storage().end(), 0.0); }

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.emplace(name, nullptr);
  if (!inserted) throw DataError("duplicate parameter name: " + name);
  it->second = std::make_unique<Parameter>(name, std::move(value));
  return *it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter: " + name);
  return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter: " + name);
  return *it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p->value.size();
  return n;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p->zero_grad();
}

// --------------------------------------------------------------------- nodes

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g.reshaped(value.shape());
  } else {
    if (g.size() != grad.size()) throw ShapeError("gradient size mismatch in " + std::string(op));
    double* dst = grad.raw();
    const double* src = g.raw();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
  }
}

Tensor Node::grad_or_zero() const { return grad.empty() ? Tensor::zeros_like(value) : grad; }

namespace {

thread_local bool g_grad_enabled = true;

Var make_node(Tensor value, std::initializer_list<Var> inputs, const char* op,
              std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

Var make_node(Tensor value, const std::vector<Var>& inputs, const char* op,
              std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void push(Node& self, std::size_t i, const Tensor& g) {
  auto& in = self.inputs[i];
  if (in->requires_grad) in->accumulate(g);
}

void require_rank4(const Tensor& t, const char* where) {
  if (t.rank() != 4)
    throw ShapeError(std::string(where) + ": expected (N, C, H, W), got " +
                     shape_to_string(t.shape()));
}

void require_scalar(const Tensor& t, const char* where) {
  if (t.size() != 1) throw ShapeError(std::string(where) + ": expected a scalar");
}

std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "leaf";
  return Var(std::move(node));
}

Var param(Parameter& p) {
  auto node = std::make_shared<Node>();
  node->value = p.value;
  node->op = "param";
  if (g_grad_enabled) {
    node->requires_grad = true;
    node->param = &p;
  }
  return Var(std::move(node));
}

Var scalar(double v) { return constant(Tensor({1}, v)); }

// ------------------------------------------------------------------- kernels

namespace kernels {

Tensor pad2d(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left,
             std::size_t right, PadKind kind) {
  require_rank4(x, "pad2d");
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t ho = h + top + bottom, wo = w + left + right;
  Tensor out({s[0], s[1], ho, wo});
  const double* src = x.raw();
  double* dst = out.raw();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      const long si = static_cast<long>(i) - static_cast<long>(top);
      double* drow = dst + (p * ho + i) * wo;
      if (kind == PadKind::zero) {
        if (si < 0 || si >= static_cast<long>(h)) continue;
        std::memcpy(drow + left, src + (p * h + si) * w, w * sizeof(double));
      } else {
        const std::size_t ri = reflect_index(si, static_cast<long>(h));
        const double* srow = src + (p * h + ri) * w;
        for (std::size_t j = 0; j < wo; ++j)
          drow[j] = srow[reflect_index(static_cast<long>(j) - static_cast<long>(left),
                                       static_cast<long>(w))];
      }
    }
  }
  return out;
}

Tensor unpad2d(const Tensor& g, std::size_t top, std::size_t bottom, std::size_t left,
               std::size_t right, PadKind kind) {
  require_rank4(g, "unpad2d");
  const auto& s = g.shape();
  const std::size_t planes = s[0] * s[1], ho = s[2], wo = s[3];
  const std::size_t h = ho - top - bottom, w = wo - left - right;
  Tensor out({s[0], s[1], h, w});
  const double* src = g.raw();
  double* dst = out.raw();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      const long si = static_cast<long>(i) - static_cast<long>(top);
      const double* grow = src + (p * ho + i) * wo;
      if (kind == PadKind::zero) {
        if (si < 0 || si >= static_cast<long>(h)) continue;
        double* drow = dst + (p * h + si) * w;
        for (std::size_t j = 0; j < w; ++j) drow[j] += grow[left + j];
      } else {
        double* drow = dst + (p * h + reflect_index(si, static_cast<long>(h))) * w;
        for (std::size_t j = 0; j < wo; ++j)
          drow[reflect_index(static_cast<long>(j) - static_cast<long>(left),
                             static_cast<long>(w))] += grow[j];
      }
    }
  }
  return out;
}

namespace {

struct ConvGeometry {
  std::size_t n, in_ch, h, w, out_ch, kh, kw, stride, ho, wo;
};

ConvGeometry geometry(const Shape& xs, const Shape& ws, std::size_t stride) {
  if (ws.size() != 4) throw ShapeError("conv weight must be (O, I, kh, kw)");
  if (stride == 0) throw ShapeError("conv stride must be >= 1");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, 0, 0};
  if (ws[1] != g.in_ch)
    throw ShapeError("conv channel mismatch: input has " + std::to_string(g.in_ch) +
                     ", weight expects " + std::to_string(ws[1]));
  if (g.kh > g.h || g.kw > g.w)
    throw ShapeError("conv kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " larger than padded input " + std::to_string(g.h) + "x" +
                     std::to_string(g.w));
  g.ho = (g.h - g.kh) / stride + 1;
  g.wo = (g.w - g.kw) / stride + 1;
  return g;
}

// plane[oy, ox] = x[iy*stride + ky, ox*stride + kx]
void gather(const double* x, const ConvGeometry& g, std::size_t ky, std::size_t kx,
            double* plane) {
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    const double* row = x + (oy * g.stride + ky) * g.w + kx;
    double* dst = plane + oy * g.wo;
    if (g.stride == 1) {
      std::memcpy(dst, row, g.wo * sizeof(double));
    } else {
      for (std::size_t ox = 0; ox < g.wo; ++ox) dst[ox] = row[ox * g.stride];
    }
  }
}

void scatter_add(const double* plane, const ConvGeometry& g, std::size_t ky, std::size_t kx,
                 double* x) {
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    double* row = x + (oy * g.stride + ky) * g.w + kx;
    const double* src = plane + oy * g.wo;
    if (g.stride == 1) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) row[ox] += src[ox];
    } else {
      for (std::size_t ox = 0; ox < g.wo; ++ox) row[ox * g.stride] += src[ox];
    }
  }
}

}  // namespace

Tensor correlate_valid(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_rank4(x, "conv2d");
  const auto g = geometry(x.shape(), w.shape(), stride);
  const std::size_t area = g.ho * g.wo, in_area = g.h * g.w;
  Tensor out({g.n, g.out_ch, g.ho, g.wo});
  std::vector<double> plane(area);
  const double* wp = w.raw();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.in_ch; ++i) {
      const double* xin = x.raw() + (n * g.in_ch + i) * in_area;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          gather(xin, g, ky, kx, plane.data());
          for (std::size_t o = 0; o < g.out_ch; ++o) {
            const double wv = wp[((o * g.in_ch + i) * g.kh + ky) * g.kw + kx];
            double* dst = out.raw() + (n * g.out_ch + o) * area;
            for (std::size_t p = 0; p < area; ++p) dst[p] += wv * plane[p];
          }
        }
      }
    }
  }
  return out;
}

void correlate_backward_input(const Tensor& gout, const Tensor& w, std::size_t stride,
                              Tensor& dx) {
  const auto g = geometry(dx.shape(), w.shape(), stride);
  const std::size_t area = g.ho * g.wo, in_area = g.h * g.w;
  if (gout.shape() != Shape{g.n, g.out_ch, g.ho, g.wo})
    throw ShapeError("conv backward: gradient shape mismatch");
  std::vector<double> plane(area);
  const double* wp = w.raw();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.in_ch; ++i) {
      double* xin = dx.raw() + (n * g.in_ch + i) * in_area;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          std::fill(plane.begin(), plane.end(), 0.0);
          for (std::size_t o = 0; o < g.out_ch; ++o) {
            const double wv = wp[((o * g.in_ch + i) * g.kh + ky) * g.kw + kx];
            const double* src = gout.raw() + (n * g.out_ch + o) * area;
            for (std::size_t p = 0; p < area; ++p) plane[p] += wv * src[p];
          }
          scatter_add(plane.data(), g, ky, kx, xin);
        }
      }
    }
  }
}

void correlate_backward_weight(const Tensor& gout, const Tensor& x, std::size_t stride,
                               Tensor& dw) {
  const auto g = geometry(x.shape(), dw.shape(), stride);
  const std::size_t area = g.ho * g.wo, in_area = g.h * g.w;
  std::vector<double> plane(area);
  double* wp = dw.raw();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t i = 0; i < g.in_ch; ++i) {
      const double* xin = x.raw() + (n * g.in_ch + i) * in_area;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          gather(xin, g, ky, kx, plane.data());
          for (std::size_t o = 0; o < g.out_ch; ++o) {
            const double* src = gout.raw() + (n * g.out_ch + o) * area;
            double acc = 0.0;
            for (std::size_t p = 0; p < area; ++p) acc += src[p] * plane[p];
            wp[((o * g.in_ch + i) * g.kh + ky) * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace kernels

// ----------------------------------------------------------------------- ops

Var conv2d(const Var& x, const Var& weight, std::size_t stride, Padding padding) {
  require_rank4(x.value(), "conv2d");
  const std::size_t p = padding.amount;
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const auto& ws = weight.shape();
  if (ws.size() == 4 && stride > 1 &&
      ((x.shape()[2] + 2 * p - ws[2]) % stride || (x.shape()[3] + 2 * p - ws[3]) % stride))
    throw ShapeError("conv2d: strided input " + shape_to_string(x.shape()) +
                     " does not tile evenly; pad first");
  Tensor xp = p ? kernels::pad2d(x.value(), p, p, p, p, padding.kind) : x.value();
  Tensor out = kernels::correlate_valid(xp, weight.value(), stride);
  auto saved = std::make_shared<Tensor>(std::move(xp));
  return make_node(std::move(out), {x, weight}, "conv2d", [saved, stride, padding](Node& self) {
    const Tensor& w = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      Tensor dxp = Tensor::zeros_like(*saved);
      kernels::correlate_backward_input(self.grad, w, stride, dxp);
      const std::size_t p = padding.amount;
      push(self, 0, p ? kernels::unpad2d(dxp, p, p, p, p, padding.kind) : dxp);
    }
    if (self.inputs[1]->requires_grad) {
      Tensor dw = Tensor::zeros_like(w);
      kernels::correlate_backward_weight(self.grad, *saved, stride, dw);
      push(self, 1, dw);
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, std::size_t stride) {
  require_rank4(x.value(), "conv_transpose2d");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[0] != xs[1])
    throw ShapeError("conv_transpose2d: weight must be (I, O, kh, kw) matching input channels");
  Tensor out({xs[0], ws[1], (xs[2] - 1) * stride + ws[2], (xs[3] - 1) * stride + ws[3]});
  kernels::correlate_backward_input(x.value(), weight.value(), stride, out);
  return make_node(std::move(out), {x, weight}, "conv_transpose2d", [stride](Node& self) {
    const Tensor& w = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad)
      push(self, 0, kernels::correlate_valid(self.grad, w, stride));
    if (self.inputs[1]->requires_grad) {
      Tensor dw = Tensor::zeros_like(w);
      kernels::correlate_backward_weight(self.inputs[0]->value, self.grad, stride, dw);
      push(self, 1, dw);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {x}, "relu", [](Node& self) {
    Tensor g = self.grad;
    const Tensor& in = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(in[i] > 0.0)) g[i] = 0.0;
    push(self, 0, g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_node(a.value() + b.value(), {a, b}, "add", [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_node(a.value() - b.value(), {a, b}, "sub", [](Node& self) {
    push(self, 0, self.grad);
    if (self.inputs[1]->requires_grad) push(self, 1, -1.0 * self.grad);
  });
}

Var scale(const Var& a, double s) {
  return make_node(s * a.value(), {a}, "scale", [s](Node& self) { push(self, 0, s * self.grad); });
}

Var mul_const(const Var& a, const Tensor& c) {
  require_same_shape(a.value(), c, "mul_const");
  auto saved = std::make_shared<Tensor>(c);
  return make_node(hadamard(a.value(), c), {a}, "mul_const",
                   [saved](Node& self) { push(self, 0, hadamard(self.grad, *saved)); });
}

Var scalar_mul(const Var& s, const Var& x) {
  require_scalar(s.value(), "scalar_mul");
  return make_node(s.item() * x.value(), {s, x}, "scalar_mul", [](Node& self) {
    const double sv = self.inputs[0]->value[0];
    if (self.inputs[0]->requires_grad)
      push(self, 0, Tensor({1}, dot(self.grad, self.inputs[1]->value)));
    if (self.inputs[1]->requires_grad) push(self, 1, sv * self.grad);
  });
}

Var scalar_div(const Var& a, const Var& b) {
  require_scalar(a.value(), "scalar_div");
  require_scalar(b.value(), "scalar_div");
  const double av = a.item(), bv = b.item();
  return make_node(Tensor({1}, av / bv), {a, b}, "scalar_div", [av, bv](Node& self) {
    const double g = self.grad[0];
    push(self, 0, Tensor({1}, g / bv));
    push(self, 1, Tensor({1}, -g * av / (bv * bv)));
  });
}

Var scalar_add_const(const Var& a, double c) {
  require_scalar(a.value(), "scalar_add_const");
  return make_node(Tensor({1}, a.item() + c), {a}, "scalar_add_const",
                   [](Node& self) { push(self, 0, self.grad); });
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "dot");
  return make_node(Tensor({1}, reconkit::dot(a.value(), b.value())), {a, b}, "dot",
                   [](Node& self) {
                     const double g = self.grad[0];
                     if (self.inputs[0]->requires_grad) push(self, 0, g * self.inputs[1]->value);
                     if (self.inputs[1]->requires_grad) push(self, 1, g * self.inputs[0]->value);
                   });
}

Var sum(const Var& a) {
  return make_node(Tensor({1}, reconkit::sum(a.value())), {a}, "sum", [](Node& self) {
    push(self, 0, Tensor(self.inputs[0]->value.shape(), self.grad[0]));
  });
}

Var abs_sum(const Var& a) {
  return make_node(Tensor({1}, norm1(a.value())), {a}, "abs_sum", [](Node& self) {
    const Tensor& in = self.inputs[0]->value;
    Tensor g(in.shape());
    const double s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = in[i] > 0.0 ? s : (in[i] < 0.0 ? -s : 0.0);
    push(self, 0, g);
  });
}

Var sum_squares(const Var& a) {
  return make_node(Tensor({1}, reconkit::dot(a.value(), a.value())), {a}, "sum_squares",
                   [](Node& self) { push(self, 0, (2.0 * self.grad[0]) * self.inputs[0]->value); });
}

Var reshape(const Var& x, Shape shape) {
  return make_node(x.value().reshaped(std::move(shape)), {x}, "reshape",
                   [](Node& self) { push(self, 0, self.grad); });
}

Var concat_channels(std::span<const Var> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = inputs[0].shape();
  if (s0.size() != 4) throw ShapeError("concat_channels: expected (N, C, H, W)");
  std::size_t channels = 0;
  for (const auto& v : inputs) {
    const Shape& s = v.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(s) + " vs " +
                       shape_to_string(s0));
    channels += s[1];
  }
  const std::size_t n = s0[0], area = s0[2] * s0[3];
  Tensor out({n, channels, s0[2], s0[3]});
  std::vector<std::size_t> counts;
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = 0;
    for (const auto& v : inputs) {
      const std::size_t c = v.shape()[1];
      std::memcpy(out.raw() + (b * channels + offset) * area, v.value().raw() + b * c * area,
                  c * area * sizeof(double));
      offset += c;
    }
  }
  for (const auto& v : inputs) counts.push_back(v.shape()[1]);
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return make_node(std::move(out), ins, "concat_channels", [counts, channels](Node& self) {
    const Shape& s = self.value.shape();
    const std::size_t n = s[0], area = s[2] * s[3];
    std::size_t offset = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const std::size_t c = counts[k];
      if (self.inputs[k]->requires_grad) {
        Tensor g({n, c, s[2], s[3]});
        for (std::size_t b = 0; b < n; ++b)
          std::memcpy(g.raw() + b * c * area, self.grad.raw() + (b * channels + offset) * area,
                      c * area * sizeof(double));
        push(self, k, g);
      }
      offset += c;
    }
  });
}

Var slice_channels(const Var& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() != 4 || begin + count > s[1] || count == 0)
    throw ShapeError("slice_channels: range out of bounds");
  const std::size_t n = s[0], channels = s[1], area = s[2] * s[3];
  Tensor out({n, count, s[2], s[3]});
  for (std::size_t b = 0; b < n; ++b)
    std::memcpy(out.raw() + b * count * area, x.value().raw() + (b * channels + begin) * area,
                count * area * sizeof(double));
  return make_node(std::move(out), {x}, "slice_channels", [begin, count](Node& self) {
    const Shape& s = self.inputs[0]->value.shape();
    const std::size_t n = s[0], channels = s[1], area = s[2] * s[3];
    Tensor g(s);
    for (std::size_t b = 0; b < n; ++b)
      std::memcpy(g.raw() + (b * channels + begin) * area, self.grad.raw() + b * count * area,
                  count * area * sizeof(double));
    push(self, 0, g);
  });
}

Var pad2d(const Var& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right,
          PadKind kind) {
  if (top + bottom + left + right == 0) return x;
  return make_node(kernels::pad2d(x.value(), top, bottom, left, right, kind), {x}, "pad2d",
                   [=](Node& self) {
                     push(self, 0, kernels::unpad2d(self.grad, top, bottom, left, right, kind));
                   });
}

Var crop2d(const Var& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  const Shape& s = x.shape();
  if (s.size() != 4 || top + height > s[2] || left + width > s[3])
    throw ShapeError("crop2d: window out of bounds");
  if (top == 0 && left == 0 && height == s[2] && width == s[3]) return x;
  const std::size_t planes = s[0] * s[1];
  Tensor out({s[0], s[1], height, width});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < height; ++i)
      std::memcpy(out.raw() + (p * height + i) * width,
                  x.value().raw() + (p * s[2] + top + i) * s[3] + left, width * sizeof(double));
  return make_node(std::move(out), {x}, "crop2d", [=](Node& self) {
    const Shape& s = self.inputs[0]->value.shape();
    Tensor g(s);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < height; ++i)
        std::memcpy(g.raw() + (p * s[2] + top + i) * s[3] + left,
                    self.grad.raw() + (p * height + i) * width, width * sizeof(double));
    push(self, 0, g);
  });
}

Var linear_map(const Var& x, const LinearFn& forward, const LinearFn& transpose) {
  return make_node(forward(x.value()), {x}, "linear_map", [transpose](Node& self) {
    const Tensor& in = self.inputs[0]->value;
    push(self, 0, transpose(self.grad).reshaped(in.shape()));
  });
}

// ------------------------------------------------------------------ backward

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1)
    throw ShapeError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; state 1 = on stack, 2 = finished.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  state[loss.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (!child->requires_grad) continue;
      int& st = state[child];
      if (st == 1) throw std::logic_error("backward: cycle detected in graph");
      if (st == 0) {
        st = 1;
        stack.emplace_back(child, 0);
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior and parameter-leaf gradients are per pass; plain leaves accumulate.
  for (Node* n : order)
    if (!n->inputs.empty() || n->param) n->grad = Tensor();

  loss.node()->accumulate(Tensor({1}, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.empty()) continue;
    if (n->backward) n->backward(*n);
    if (n->param) n->param->grad += n->grad.reshaped(n->param->grad.shape());
  }
}

// ---------------------------------------------------------------------- adam

void Adam::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (p->grad.shape() != p->value.shape())
      throw DataError("adam: missing gradient for " + p->name());
    ++p->adam_steps;
    const double t = static_cast<double>(p->adam_steps);
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      double& m = p->adam_m[i];
      double& v = p->adam_v[i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      p->value[i] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
  }
}

}  // namespace reconkit::ad
