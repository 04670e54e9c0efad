#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "reconkit/autodiff.hpp"
#include "reconkit/operators.hpp"
#include "reconkit/rng.hpp"
#include "reconkit/tensor.hpp"

namespace testutil {

using reconkit::Shape;
using reconkit::Tensor;

inline Tensor random_tensor(const Shape& shape, reconkit::Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  reconkit::Rng rng(seed);
  return random_tensor(shape, rng);
}

inline double rel_diff(const Tensor& a, const Tensor& b) {
  const double denom = std::max(reconkit::norm2(a), reconkit::norm2(b));
  if (denom == 0.0) return 0.0;
  return reconkit::norm2(a - b) / denom;
}

/// Worst relative adjoint mismatch |<Ax,y> - <x,A^T y>| / (|<Ax,y>| + |<x,A^T y>|) over probes.
inline double adjoint_mismatch(const reconkit::OperatorHandle& op, int probes, std::uint64_t seed) {
  reconkit::Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Tensor x = random_tensor(op.domain_shape(), rng);
    const Tensor y = random_tensor(op.range_shape(), rng);
    const double lhs = reconkit::dot(op.apply(x), y);
    const double rhs = reconkit::dot(x, op.adjoint(y));
    const double scale = std::abs(lhs) + std::abs(rhs);
    if (scale > 0.0) worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

inline Eigen::MatrixXd to_eigen(const reconkit::OperatorHandle& op) {
  const auto m = reconkit::dense_matrix(op);
  const auto rows = static_cast<Eigen::Index>(reconkit::shape_size(op.range_shape()));
  const auto cols = static_cast<Eigen::Index>(reconkit::shape_size(op.domain_shape()));
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = m[static_cast<std::size_t>(r * cols + c)];
  return out;
}

inline Eigen::VectorXd to_eigen(const Tensor& t) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
  return v;
}

inline Tensor from_eigen(const Eigen::VectorXd& v, const Shape& shape) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = v(static_cast<Eigen::Index>(i));
  return t;
}

inline double spectral_norm(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

/// Central finite differences of a scalar function with respect to one input tensor.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                               double h = 1e-6) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Compares the autodiff gradient of `loss(inputs)` with finite differences for every input.
/// Returns the worst relative error.
inline double gradient_check(
    const std::function<reconkit::ad::Var(const std::vector<reconkit::ad::Var>&)>& loss,
    const std::vector<Tensor>& inputs, double h = 1e-6) {
  using namespace reconkit;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(ad::leaf(t));
  ad::backward(loss(leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& xk) {
      ad::NoGradGuard guard;
      std::vector<ad::Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        vs.push_back(ad::constant(j == k ? xk : inputs[j]));
      return loss(vs).item();
    };
    const Tensor num = numeric_gradient(f, inputs[k], h);
    worst = std::max(worst, rel_diff(leaves[k].grad(), num));
  }
  return worst;
}

}  // namespace testutil
