#pragma once

#include <functional>
#include <vector>

#include "reconkit/autodiff.hpp"
#include "reconkit/operators.hpp"

namespace reconkit {

struct CGReport {
  int iterations = 0;
  /// ||M x - rhs|| of the returned solution.
  double residual_norm = 0.0;
  bool converged = false;
  /// Residual norm of the returned iterate after each iteration (non-increasing).
  std::vector<double> history;
};

using SpdFn = std::function<Tensor(const Tensor&)>;

/// CG from a zero initial guess on M x = rhs, M symmetric positive semidefinite.
/// Stops once ||M x - rhs|| <= tol ||rhs||. Returns the iterate with the smallest
/// residual seen.
Tensor conjugate_gradient(const SpdFn& apply, const Tensor& rhs, int max_iters, double tol,
                          CGReport* report = nullptr);

/// argmin_u lambda ||A u - y||^2 + ||u - A^T y||^2, i.e. the solution of
/// (lambda A^T A + I) u = (1 + lambda) A^T y.
Tensor prox_estimate(const OperatorHandle& op, const Tensor& y, double lambda, int cg_iters = 10,
                     double cg_tol = 1e-6);

/// sigma * eta / ||y||_1, or 0 when y == 0.
double lambda_schedule(double sigma, double eta, const Tensor& y);

/// Tikhonov pseudo-inverse: (A^T A + ridge I) x = A^T y.
Tensor pseudo_inverse_apply(const OperatorHandle& op, const Tensor& y, double ridge,
                            int cg_iters = 500, double cg_tol = 1e-12);

namespace ad {

using VarFn = std::function<Var(const Var&)>;

/// Unrolled CG on graph nodes; gradients flow through every iteration.
/// The stopping test only reads values.
Var conjugate_gradient(const VarFn& apply, const Var& rhs, int max_iters, double tol);

/// Differentiable prox_estimate in y (rank-3 node) and lambda (scalar node).
Var prox_estimate(const OperatorHandle& op, const Var& y, const Var& lambda, int cg_iters,
                  double cg_tol);

/// Applies op (or its adjoint) as a graph node.
Var apply_op(const OperatorHandle& op, const Var& x);
Var adjoint_op(const OperatorHandle& op, const Var& y);
Var normal_op(const OperatorHandle& op, const Var& x);

}  // namespace ad

}  // namespace reconkit
