#include "reconkit/solvers.hpp"

#include <cmath>

#include "reconkit/errors.hpp"

namespace reconkit {

Tensor conjugate_gradient(const SpdFn& apply, const Tensor& rhs, int max_iters, double tol,
                          CGReport* report) {
  CGReport local;
  CGReport& rep = report ? *report : local;
  rep = CGReport{};
  Tensor x = Tensor::zeros_like(rhs);
  const double rhs_norm = norm2(rhs);
  if (rhs_norm == 0.0) {
    rep.converged = true;
    return x;
  }
  Tensor r = rhs;
  Tensor p = r;
  double rs = dot(r, r);
  Tensor best = x;
  double best_res = rhs_norm;
  for (int it = 0; it < max_iters; ++it) {
    const Tensor mp = apply(p);
    const double pmp = dot(p, mp);
    if (!(pmp > 0.0)) break;
    const double alpha = rs / pmp;
    axpy(alpha, p, x);
    axpy(-alpha, mp, r);
    const double rs_new = dot(r, r);
    rep.iterations = it + 1;
    const double res = std::sqrt(rs_new);
    if (!std::isfinite(res)) throw NumericalError("conjugate_gradient: non-finite residual");
    if (res <= best_res) {
      best_res = res;
      best = x;
    }
    rep.history.push_back(best_res);
    if (res <= tol * rhs_norm) {
      rep.converged = true;
      break;
    }
    p *= rs_new / rs;
    p += r;
    rs = rs_new;
  }
  rep.residual_norm = best_res;
  rep.converged = rep.converged || best_res <= tol * rhs_norm;
  return best;
}

Tensor prox_estimate(const OperatorHandle& op, const Tensor& y, double lambda, int cg_iters,
                     double cg_tol) {
  if (lambda < 0.0) throw DataError("prox_estimate: lambda must be non-negative");
  Tensor aty = op.adjoint(y);
  if (lambda == 0.0) return aty;
  Tensor rhs = (1.0 + lambda) * std::move(aty);
  auto m = [&](const Tensor& u) {
    Tensor out = op.normal(u);
    out *= lambda;
    out += u;
    return out;
  };
  return conjugate_gradient(m, rhs, cg_iters, cg_tol);
}

double lambda_schedule(double sigma, double eta, const Tensor& y) {
  const double l1 = norm1(y);
  if (l1 == 0.0) return 0.0;
  return sigma * eta / l1;
}

Tensor pseudo_inverse_apply(const OperatorHandle& op, const Tensor& y, double ridge, int cg_iters,
                            double cg_tol) {
  if (!(ridge > 0.0)) throw DataError("pseudo_inverse_apply: ridge must be positive");
  auto m = [&](const Tensor& u) {
    Tensor out = op.normal(u);
    axpy(ridge, u, out);
    return out;
  };
  return conjugate_gradient(m, op.adjoint(y), cg_iters, cg_tol);
}

namespace ad {

Var apply_op(const OperatorHandle& op, const Var& x) {
  return linear_map(
      x, [op](const Tensor& v) { return op.apply(v); },
      [op](const Tensor& v) { return op.adjoint(v); });
}

Var adjoint_op(const OperatorHandle& op, const Var& y) {
  return linear_map(
      y, [op](const Tensor& v) { return op.adjoint(v); },
      [op](const Tensor& v) { return op.apply(v); });
}

Var normal_op(const OperatorHandle& op, const Var& x) {
  auto n = [op](const Tensor& v) { return op.normal(v); };
  return linear_map(x, n, n);
}

Var conjugate_gradient(const VarFn& apply, const Var& rhs, int max_iters, double tol) {
  const double rhs_norm = norm2(rhs.value());
  Var x = constant(Tensor::zeros_like(rhs.value()));
  if (rhs_norm == 0.0) return x;
  Var r = rhs;
  Var p = r;
  Var rs = dot(r, r);
  for (int it = 0; it < max_iters; ++it) {
    Var mp = apply(p);
    Var pmp = dot(p, mp);
    if (!(pmp.item() > 0.0)) break;
    Var alpha = scalar_div(rs, pmp);
    x = it == 0 ? scalar_mul(alpha, p) : add(x, scalar_mul(alpha, p));
    r = sub(r, scalar_mul(alpha, mp));
    Var rs_new = dot(r, r);
    if (!std::isfinite(rs_new.item())) throw NumericalError("conjugate_gradient: non-finite residual");
    if (std::sqrt(rs_new.item()) <= tol * rhs_norm) break;
    p = add(r, scalar_mul(scalar_div(rs_new, rs), p));
    rs = rs_new;
  }
  return x;
}

Var prox_estimate(const OperatorHandle& op, const Var& y, const Var& lambda, int cg_iters,
                  double cg_tol) {
  Var aty = adjoint_op(op, y);
  if (lambda.item() == 0.0) return aty;
  Var rhs = scalar_mul(scalar_add_const(lambda, 1.0), aty);
  auto m = [&](const Var& u) { return add(u, scalar_mul(lambda, normal_op(op, u))); };
  return conjugate_gradient(m, rhs, cg_iters, cg_tol);
}

}  // namespace ad

}  // namespace reconkit
