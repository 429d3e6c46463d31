#include "gsgp/solvers.hpp"

#include <chrono>
#include <cmath>

namespace gsgp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

Eigen::VectorXd SkiOperator::apply(const Eigen::VectorXd& v) const {
  return w->apply(kg->apply(w->apply_transpose(v))) + sigma_sq * v;
}

LinearOperator SkiOperator::to_linear_operator() const {
  return LinearOperator(dim(), [op = *this](const Eigen::VectorXd& v) {
    return op.apply(v);
  });
}

FactorizedBasis make_factorized_basis(const ToeplitzOperator& kg, const InterpMatrix& w,
                                      const Eigen::VectorXd& z0, double sigma) {
  FactorizedBasis basis;
  basis.wt_z0 = w.apply_transpose(z0);
  basis.kgwt_z0 = kg.apply(basis.wt_z0);
  basis.z0_sq = z0.squaredNorm();
  basis.sigma_sq = sigma * sigma;
  return basis;
}

FactorizedVector factorized_update(const ToeplitzOperator& kg,
                                   const SufficientStats& stats,
                                   const FactorizedBasis& basis,
                                   const FactorizedVector& z) {
  if (z.zhat.size() != kg.dim()) {
    throw std::invalid_argument("factorized_update: dimension mismatch");
  }
  FactorizedVector out;
  out.zhat = kg.apply(stats.apply_wtw(z.zhat)) + basis.sigma_sq * z.zhat +
             z.c * basis.kgwt_z0;
  out.c = basis.sigma_sq * z.c;
  return out;
}

double factorized_inner(const SufficientStats& stats, const Eigen::VectorXd& wt_z0,
                        const Eigen::VectorXd& wt_y0, double y0_dot_z0,
                        const FactorizedVector& z, const FactorizedVector& y) {
  if (z.zhat.size() != y.zhat.size()) {
    throw std::invalid_argument("factorized_inner: dimension mismatch");
  }
  return z.zhat.dot(stats.apply_wtw(y.zhat)) + y.c * z.zhat.dot(wt_y0) +
         z.c * y.zhat.dot(wt_z0) + z.c * y.c * y0_dot_z0;
}

double factorized_inner(const SufficientStats& stats, const FactorizedBasis& basis,
                        const FactorizedVector& z, const FactorizedVector& y) {
  return factorized_inner(stats, basis.wt_z0, basis.wt_z0, basis.z0_sq, z, y);
}

SolveResult cg(const LinearOperator& op, const Eigen::VectorXd& b,
               const Eigen::VectorXd& x0, double tol, int maxiter,
               const IterObserver& observer) {
  if (b.size() != op.dim() || x0.size() != op.dim()) {
    throw std::invalid_argument("cg: dimension mismatch");
  }
  const auto t0 = Clock::now();
  SolveResult res;
  const double eps = tol * tol * b.squaredNorm();
  Eigen::VectorXd x = x0;
  Eigen::VectorXd r = b - op(x0);
  double rho = r.squaredNorm();
  res.residual_trace.push_back(rho);
  res.setup_seconds = seconds_since(t0);
  if (rho <= eps) {
    res.x = std::move(x);
    res.converged = true;
    res.residual_sq = rho;
    return res;
  }
  Eigen::VectorXd p = r;
  const auto t1 = Clock::now();
  for (int k = 0; k < maxiter; ++k) {
    const Eigen::VectorXd ap = op(p);
    const double pap = p.dot(ap);
    if (pap <= 0.0) {
      throw SolverBreakdown("cg: p^T A p <= 0, operator is not positive definite");
    }
    const double alpha = rho / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rho_new = r.squaredNorm();
    res.iterations = k + 1;
    res.alphas.push_back(alpha);
    res.residual_trace.push_back(rho_new);
    if (observer) observer(k + 1, x, r);
    if (rho_new <= eps) {
      res.converged = true;
      rho = rho_new;
      break;
    }
    const double beta = rho_new / rho;
    res.betas.push_back(beta);
    p = r + beta * p;
    rho = rho_new;
  }
  res.loop_seconds = seconds_since(t1);
  res.x = std::move(x);
  res.residual_sq = rho;
  return res;
}

FactorizedSolveResult factorized_cg(const ToeplitzOperator& kg, const InterpMatrix& w,
                                    const SufficientStats& stats,
                                    const Eigen::VectorXd& b, const Eigen::VectorXd& x0,
                                    double sigma, double tol, int maxiter,
                                    const FactorizedIterObserver& observer) {
  if (b.size() != w.rows() || x0.size() != w.rows()) {
    throw std::invalid_argument("factorized_cg: dimension mismatch");
  }
  const auto t0 = Clock::now();
  FactorizedSolveResult res;
  const Eigen::Index m = kg.dim();
  const double sigma_sq = sigma * sigma;
  const double eps = tol * tol * b.squaredNorm();

  // Entry residual, computed explicitly once; every later iterate is kept
  // compressed against it.
  res.r0 = b - (w.apply(kg.apply(w.apply_transpose(x0))) + sigma_sq * x0);
  FactorizedBasis basis = make_factorized_basis(kg, w, res.r0, sigma);

  FactorizedVector rhat{Eigen::VectorXd::Zero(m), 1.0};
  FactorizedVector phat{Eigen::VectorXd::Zero(m), 1.0};
  FactorizedVector xhat{Eigen::VectorXd::Zero(m), 0.0};

  double rho = basis.z0_sq;
  res.residual_trace.push_back(rho);
  res.setup_seconds = seconds_since(t0);
  if (rho <= eps) {
    res.x = x0;
    res.converged = true;
    res.residual_sq = rho;
    return res;
  }

  const auto t1 = Clock::now();
  for (int k = 0; k < maxiter; ++k) {
    const FactorizedVector ap = factorized_update(kg, stats, basis, phat);
    const double pap = factorized_inner(stats, basis, phat, ap);
    if (pap <= 0.0) {
      throw SolverBreakdown("factorized_cg: p^T A p <= 0, operator is not positive definite");
    }
    const double alpha = rho / pap;
    xhat.zhat += alpha * phat.zhat;
    xhat.c += alpha * phat.c;
    rhat.zhat -= alpha * ap.zhat;
    rhat.c -= alpha * ap.c;
    const double rho_new = factorized_inner(stats, basis, rhat, rhat);
    res.iterations = k + 1;
    res.alphas.push_back(alpha);
    res.residual_trace.push_back(rho_new);
    if (observer) observer(k + 1, rhat.zhat, rhat.c);
    if (rho_new <= eps) {
      res.converged = true;
      rho = rho_new;
      break;
    }
    const double beta = rho_new / rho;
    res.betas.push_back(beta);
    phat.zhat = rhat.zhat + beta * phat.zhat;
    phat.c = rhat.c + beta * phat.c;
    rho = rho_new;
  }
  res.loop_seconds = seconds_since(t1);
  res.x = w.apply(xhat.zhat) + xhat.c * res.r0 + x0;
  res.residual_sq = rho;
  return res;
}

FactorizedSolveResult factorized_cg_fused(const ToeplitzOperator& kg,
                                          const InterpMatrix& w,
                                          const SufficientStats& stats,
                                          const Eigen::VectorXd& b,
                                          const Eigen::VectorXd& x0, double sigma,
                                          double tol, int maxiter,
                                          const FactorizedIterObserver& observer) {
  if (b.size() != w.rows() || x0.size() != w.rows()) {
    throw std::invalid_argument("factorized_cg_fused: dimension mismatch");
  }
  const auto t0 = Clock::now();
  FactorizedSolveResult res;
  const Eigen::Index m = kg.dim();
  const double sigma_sq = sigma * sigma;
  const double eps = tol * tol * b.squaredNorm();

  res.r0 = b - (w.apply(kg.apply(w.apply_transpose(x0))) + sigma_sq * x0);
  const FactorizedBasis basis = make_factorized_basis(kg, w, res.r0, sigma);

  // Carried images: uhat = W^T W rhat, vhat = (K_G W^T W + sigma^2 I) rhat,
  // shat = W^T W phat, zbar = (K_G W^T W + sigma^2 I) phat. With them every
  // inner product reduces to O(m) dot products.
  Eigen::VectorXd rhat = Eigen::VectorXd::Zero(m);
  double cr = 1.0;
  Eigen::VectorXd phat = Eigen::VectorXd::Zero(m);
  double cp = 1.0;
  Eigen::VectorXd xhat = Eigen::VectorXd::Zero(m);
  double cx = 0.0;
  Eigen::VectorXd uhat = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd shat = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd zbar = Eigen::VectorXd::Zero(m);

  double rho = basis.z0_sq;
  res.residual_trace.push_back(rho);
  res.setup_seconds = seconds_since(t0);
  if (rho <= eps) {
    res.x = x0;
    res.converged = true;
    res.residual_sq = rho;
    return res;
  }

  const auto t1 = Clock::now();
  for (int k = 0; k < maxiter; ++k) {
    // A(phat, cp) without any multiplication: zbar already holds B phat.
    const Eigen::VectorXd ap = zbar + cp * basis.kgwt_z0;
    const double cap = sigma_sq * cp;
    const double pap = shat.dot(ap) + cap * phat.dot(basis.wt_z0) +
                       cp * ap.dot(basis.wt_z0) + cp * cap * basis.z0_sq;
    if (pap <= 0.0) {
      throw SolverBreakdown(
          "factorized_cg_fused: p^T A p <= 0, operator is not positive definite");
    }
    const double alpha = rho / pap;
    xhat += alpha * phat;
    cx += alpha * cp;
    rhat -= alpha * ap;
    cr -= alpha * cap;
    uhat = stats.apply_wtw(rhat);
    const Eigen::VectorXd vhat = kg.apply(uhat) + sigma_sq * rhat;
    const double rho_new =
        uhat.dot(rhat) + 2.0 * cr * rhat.dot(basis.wt_z0) + cr * cr * basis.z0_sq;
    res.iterations = k + 1;
    res.alphas.push_back(alpha);
    res.residual_trace.push_back(rho_new);
    if (observer) observer(k + 1, rhat, cr);
    if (rho_new <= eps) {
      res.converged = true;
      rho = rho_new;
      break;
    }
    const double beta = rho_new / rho;
    res.betas.push_back(beta);
    phat = rhat + beta * phat;
    cp = cr + beta * cp;
    shat = uhat + beta * shat;
    zbar = vhat + beta * zbar;
    rho = rho_new;
  }
  res.loop_seconds = seconds_since(t1);
  res.x = w.apply(xhat) + cx * res.r0 + x0;
  res.residual_sq = rho;
  return res;
}

GridSolveResult factorized_cg_grid_rhs(const ToeplitzOperator& kg,
                                       const SufficientStats& stats,
                                       const Eigen::VectorXd& rhat0, double sigma,
                                       GridRhsTolerance tol, int maxiter) {
  const Eigen::Index m = kg.dim();
  if (rhat0.size() != m) {
    throw std::invalid_argument("factorized_cg_grid_rhs: dimension mismatch");
  }
  if (tol.eps_abs < 0.0 && tol.rel_tol < 0.0) {
    throw std::invalid_argument("factorized_cg_grid_rhs: set eps_abs or rel_tol");
  }
  GridSolveResult res;
  const double sigma_sq = sigma * sigma;

  // The search direction is only ever needed through its images
  // shat = W^T W p and zbar = (K_G W^T W + sigma^2 I) p, so p itself is
  // never materialized.
  Eigen::VectorXd rhat = rhat0;
  Eigen::VectorXd uhat = stats.apply_wtw(rhat);
  Eigen::VectorXd vhat = kg.apply(uhat) + sigma_sq * rhat;
  Eigen::VectorXd shat = uhat;
  Eigen::VectorXd zbar = vhat;
  Eigen::VectorXd xhat_d = Eigen::VectorXd::Zero(m);

  double rho = uhat.dot(rhat);  // r^T r for r = W rhat
  const double eps = tol.eps_abs >= 0.0 ? tol.eps_abs : tol.rel_tol * tol.rel_tol * rho;
  res.residual_trace.push_back(rho);
  if (rho <= eps) {
    res.xhat_d = std::move(xhat_d);
    res.converged = true;
    res.residual_sq = rho;
    return res;
  }

  const auto t1 = Clock::now();
  for (int k = 0; k < maxiter; ++k) {
    const double pap = shat.dot(zbar);
    if (pap <= 0.0) {
      throw SolverBreakdown(
          "factorized_cg_grid_rhs: p^T A p <= 0, operator is not positive definite");
    }
    const double alpha = rho / pap;
    xhat_d += alpha * shat;
    rhat -= alpha * zbar;
    uhat = stats.apply_wtw(rhat);
    vhat = kg.apply(uhat) + sigma_sq * rhat;
    const double rho_new = uhat.dot(rhat);
    res.iterations = k + 1;
    res.alphas.push_back(alpha);
    res.residual_trace.push_back(rho_new);
    if (rho_new <= eps) {
      res.converged = true;
      rho = rho_new;
      break;
    }
    const double beta = rho_new / rho;
    res.betas.push_back(beta);
    shat = uhat + beta * shat;
    zbar = vhat + beta * zbar;
    rho = rho_new;
  }
  res.loop_seconds = seconds_since(t1);
  res.xhat_d = std::move(xhat_d);
  res.residual_sq = rho;
  return res;
}

Eigen::MatrixXd TridiagonalFactor::tridiagonal() const {
  const int k = order();
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    t(i, i) = alpha[i];
    if (i + 1 < k) {
      t(i, i + 1) = beta[i];
      t(i + 1, i) = beta[i];
    }
  }
  return t;
}

TridiagonalFactor lanczos(const LinearOperator& op, const Eigen::VectorXd& b, int k) {
  const Eigen::Index n = op.dim();
  if (b.size() != n) throw std::invalid_argument("lanczos: dimension mismatch");
  if (k < 1 || k > n) throw std::invalid_argument("lanczos: need 1 <= k <= dim");
  const double bnorm = b.norm();
  if (bnorm == 0.0) throw std::invalid_argument("lanczos: start vector is zero");

  Eigen::MatrixXd q(n, k);
  Eigen::VectorXd alpha(k), beta(k > 1 ? k - 1 : 0);
  q.col(0) = b / bnorm;
  double beta_prev = 0.0;
  double scale = 0.0;
  int done = k;
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd w = op(q.col(i));
    if (i > 0) w -= beta_prev * q.col(i - 1);
    alpha[i] = q.col(i).dot(w);
    scale = std::max(scale, std::abs(alpha[i]));
    if (i == k - 1) break;
    w -= alpha[i] * q.col(i);
    w -= q.leftCols(i + 1) * (q.leftCols(i + 1).transpose() * w);
    const double b_next = w.norm();
    if (b_next <= kLanczosBreakdownTol * std::max(scale, 1e-300)) {
      done = i + 1;
      break;
    }
    beta[i] = b_next;
    scale = std::max(scale, b_next);
    q.col(i + 1) = w / b_next;
    beta_prev = b_next;
  }

  TridiagonalFactor out;
  out.alpha = alpha.head(done);
  out.beta = done > 1 ? Eigen::VectorXd(beta.head(done - 1)) : Eigen::VectorXd();
  out.basis = q.leftCols(done);
  out.compressed = false;
  return out;
}

TridiagonalFactor factorized_lanczos(const ToeplitzOperator& kg, const InterpMatrix& w,
                                     const SufficientStats& stats,
                                     const Eigen::VectorXd& b, double sigma, int k) {
  FactorizedBasis images;
  images.wt_z0 = w.apply_transpose(b);
  images.kgwt_z0 = kg.apply(images.wt_z0);
  images.z0_sq = b.squaredNorm();
  images.sigma_sq = sigma * sigma;

  const Eigen::Index m = kg.dim();
  if (k < 1 || k > w.rows()) throw std::invalid_argument("factorized_lanczos: bad k");
  if (images.z0_sq == 0.0) {
    throw std::invalid_argument("factorized_lanczos: start vector is zero");
  }
  const double bnorm = std::sqrt(images.z0_sq);
  FactorizedBasis basis{images.kgwt_z0 / bnorm, images.wt_z0 / bnorm, 1.0,
                        images.sigma_sq};

  Eigen::MatrixXd qhat = Eigen::MatrixXd::Zero(m, k);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd alpha(k), beta(k > 1 ? k - 1 : 0);
  Eigen::VectorXd tq = Eigen::VectorXd::Zero(k);  // qhat_j . wt_z0 cache

  FactorizedVector q{Eigen::VectorXd::Zero(m), 1.0};
  FactorizedVector q_prev{Eigen::VectorXd::Zero(m), 0.0};
  d[0] = q.c;
  double beta_prev = 0.0;
  double scale = 0.0;
  int done = k;
  for (int i = 0; i < k; ++i) {
    FactorizedVector wv = factorized_update(kg, stats, basis, q);
    wv.zhat -= beta_prev * q_prev.zhat;
    wv.c -= beta_prev * q_prev.c;
    alpha[i] = factorized_inner(stats, basis, q, wv);
    scale = std::max(scale, std::abs(alpha[i]));
    if (i == k - 1) break;
    wv.zhat -= alpha[i] * q.zhat;
    wv.c -= alpha[i] * q.c;

    // Full reorthogonalization against all stored compressed columns.
    const Eigen::VectorXd u = stats.apply_wtw(wv.zhat);
    const double w_dot_wtz0 = wv.zhat.dot(basis.wt_z0);
    Eigen::VectorXd lambda =
        qhat.leftCols(i + 1).transpose() * u + wv.c * tq.head(i + 1) +
        (w_dot_wtz0 + wv.c) * d.head(i + 1);
    wv.zhat -= qhat.leftCols(i + 1) * lambda;
    wv.c -= d.head(i + 1).dot(lambda);

    const double b_next = std::sqrt(std::max(0.0, factorized_inner(stats, basis, wv, wv)));
    if (b_next <= kLanczosBreakdownTol * std::max(scale, 1e-300)) {
      done = i + 1;
      break;
    }
    beta[i] = b_next;
    scale = std::max(scale, b_next);
    q_prev = q;
    q.zhat = wv.zhat / b_next;
    q.c = wv.c / b_next;
    qhat.col(i + 1) = q.zhat;
    d[i + 1] = q.c;
    tq[i + 1] = q.zhat.dot(basis.wt_z0);
    beta_prev = b_next;
  }

  TridiagonalFactor out;
  out.alpha = alpha.head(done);
  out.beta = done > 1 ? Eigen::VectorXd(beta.head(done - 1)) : Eigen::VectorXd();
  out.basis = qhat.leftCols(done);
  out.d = d.head(done);
  out.compressed = true;
  return out;
}

TridiagonalFactor factorized_lanczos_fused(const ToeplitzOperator& kg,
                                           const SufficientStats& stats,
                                           const FactorizedBasis& b_images, int k) {
  const Eigen::Index m = kg.dim();
  if (k < 1) throw std::invalid_argument("factorized_lanczos_fused: bad k");
  if (b_images.z0_sq <= 0.0) {
    throw std::invalid_argument("factorized_lanczos_fused: start vector is zero");
  }
  const double bnorm = std::sqrt(b_images.z0_sq);
  const Eigen::VectorXd wt_z0 = b_images.wt_z0 / bnorm;
  const Eigen::VectorXd kgwt_z0 = b_images.kgwt_z0 / bnorm;
  const double sigma_sq = b_images.sigma_sq;

  Eigen::MatrixXd qhat = Eigen::MatrixXd::Zero(m, k);
  Eigen::MatrixXd phat = Eigen::MatrixXd::Zero(m, k);  // W^T W qhat columns
  Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd tq = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd alpha(k), beta(k > 1 ? k - 1 : 0);

  Eigen::VectorXd q = Eigen::VectorXd::Zero(m);
  double cq = 1.0;
  Eigen::VectorXd q_prev = Eigen::VectorXd::Zero(m);
  double cq_prev = 0.0;
  Eigen::VectorXd sbar = Eigen::VectorXd::Zero(m);  // (K_G W^T W + sigma^2 I) q
  Eigen::VectorXd pcur = Eigen::VectorXd::Zero(m);  // W^T W q
  d[0] = cq;
  double beta_prev = 0.0;
  double scale = 0.0;
  int done = k;
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd wv = sbar + cq * kgwt_z0 - beta_prev * q_prev;
    double e = sigma_sq * cq - beta_prev * cq_prev;
    alpha[i] = pcur.dot(wv) + e * tq[i] + cq * wv.dot(wt_z0) + cq * e;
    scale = std::max(scale, std::abs(alpha[i]));
    if (i == k - 1) break;
    wv -= alpha[i] * q;
    e -= alpha[i] * cq;

    Eigen::VectorXd lambda = phat.leftCols(i + 1).transpose() * wv +
                             e * tq.head(i + 1) +
                             (wv.dot(wt_z0) + e) * d.head(i + 1);
    wv -= qhat.leftCols(i + 1) * lambda;
    e -= d.head(i + 1).dot(lambda);

    const Eigen::VectorXd p_next = stats.apply_wtw(wv);
    const Eigen::VectorXd s_next = kg.apply(p_next) + sigma_sq * wv;
    const double b_next = std::sqrt(
        std::max(0.0, p_next.dot(wv) + 2.0 * e * wv.dot(wt_z0) + e * e));
    if (b_next <= kLanczosBreakdownTol * std::max(scale, 1e-300)) {
      done = i + 1;
      break;
    }
    beta[i] = b_next;
    scale = std::max(scale, b_next);
    q_prev = q;
    cq_prev = cq;
    q = wv / b_next;
    cq = e / b_next;
    pcur = p_next / b_next;
    sbar = s_next / b_next;
    qhat.col(i + 1) = q;
    phat.col(i + 1) = pcur;
    d[i + 1] = cq;
    tq[i + 1] = q.dot(wt_z0);
    beta_prev = b_next;
  }

  TridiagonalFactor out;
  out.alpha = alpha.head(done);
  out.beta = done > 1 ? Eigen::VectorXd(beta.head(done - 1)) : Eigen::VectorXd();
  out.basis = qhat.leftCols(done);
  out.d = d.head(done);
  out.compressed = true;
  return out;
}

SymmetricGridSolveResult symmetric_grid_solve(const ToeplitzOperator& kg,
                                              const SufficientStats& stats,
                                              const Eigen::VectorXd& rhs, double sigma,
                                              double tol, int maxiter) {
  const Eigen::Index m = kg.dim();
  if (rhs.size() != m) throw std::invalid_argument("symmetric_grid_solve: bad rhs");
  const double sigma_sq = sigma * sigma;
  LinearOperator op(m, [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd kv = kg.apply(v);
    return Eigen::VectorXd(kg.apply(stats.apply_wtw(kv)) + sigma_sq * kv);
  });
  SolveResult inner;
  try {
    inner = cg(op, rhs, Eigen::VectorXd::Zero(m), tol, maxiter);
  } catch (const SolverBreakdown& e) {
    throw SolverBreakdown(std::string(e.what()) +
                          " (the symmetric grid operator is only positive semidefinite "
                          "when K_G is near singular; use the factorized CG solvers)");
  }
  SymmetricGridSolveResult res;
  res.x = kg.apply(inner.x);
  res.iterations = inner.iterations;
  res.converged = inner.converged;
  res.residual_sq = inner.residual_sq;
  return res;
}

}  // namespace gsgp
