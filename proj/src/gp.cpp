#include "gsgp/gp.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace gsgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::VectorXd rademacher_probe(Eigen::Index dim, std::uint64_t seed,
                                 std::uint64_t probe_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(probe_index),
                    static_cast<std::uint32_t>(probe_index >> 32)};
  std::mt19937_64 rng(seq);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = (rng() & 1) ? 1.0 : -1.0;
  return v;
}

// Gauss quadrature of log over the leading blocks of T, weighted by the
// probe norm. Picks the first depth where successive estimates stabilize.
struct ProbeQuadrature {
  double value = 0.0;
  int depth = 0;
};

ProbeQuadrature quadrature_logdet(const TridiagonalFactor& t, double probe_sq,
                                  const SlqOptions& opts) {
  const int k = t.order();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  double prev = 0.0;
  ProbeQuadrature out;
  for (int j = 1; j <= k; ++j) {
    es.computeFromTridiagonal(t.alpha.head(j), t.beta.head(j - 1));
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double scale = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
    if (lam[0] < -1e-10 * scale) {
      throw std::runtime_error(
          "slq_logdet: negative Ritz value, operator is not positive definite");
    }
    double est = 0.0;
    for (int l = 0; l < j; ++l) {
      const double tau = es.eigenvectors()(0, l);
      est += tau * tau * std::log(std::max(lam[l], 1e-16 * scale));
    }
    est *= probe_sq;
    out.value = est;
    out.depth = j;
    if (j >= 2 && opts.quad_tol > 0.0 &&
        std::abs(est - prev) <= opts.quad_tol * std::max(std::abs(est), 1e-300)) {
      break;
    }
    prev = est;
  }
  return out;
}

}  // namespace

SlqResult slq_logdet(const LinearOperator& op, Eigen::Index dim, int num_probes,
                     const SlqOptions& opts, std::uint64_t seed) {
  if (num_probes < 1) throw std::invalid_argument("slq_logdet: need at least one probe");
  const int depth = static_cast<int>(std::min<Eigen::Index>(opts.max_depth, dim));
  SlqResult res;
  double total = 0.0;
  for (int p = 0; p < num_probes; ++p) {
    const Eigen::VectorXd v = rademacher_probe(dim, seed, p);
    const TridiagonalFactor t = lanczos(op, v, depth);
    const ProbeQuadrature q = quadrature_logdet(t, v.squaredNorm(), opts);
    total += q.value;
    res.max_depth_used = std::max(res.max_depth_used, q.depth);
  }
  res.logdet = total / num_probes;
  res.probes = num_probes;
  return res;
}

SlqResult slq_logdet_ski_factorized(const ToeplitzOperator& kg, const InterpMatrix& w,
                                    const SufficientStats& stats, double sigma,
                                    int num_probes, const SlqOptions& opts,
                                    std::uint64_t seed) {
  if (num_probes < 1) {
    throw std::invalid_argument("slq_logdet_ski_factorized: need at least one probe");
  }
  const Eigen::Index n = w.rows();
  const int depth = static_cast<int>(std::min<Eigen::Index>(opts.max_depth, n));
  SlqResult res;
  double total = 0.0;
  for (int p = 0; p < num_probes; ++p) {
    const Eigen::VectorXd v = rademacher_probe(n, seed, p);
    FactorizedBasis images;
    images.wt_z0 = w.apply_transpose(v);
    images.kgwt_z0 = kg.apply(images.wt_z0);
    images.z0_sq = v.squaredNorm();
    images.sigma_sq = sigma * sigma;
    const TridiagonalFactor t = factorized_lanczos_fused(kg, stats, images, depth);
    const ProbeQuadrature q = quadrature_logdet(t, images.z0_sq, opts);
    total += q.value;
    res.max_depth_used = std::max(res.max_depth_used, q.depth);
  }
  res.logdet = total / num_probes;
  res.probes = num_probes;
  return res;
}

namespace {

// Dense K_G recovered from the operator one column at a time; only used by
// the Dense logdet route on small grids.
Eigen::MatrixXd dense_from_operator(const ToeplitzOperator& kg) {
  const Eigen::Index m = kg.dim();
  Eigen::MatrixXd k(m, m);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    e[j] = 1.0;
    k.col(j) = kg.apply(e);
    e[j] = 0.0;
  }
  return k;
}

double dense_logdet_grid_system(const ToeplitzOperator& kg,
                                const SufficientStats& stats, double sigma_sq) {
  const Eigen::Index m = kg.dim();
  Eigen::MatrixXd sys = dense_from_operator(kg) * Eigen::MatrixXd(stats.wtw());
  sys.diagonal().array() += sigma_sq;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    logdet += std::log(std::abs(lu.matrixLU()(i, i)));
  }
  return logdet;
}

double estimate_grid_kernel_condition(const ToeplitzOperator& kg) {
  const Eigen::Index m = kg.dim();
  const int depth = static_cast<int>(std::min<Eigen::Index>(30, m));
  const Eigen::VectorXd v = rademacher_probe(m, 0x5eedf00d, 0);
  LinearOperator op(m, [&kg](const Eigen::VectorXd& u) { return kg.apply(u); });
  const TridiagonalFactor t = lanczos(op, v, depth);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(t.alpha, t.beta);
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  if (!(hi > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / std::max(lo, hi * 1e-18);
}

}  // namespace

LoglikResult log_likelihood_gsgp(const SufficientStats& stats,
                                 const ToeplitzOperator& kg, double sigma,
                                 const LoglikOptions& opts, const InterpMatrix* w) {
  const Eigen::Index m = kg.dim();
  const auto n = static_cast<double>(stats.n());
  const double sigma_sq = sigma * sigma;
  LoglikResult res;

  // Quadratic term from the mean solve, all in grid coordinates.
  const Eigen::VectorXd rhat0 = -kg.apply(stats.wty()) / sigma_sq;
  GridRhsTolerance gt;
  gt.eps_abs = opts.solve_tol * opts.solve_tol * stats.yty();
  const GridSolveResult solve =
      factorized_cg_grid_rhs(kg, stats, rhat0, sigma, gt, opts.maxiter);
  if (!solve.converged) {
    throw SolverNonConvergence("log_likelihood_gsgp: mean solve did not converge",
                               solve.residual_sq, solve.iterations);
  }
  const Eigen::VectorXd wt_ztilde = solve.xhat_d + stats.wty() / sigma_sq;
  const Eigen::VectorXd zbar = kg.apply(wt_ztilde);
  res.quad_term = (stats.yty() - stats.wty().dot(zbar)) / sigma_sq;
  res.solver_iterations = solve.iterations;

  LogdetRoute route = opts.route;
  if (route == LogdetRoute::Auto) {
    if (w != nullptr) {
      route = LogdetRoute::SkiOperator;
    } else if (estimate_grid_kernel_condition(kg) > 1e8 && m <= opts.dense_cap) {
      route = LogdetRoute::Dense;
    } else {
      route = LogdetRoute::SymmetricGrid;
    }
  }

  switch (route) {
    case LogdetRoute::SkiOperator: {
      if (w == nullptr) {
        throw std::invalid_argument(
            "log_likelihood_gsgp: the SkiOperator logdet route needs the "
            "interpolation matrix");
      }
      const SlqResult slq = slq_logdet_ski_factorized(kg, *w, stats, sigma,
                                                      opts.probes, opts.slq, opts.seed);
      res.logdet_term = slq.logdet - (n - static_cast<double>(m)) * std::log(sigma_sq);
      res.probes_used = slq.probes;
      res.logdet_route = "ski-operator-slq";
      break;
    }
    case LogdetRoute::SymmetricGrid: {
      // logdet(K_G W^T W + s2 I) = logdet(K_G W^T W K_G + s2 K_G) - logdet(K_G),
      // both sides estimated with shared probes and matched fixed depth so the
      // near-null directions of K_G cancel probe by probe.
      LinearOperator sym(m, [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd ku = kg.apply(u);
        return Eigen::VectorXd(kg.apply(stats.apply_wtw(ku)) + sigma_sq * ku);
      });
      LinearOperator kgop(m, [&kg](const Eigen::VectorXd& u) { return kg.apply(u); });
      SlqOptions paired = opts.slq;
      paired.quad_tol = 0.0;  // fixed matched depth keeps the pair aligned
      const SlqResult s1 = slq_logdet(sym, m, opts.probes, paired, opts.seed);
      const SlqResult s2 = slq_logdet(kgop, m, opts.probes, paired, opts.seed);
      res.logdet_term = s1.logdet - s2.logdet;
      res.probes_used = s1.probes + s2.probes;
      res.logdet_route = "symmetric-grid-slq";
      break;
    }
    case LogdetRoute::Dense: {
      if (m > opts.dense_cap) {
        throw std::invalid_argument("log_likelihood_gsgp: grid too large for the "
                                    "dense logdet route");
      }
      res.logdet_term = dense_logdet_grid_system(kg, stats, sigma_sq);
      res.logdet_route = "dense";
      break;
    }
    case LogdetRoute::Auto:
      break;  // unreachable
  }

  res.const_term = n * kLog2Pi + (n - static_cast<double>(m)) * std::log(sigma_sq);
  res.loglik = -0.5 * (res.logdet_term + res.quad_term + res.const_term);
  return res;
}

LoglikResult log_likelihood_ski(const InterpMatrix& w, const Eigen::VectorXd& y,
                                const ToeplitzOperator& kg, double sigma,
                                const LoglikOptions& opts) {
  const Eigen::Index n = w.rows();
  const Eigen::Index m = kg.dim();
  const double sigma_sq = sigma * sigma;
  SkiOperator ski{&kg, &w, sigma_sq};

  LoglikResult res;
  const SolveResult solve = cg(ski.to_linear_operator(), y,
                               Eigen::VectorXd::Zero(n), opts.solve_tol, opts.maxiter);
  if (!solve.converged) {
    throw SolverNonConvergence("log_likelihood_ski: mean solve did not converge",
                               solve.residual_sq, solve.iterations);
  }
  res.quad_term = y.dot(solve.x);
  res.solver_iterations = solve.iterations;

  double logdet_n = 0.0;
  if (opts.route == LogdetRoute::Dense) {
    if (n > opts.dense_cap) {
      throw std::invalid_argument("log_likelihood_ski: n too large for the dense route");
    }
    Eigen::MatrixXd dense(n, n);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      e[j] = 1.0;
      dense.col(j) = ski.apply(e);
      e[j] = 0.0;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(dense);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("log_likelihood_ski: dense operator not positive definite");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      logdet_n += 2.0 * std::log(llt.matrixLLT()(i, i));
    }
    res.logdet_route = "dense";
  } else {
    const SlqResult slq =
        slq_logdet(ski.to_linear_operator(), n, opts.probes, opts.slq, opts.seed);
    logdet_n = slq.logdet;
    res.probes_used = slq.probes;
    res.logdet_route = "ski-operator-slq";
  }

  // Stored in the m-system decomposition so both paths report comparable parts.
  res.logdet_term =
      logdet_n - (static_cast<double>(n) - static_cast<double>(m)) * std::log(sigma_sq);
  res.const_term = static_cast<double>(n) * kLog2Pi +
                   (static_cast<double>(n) - static_cast<double>(m)) * std::log(sigma_sq);
  res.loglik = -0.5 * (res.logdet_term + res.quad_term + res.const_term);
  return res;
}

std::string LoglikResult::to_json() const {
  nlohmann::json j;
  j["loglik"] = loglik;
  j["logdet_term"] = logdet_term;
  j["quad_term"] = quad_term;
  j["const_term"] = const_term;
  j["probes_used"] = probes_used;
  j["solver_iterations"] = solver_iterations;
  j["logdet_route"] = logdet_route;
  return j.dump(2);
}

double PosteriorModel::predict_mean(const Eigen::VectorXd& x) const {
  const WeightVector wv = interp_weights(grid(), x, scheme);
  double out = 0.0;
  for (Eigen::Index i = 0; i < wv.nnz(); ++i) {
    out += wv.values[i] * mean_coeffs[wv.indices[i]];
  }
  return out;
}

Eigen::VectorXd PosteriorModel::predict_mean(const Eigen::MatrixXd& points) const {
  Eigen::VectorXd out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out[i] = predict_mean(points.row(i).transpose());
  }
  return out;
}

PosteriorModel posterior_mean_gsgp(std::shared_ptr<const SufficientStats> stats,
                                   std::shared_ptr<const ToeplitzOperator> kg,
                                   KernelSpec spec, InterpScheme scheme, double sigma,
                                   double tol, int maxiter) {
  if (!stats || !kg) throw std::invalid_argument("posterior_mean_gsgp: null inputs");
  const double sigma_sq = sigma * sigma;
  const Eigen::VectorXd rhat0 = -kg->apply(stats->wty()) / sigma_sq;
  GridRhsTolerance gt;
  gt.eps_abs = tol * tol * stats->yty();
  const GridSolveResult solve = factorized_cg_grid_rhs(*kg, *stats, rhat0, sigma, gt,
                                                       maxiter);
  if (!solve.converged) {
    throw SolverNonConvergence("posterior_mean_gsgp: solver hit maxiter",
                               solve.residual_sq, solve.iterations);
  }
  PosteriorModel model;
  model.spec = std::move(spec);
  model.scheme = scheme;
  model.sigma = sigma;
  model.mean_coeffs = kg->apply(solve.xhat_d + stats->wty() / sigma_sq);
  model.kg = std::move(kg);
  model.stats = std::move(stats);
  model.solve_iterations = solve.iterations;
  model.solve_residual_sq = solve.residual_sq;
  model.fit_path = "gsgp";
  return model;
}

PosteriorModel posterior_mean_ski(const InterpMatrix& w, const Eigen::VectorXd& y,
                                  std::shared_ptr<const ToeplitzOperator> kg,
                                  KernelSpec spec, InterpScheme scheme, double sigma,
                                  double tol, int maxiter,
                                  std::shared_ptr<const SufficientStats> stats) {
  if (!kg) throw std::invalid_argument("posterior_mean_ski: null operator");
  const double sigma_sq = sigma * sigma;
  SkiOperator ski{kg.get(), &w, sigma_sq};
  const SolveResult solve = cg(ski.to_linear_operator(), y,
                               Eigen::VectorXd::Zero(w.rows()), tol, maxiter);
  if (!solve.converged) {
    throw SolverNonConvergence("posterior_mean_ski: solver hit maxiter",
                               solve.residual_sq, solve.iterations);
  }
  PosteriorModel model;
  model.spec = std::move(spec);
  model.scheme = scheme;
  model.sigma = sigma;
  model.mean_coeffs = kg->apply(w.apply_transpose(solve.x));
  model.kg = std::move(kg);
  model.stats = std::move(stats);
  model.solve_iterations = solve.iterations;
  model.solve_residual_sq = solve.residual_sq;
  model.fit_path = "ski";
  return model;
}

CovResult posterior_cov_exact(const PosteriorModel& model, const Eigen::MatrixXd& points,
                              double tol, int maxiter) {
  if (!model.stats) {
    throw std::invalid_argument(
        "posterior_cov_exact: the model carries no sufficient statistics");
  }
  const auto& kg = *model.kg;
  const auto& stats = *model.stats;
  const Eigen::Index m = kg.dim();
  const Eigen::Index ns = points.rows();

  std::vector<WeightVector> wx(ns);
  Eigen::MatrixXd h(m, ns);  // K_G w_x per test point
  for (Eigen::Index j = 0; j < ns; ++j) {
    wx[j] = interp_weights(kg.grid(), points.row(j).transpose(), model.scheme);
    h.col(j) = kg.apply(wx[j].dense(m));
  }

  CovResult res;
  Eigen::MatrixXd solved(m, ns);  // W^T (K_X + s2 I)^{-1} W h_j
  for (Eigen::Index j = 0; j < ns; ++j) {
    GridRhsTolerance gt;
    gt.rel_tol = tol;
    const GridSolveResult s =
        factorized_cg_grid_rhs(kg, stats, h.col(j), model.sigma, gt, maxiter);
    if (!s.converged) {
      throw SolverNonConvergence("posterior_cov_exact: solver hit maxiter",
                                 s.residual_sq, s.iterations);
    }
    res.total_iterations += s.iterations;
    solved.col(j) = s.xhat_d;
  }

  Eigen::MatrixXd cov(ns, ns);
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < ns; ++j) {
      double prior = 0.0;
      for (Eigen::Index a = 0; a < wx[i].nnz(); ++a) {
        prior += wx[i].values[a] * h(wx[i].indices[a], j);
      }
      cov(i, j) = prior - h.col(i).dot(solved.col(j));
    }
  }
  res.max_asymmetry = (cov - cov.transpose()).cwiseAbs().maxCoeff();
  res.cov = 0.5 * (cov + cov.transpose()).eval();
  return res;
}

LowRankCov posterior_cov_lowrank(const PosteriorModel& model, Eigen::Index rank) {
  if (!model.stats) {
    throw std::invalid_argument(
        "posterior_cov_lowrank: the model carries no sufficient statistics");
  }
  const auto& kg = *model.kg;
  const auto& stats = *model.stats;
  const Eigen::Index m = kg.dim();
  if (rank < 0 || rank > m) {
    throw std::invalid_argument("posterior_cov_lowrank: need 0 <= rank <= grid size");
  }

  LowRankCov out;
  out.kg_ = model.kg;
  out.scheme_ = model.scheme;
  if (rank == 0 || stats.n() == 0) return out;  // prior covariance only

  // Start direction: the data-weighted average W^T 1_n, which equals
  // W^T W 1_m because interpolation rows sum to one. The conceptual probe
  // b = W ghat lies in the span of W, so the Krylov space closes inside it
  // and rank = m reproduces the exact correction.
  const Eigen::VectorXd g_raw = stats.apply_wtw(Eigen::VectorXd::Ones(m));
  const double g_norm = g_raw.norm();
  if (g_norm == 0.0) return out;
  const Eigen::VectorXd ghat = g_raw / g_norm;

  FactorizedBasis images;
  images.wt_z0 = stats.apply_wtw(ghat);
  images.kgwt_z0 = kg.apply(images.wt_z0);
  images.z0_sq = ghat.dot(images.wt_z0);
  images.sigma_sq = model.sigma * model.sigma;
  if (images.z0_sq <= 0.0) return out;

  const TridiagonalFactor factor =
      factorized_lanczos_fused(kg, stats, images, static_cast<int>(rank));
  const Eigen::Index k = factor.order();
  const Eigen::VectorXd wt_b = images.wt_z0 / std::sqrt(images.z0_sq);

  Eigen::MatrixXd r(m, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    r.col(j) = kg.apply(stats.apply_wtw(factor.basis.col(j)) + factor.d[j] * wt_b);
  }
  out.r_ = std::move(r);
  out.t_ = factor.tridiagonal();
  out.t_fac_.compute(out.t_);
  return out;
}

namespace {

Eigen::VectorXd lowrank_phi(const Eigen::MatrixXd& r, const WeightVector& w) {
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(r.cols());
  for (Eigen::Index a = 0; a < w.nnz(); ++a) {
    phi += w.values[a] * r.row(w.indices[a]).transpose();
  }
  return phi;
}

}  // namespace

double LowRankCov::query(const Eigen::VectorXd& x, const Eigen::VectorXd& x2) const {
  const Grid& grid = kg_->grid();
  const WeightVector wa = interp_weights(grid, x, scheme_);
  const WeightVector wb = interp_weights(grid, x2, scheme_);
  const Eigen::VectorXd hb = kg_->apply(wb.dense(kg_->dim()));
  double prior = 0.0;
  for (Eigen::Index a = 0; a < wa.nnz(); ++a) prior += wa.values[a] * hb[wa.indices[a]];
  if (r_.cols() == 0) return prior;
  const Eigen::VectorXd phi_a = lowrank_phi(r_, wa);
  const Eigen::VectorXd phi_b = lowrank_phi(r_, wb);
  return prior - phi_a.dot(t_fac_.solve(phi_b));
}

Eigen::MatrixXd LowRankCov::cov_matrix(const Eigen::MatrixXd& points) const {
  const Grid& grid = kg_->grid();
  const Eigen::Index m = kg_->dim();
  const Eigen::Index ns = points.rows();
  std::vector<WeightVector> wx(ns);
  Eigen::MatrixXd h(m, ns);
  for (Eigen::Index j = 0; j < ns; ++j) {
    wx[j] = interp_weights(grid, points.row(j).transpose(), scheme_);
    h.col(j) = kg_->apply(wx[j].dense(m));
  }
  Eigen::MatrixXd cov(ns, ns);
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < ns; ++j) {
      double prior = 0.0;
      for (Eigen::Index a = 0; a < wx[i].nnz(); ++a) {
        prior += wx[i].values[a] * h(wx[i].indices[a], j);
      }
      cov(i, j) = prior;
    }
  }
  if (r_.cols() > 0) {
    Eigen::MatrixXd phi(r_.cols(), ns);
    for (Eigen::Index j = 0; j < ns; ++j) phi.col(j) = lowrank_phi(r_, wx[j]);
    cov -= phi.transpose() * t_fac_.solve(phi);
  }
  return 0.5 * (cov + cov.transpose()).eval();
}

ExactGp::ExactGp(Eigen::MatrixXd x, Eigen::VectorXd y, KernelSpec spec, double sigma,
                 Eigen::Index cap)
    : x_(std::move(x)), y_(std::move(y)), spec_(std::move(spec)), sigma_(sigma) {
  const Eigen::Index n = x_.rows();
  if (n > cap) {
    throw std::invalid_argument("exact_gp_reference: n exceeds the dense cap");
  }
  if (y_.size() != n) throw std::invalid_argument("exact_gp_reference: size mismatch");
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      k(i, j) = eval_kernel(spec_, x_.row(i).transpose(), x_.row(j).transpose());
      k(j, i) = k(i, j);
    }
  }
  k.diagonal().array() += sigma_ * sigma_;
  chol_.compute(k);
  if (chol_.info() != Eigen::Success) {
    throw std::runtime_error("exact_gp_reference: Cholesky failed, matrix not PD");
  }
  z_ = chol_.solve(y_);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(chol_.matrixLLT()(i, i));
  loglik_ = -0.5 * (logdet + y_.dot(z_) + static_cast<double>(n) * kLog2Pi);
}

Eigen::MatrixXd ExactGp::cross_kernel(const Eigen::MatrixXd& points) const {
  Eigen::MatrixXd k(x_.rows(), points.rows());
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    for (Eigen::Index j = 0; j < points.rows(); ++j) {
      k(i, j) = eval_kernel(spec_, x_.row(i).transpose(), points.row(j).transpose());
    }
  }
  return k;
}

double ExactGp::mean(const Eigen::VectorXd& x) const {
  double out = 0.0;
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    out += eval_kernel(spec_, x_.row(i).transpose(), x) * z_[i];
  }
  return out;
}

Eigen::VectorXd ExactGp::mean(const Eigen::MatrixXd& points) const {
  return cross_kernel(points).transpose() * z_;
}

Eigen::MatrixXd ExactGp::cov(const Eigen::MatrixXd& points) const {
  const Eigen::Index ns = points.rows();
  Eigen::MatrixXd prior(ns, ns);
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = i; j < ns; ++j) {
      prior(i, j) = eval_kernel(spec_, points.row(i).transpose(), points.row(j).transpose());
      prior(j, i) = prior(i, j);
    }
  }
  const Eigen::MatrixXd kx = cross_kernel(points);
  return prior - kx.transpose() * chol_.solve(kx);
}

ExactGp exact_gp_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           const KernelSpec& spec, double sigma, Eigen::Index cap) {
  return ExactGp(x, y, spec, sigma, cap);
}

namespace {

constexpr char kModelMagic[8] = {'G', 'S', 'G', 'P', 'M', 'D', 'L', '1'};

void put_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_f64(std::ofstream& f, double v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t get_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::invalid_argument("model file truncated");
  }
  return v;
}
double get_f64(std::ifstream& f) {
  double v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::invalid_argument("model file truncated");
  }
  return v;
}

}  // namespace

void save_model(const std::string& path, const PosteriorModel& model,
                const LowRankCov* lowrank) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open for writing: " + path);
  f.write(kModelMagic, 8);
  const Grid& grid = model.grid();
  put_u64(f, static_cast<std::uint64_t>(grid.dim()));
  for (int k = 0; k < grid.dim(); ++k) {
    put_f64(f, grid.min(k));
    put_f64(f, grid.max(k));
    put_u64(f, static_cast<std::uint64_t>(grid.size(k)));
  }
  put_f64(f, model.spec.hyper.noise_std);
  put_f64(f, model.spec.hyper.outputscale);
  put_u64(f, static_cast<std::uint64_t>(model.spec.hyper.lengthscales.size()));
  for (Eigen::Index i = 0; i < model.spec.hyper.lengthscales.size(); ++i) {
    put_f64(f, model.spec.hyper.lengthscales[i]);
  }
  put_u64(f, model.scheme == InterpScheme::Linear ? 0 : 1);
  put_f64(f, model.sigma);
  put_u64(f, static_cast<std::uint64_t>(model.mean_coeffs.size()));
  for (Eigen::Index i = 0; i < model.mean_coeffs.size(); ++i) {
    put_f64(f, model.mean_coeffs[i]);
  }
  const Eigen::Index k = lowrank ? lowrank->rank() : 0;
  put_u64(f, static_cast<std::uint64_t>(k));
  if (lowrank && k > 0) {
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < lowrank->r_.rows(); ++i) put_f64(f, lowrank->r_(i, j));
    }
    for (Eigen::Index i = 0; i < k; ++i) put_f64(f, lowrank->t_(i, i));
    for (Eigen::Index i = 0; i + 1 < k; ++i) put_f64(f, lowrank->t_(i, i + 1));
  }
}

std::pair<PosteriorModel, std::optional<LowRankCov>> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open model file: " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kModelMagic, 8) != 0) {
    throw std::invalid_argument("bad magic in model file: " + path);
  }
  const int d = static_cast<int>(get_u64(f));
  std::vector<GridDim> dims(d);
  for (int k = 0; k < d; ++k) {
    dims[k].min = get_f64(f);
    dims[k].max = get_f64(f);
    dims[k].size = static_cast<Eigen::Index>(get_u64(f));
  }
  const double noise = get_f64(f);
  const double outscale = get_f64(f);
  const auto nls = static_cast<Eigen::Index>(get_u64(f));
  Eigen::VectorXd ls(nls);
  for (Eigen::Index i = 0; i < nls; ++i) ls[i] = get_f64(f);
  const InterpScheme scheme = get_u64(f) == 0 ? InterpScheme::Linear : InterpScheme::Cubic;
  const double sigma = get_f64(f);
  const auto m = static_cast<Eigen::Index>(get_u64(f));
  Eigen::VectorXd coeffs(m);
  for (Eigen::Index i = 0; i < m; ++i) coeffs[i] = get_f64(f);

  PosteriorModel model;
  model.spec = KernelSpec(Hyperparams(noise, ls, outscale));
  model.scheme = scheme;
  model.sigma = sigma;
  model.mean_coeffs = std::move(coeffs);
  model.kg = std::make_shared<ToeplitzOperator>(Grid(dims), model.spec);
  model.fit_path = "loaded";

  std::optional<LowRankCov> lowrank;
  const auto k = static_cast<Eigen::Index>(get_u64(f));
  if (k > 0) {
    LowRankCov lr;
    lr.kg_ = model.kg;
    lr.scheme_ = scheme;
    lr.r_.resize(m, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) lr.r_(i, j) = get_f64(f);
    }
    lr.t_ = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i) lr.t_(i, i) = get_f64(f);
    for (Eigen::Index i = 0; i + 1 < k; ++i) {
      lr.t_(i, i + 1) = get_f64(f);
      lr.t_(i + 1, i) = lr.t_(i, i + 1);
    }
    lr.t_fac_.compute(lr.t_);
    lowrank = std::move(lr);
  }
  return {std::move(model), std::move(lowrank)};
}

}  // namespace gsgp
