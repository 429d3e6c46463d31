#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "gsgp/interp.hpp"
#include "gsgp/kernels.hpp"
#include "gsgp/solvers.hpp"

namespace gsgp {

class SolverNonConvergence : public std::runtime_error {
 public:
  SolverNonConvergence(const std::string& what, double residual_sq, int iterations)
      : std::runtime_error(what), residual_sq(residual_sq), iterations(iterations) {}
  double residual_sq;
  int iterations;
};

struct SlqOptions {
  int max_depth = 100;     // Lanczos depth cap per probe
  double quad_tol = 0.01;  // stop a probe when successive estimates stabilize;
                           // <= 0 keeps the full fixed depth
};

struct SlqResult {
  double logdet = 0.0;
  int probes = 0;
  int max_depth_used = 0;
};

/// Stochastic Lanczos quadrature estimate of logdet(op) for an SPD operator:
/// Rademacher probes, Lanczos to max_depth with an early stop on the probe's
/// quadrature value. Deterministic for a fixed seed; per-probe RNG streams
/// are independent of evaluation order. Throws std::runtime_error when a
/// clearly negative Ritz value reveals an indefinite operator.
SlqResult slq_logdet(const LinearOperator& op, Eigen::Index dim, int num_probes,
                     const SlqOptions& opts, std::uint64_t seed);

/// Same estimator for logdet(W K_G W^T + sigma^2 I) run through the
/// factorized Lanczos recurrence: probe images W^T v, K_G W^T v are formed
/// once per probe and every Lanczos iteration costs one K_G and one W^T W
/// multiplication. Identical probes (and so estimates, up to rounding) to
/// slq_logdet on the assembled operator with the same seed.
SlqResult slq_logdet_ski_factorized(const ToeplitzOperator& kg, const InterpMatrix& w,
                                    const SufficientStats& stats, double sigma,
                                    int num_probes, const SlqOptions& opts,
                                    std::uint64_t seed);

enum class LogdetRoute {
  Auto,           // SkiOperator when W is available, otherwise by conditioning
  SymmetricGrid,  // paired SLQ on K_G W^T W K_G + sigma^2 K_G minus K_G
  SkiOperator,    // factorized SLQ on W K_G W^T + sigma^2 I, shifted by (n-m) log sigma^2
  Dense,          // exact dense logdet of the m x m system (small grids)
};

struct LoglikResult {
  double loglik = 0.0;
  double logdet_term = 0.0;  // logdet(K_G W^T W + sigma^2 I)
  double quad_term = 0.0;    // y^T (y - W zbar) / sigma^2
  double const_term = 0.0;   // n log 2pi + (n - m) log sigma^2
  int probes_used = 0;
  int solver_iterations = 0;
  std::string logdet_route;

  std::string to_json() const;
};

struct LoglikOptions {
  double solve_tol = 0.01;
  int probes = 30;
  SlqOptions slq;
  std::uint64_t seed = 0;
  LogdetRoute route = LogdetRoute::Auto;
  Eigen::Index dense_cap = 2048;
  int maxiter = kDefaultMaxIter;
};

/// Fact-4 log likelihood from sufficient statistics. The interpolation
/// matrix is optional; when present it unlocks the SkiOperator logdet route.
LoglikResult log_likelihood_gsgp(const SufficientStats& stats,
                                 const ToeplitzOperator& kg, double sigma,
                                 const LoglikOptions& opts,
                                 const InterpMatrix* w = nullptr,
                                 const Eigen::VectorXd* y = nullptr);

/// SKI-form log likelihood: CG for the quadratic term, SLQ on the n x n
/// operator for the logdet. logdet_term/const_term are stored in the same
/// m-system form as log_likelihood_gsgp so the two decompositions match.
LoglikResult log_likelihood_ski(const InterpMatrix& w, const Eigen::VectorXd& y,
                                const ToeplitzOperator& kg, double sigma,
                                const LoglikOptions& opts);

/// Fitted posterior-mean state. Mean prediction at x touches only the
/// interpolation weights of x and the cached m-vector.
struct PosteriorModel {
  KernelSpec spec;
  InterpScheme scheme = InterpScheme::Cubic;
  double sigma = 1.0;
  Eigen::VectorXd mean_coeffs;  // E[theta | y] on the grid
  std::shared_ptr<const ToeplitzOperator> kg;
  std::shared_ptr<const SufficientStats> stats;  // null on a pure SKI fit
  int solve_iterations = 0;
  double solve_residual_sq = 0.0;
  std::string fit_path;

  const Grid& grid() const { return kg->grid(); }
  double predict_mean(const Eigen::VectorXd& x) const;
  Eigen::VectorXd predict_mean(const Eigen::MatrixXd& points) const;
};

/// Posterior mean through the m x m system: one factorized solve driven by
/// the sufficient statistics, never touching W or y.
PosteriorModel posterior_mean_gsgp(std::shared_ptr<const SufficientStats> stats,
                                   std::shared_ptr<const ToeplitzOperator> kg,
                                   KernelSpec spec, InterpScheme scheme, double sigma,
                                   double tol, int maxiter = kDefaultMaxIter);

/// Posterior mean through the n x n system: CG on W K_G W^T + sigma^2 I.
/// Attaching stats is optional and only needed for later covariance queries.
PosteriorModel posterior_mean_ski(const InterpMatrix& w, const Eigen::VectorXd& y,
                                  std::shared_ptr<const ToeplitzOperator> kg,
                                  KernelSpec spec, InterpScheme scheme, double sigma,
                                  double tol, int maxiter = kDefaultMaxIter,
                                  std::shared_ptr<const SufficientStats> stats = nullptr);

struct CovResult {
  Eigen::MatrixXd cov;
  double max_asymmetry = 0.0;
  int total_iterations = 0;
};

/// Exact posterior covariance between test points: one grid-rhs solve per
/// point, entries symmetrized by averaging with the transpose.
CovResult posterior_cov_exact(const PosteriorModel& model,
                              const Eigen::MatrixXd& points, double tol = 1e-8,
                              int maxiter = kDefaultMaxIter);

/// Rank-k posterior covariance surrogate built from one factorized Lanczos
/// run; queries cost O(k * nnz(w_x)) per point once the point's prior image
/// is formed. rank() may come out below the requested k when the Krylov
/// space closes early.
class LowRankCov {
 public:
  LowRankCov() = default;

  Eigen::Index rank() const { return r_.cols(); }
  double query(const Eigen::VectorXd& x, const Eigen::VectorXd& x2) const;
  Eigen::MatrixXd cov_matrix(const Eigen::MatrixXd& points) const;

 private:
  friend LowRankCov posterior_cov_lowrank(const PosteriorModel&, Eigen::Index);
  friend void save_model(const std::string&, const PosteriorModel&, const LowRankCov*);
  friend std::pair<PosteriorModel, std::optional<LowRankCov>> load_model(
      const std::string& path);

  std::shared_ptr<const ToeplitzOperator> kg_;
  InterpScheme scheme_ = InterpScheme::Cubic;
  Eigen::MatrixXd r_;                  // m x k query cache
  Eigen::MatrixXd t_;                  // k x k tridiagonal
  Eigen::LDLT<Eigen::MatrixXd> t_fac_;
};

LowRankCov posterior_cov_lowrank(const PosteriorModel& model, Eigen::Index rank);

/// Dense exact-GP oracle (Fact-1 inference, Cholesky under the hood).
class ExactGp {
 public:
  ExactGp(Eigen::MatrixXd x, Eigen::VectorXd y, KernelSpec spec, double sigma,
          Eigen::Index cap = 4096);

  double mean(const Eigen::VectorXd& x) const;
  Eigen::VectorXd mean(const Eigen::MatrixXd& points) const;
  Eigen::MatrixXd cov(const Eigen::MatrixXd& points) const;
  double loglik() const { return loglik_; }

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  KernelSpec spec_;
  double sigma_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd z_;
  double loglik_ = 0.0;

  Eigen::MatrixXd cross_kernel(const Eigen::MatrixXd& points) const;
};

ExactGp exact_gp_reference(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           const KernelSpec& spec, double sigma,
                           Eigen::Index cap = 4096);

/// Model persistence (binary): grid, kernel, scheme, sigma, mean coefficients
/// and, optionally, the rank-k covariance cache.
void save_model(const std::string& path, const PosteriorModel& model,
                const LowRankCov* lowrank = nullptr);
std::pair<PosteriorModel, std::optional<LowRankCov>> load_model(const std::string& path);

}  // namespace gsgp
