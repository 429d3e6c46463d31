#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <vector>

#include "gsgp/grid.hpp"
#include "gsgp/interp.hpp"

namespace gsgp {

/// Symmetric linear operator abstraction for the generic solvers.
class LinearOperator {
 public:
  LinearOperator(Eigen::Index dim,
                 std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply)
      : dim_(dim), apply_(std::move(apply)) {}

  Eigen::Index dim() const { return dim_; }
  Eigen::VectorXd operator()(const Eigen::VectorXd& v) const { return apply_(v); }

 private:
  Eigen::Index dim_;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply_;
};

/// W K_G W^T + sigma^2 I applied through the structured pieces.
struct SkiOperator {
  const ToeplitzOperator* kg = nullptr;
  const InterpMatrix* w = nullptr;
  double sigma_sq = 0.0;

  Eigen::Index dim() const { return w->rows(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  LinearOperator to_linear_operator() const;
};

/// Precomputed images of a reference vector z0 shared by all compressed
/// iterates of a factorized solve: K_G W^T z0, W^T z0, z0^T z0.
struct FactorizedBasis {
  Eigen::VectorXd kgwt_z0;
  Eigen::VectorXd wt_z0;
  double z0_sq = 0.0;
  double sigma_sq = 0.0;
};

FactorizedBasis make_factorized_basis(const ToeplitzOperator& kg, const InterpMatrix& w,
                                      const Eigen::VectorXd& z0, double sigma);

/// Compressed n-vector z = W zhat + c z0 relative to a FactorizedBasis.
struct FactorizedVector {
  Eigen::VectorXd zhat;
  double c = 0.0;
};

/// One multiplication of the compressed iterate by W K_G W^T + sigma^2 I:
/// zhat' = (K_G W^T W + sigma^2 I) zhat + c K_G W^T z0, c' = sigma^2 c.
FactorizedVector factorized_update(const ToeplitzOperator& kg,
                                   const SufficientStats& stats,
                                   const FactorizedBasis& basis,
                                   const FactorizedVector& z);

/// Inner product of two compressed vectors sharing reference vectors z0, y0
/// with precomputed W^T z0, W^T y0 and y0^T z0.
double factorized_inner(const SufficientStats& stats, const Eigen::VectorXd& wt_z0,
                        const Eigen::VectorXd& wt_y0, double y0_dot_z0,
                        const FactorizedVector& z, const FactorizedVector& y);
double factorized_inner(const SufficientStats& stats, const FactorizedBasis& basis,
                        const FactorizedVector& z, const FactorizedVector& y);

class SolverBreakdown : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolveResult {
  Eigen::VectorXd x;
  int iterations = 0;
  bool converged = false;
  double residual_sq = 0.0;
  std::vector<double> residual_trace;  // r^T r, entry 0 is the initial residual
  std::vector<double> alphas;
  std::vector<double> betas;
  double setup_seconds = 0.0;
  double loop_seconds = 0.0;
};

using IterObserver =
    std::function<void(int k, const Eigen::VectorXd& x, const Eigen::VectorXd& r)>;
using FactorizedIterObserver =
    std::function<void(int k, const Eigen::VectorXd& rhat, double cr)>;

constexpr int kDefaultMaxIter = 1000;

/// Conjugate gradient with the squared-residual exit test r^T r <= eps,
/// eps = tol^2 b^T b. Throws SolverBreakdown when p^T A p <= 0.
SolveResult cg(const LinearOperator& op, const Eigen::VectorXd& b,
               const Eigen::VectorXd& x0, double tol, int maxiter = kDefaultMaxIter,
               const IterObserver& observer = nullptr);

/// CG on W K_G W^T + sigma^2 I in compressed coordinates. Same iterates as
/// cg() up to rounding; per-iteration work is one K_G and a constant number
/// of W^T W multiplications, never W itself.
struct FactorizedSolveResult : SolveResult {
  Eigen::VectorXd r0;  // entry residual, the compressed-representation basis
};

FactorizedSolveResult factorized_cg(const ToeplitzOperator& kg, const InterpMatrix& w,
                                    const SufficientStats& stats,
                                    const Eigen::VectorXd& b, const Eigen::VectorXd& x0,
                                    double sigma, double tol,
                                    int maxiter = kDefaultMaxIter,
                                    const FactorizedIterObserver& observer = nullptr);

/// Same solve as factorized_cg with fused operator application: exactly one
/// K_G and one W^T W multiplication per loop iteration.
FactorizedSolveResult factorized_cg_fused(const ToeplitzOperator& kg,
                                          const InterpMatrix& w,
                                          const SufficientStats& stats,
                                          const Eigen::VectorXd& b,
                                          const Eigen::VectorXd& x0, double sigma,
                                          double tol, int maxiter = kDefaultMaxIter,
                                          const FactorizedIterObserver& observer = nullptr);

struct GridRhsTolerance {
  double eps_abs = -1.0;  // absolute bound on r^T r
  double rel_tol = -1.0;  // eps = rel_tol^2 * r0^T r0
};

struct GridSolveResult {
  Eigen::VectorXd xhat_d;  // W^T (x - x0)
  int iterations = 0;
  bool converged = false;
  double residual_sq = 0.0;
  std::vector<double> residual_trace;
  std::vector<double> alphas;
  std::vector<double> betas;
  double loop_seconds = 0.0;
};

/// Fused factorized CG for the case where the entry residual lies in the
/// span of W: r0 = W rhat0. Needs only sufficient statistics (never W) and
/// returns W^T (x - x0). For posterior mean inference with x0 = y/sigma^2,
/// rhat0 = -(1/sigma^2) K_G W^T y and W^T x = xhat_d + W^T y / sigma^2.
GridSolveResult factorized_cg_grid_rhs(const ToeplitzOperator& kg,
                                       const SufficientStats& stats,
                                       const Eigen::VectorXd& rhat0, double sigma,
                                       GridRhsTolerance tol,
                                       int maxiter = kDefaultMaxIter);

/// Lanczos tridiagonalization output. basis holds explicit columns Q (n x k)
/// or, when compressed, Qhat (m x k) with Q_col(i) = W Qhat_col(i) + d_i * b0
/// where b0 is the normalized start vector.
struct TridiagonalFactor {
  Eigen::VectorXd alpha;  // T diagonal
  Eigen::VectorXd beta;   // T off-diagonal, size k-1
  Eigen::MatrixXd basis;
  Eigen::VectorXd d;
  bool compressed = false;

  int order() const { return static_cast<int>(alpha.size()); }
  Eigen::MatrixXd tridiagonal() const;
};

constexpr double kLanczosBreakdownTol = 1e-12;

/// Lanczos with full reorthogonalization. Early breakdown (an invariant
/// subspace) returns the iterations completed so far.
TridiagonalFactor lanczos(const LinearOperator& op, const Eigen::VectorXd& b, int k);

/// Lanczos on W K_G W^T + sigma^2 I in compressed coordinates.
TridiagonalFactor factorized_lanczos(const ToeplitzOperator& kg, const InterpMatrix& w,
                                     const SufficientStats& stats,
                                     const Eigen::VectorXd& b, double sigma, int k);

/// Same factorization from precomputed start-vector images (basis holds
/// K_G W^T b, W^T b, b^T b for the unnormalized b); one K_G and one W^T W
/// multiplication per iteration.
TridiagonalFactor factorized_lanczos_fused(const ToeplitzOperator& kg,
                                           const SufficientStats& stats,
                                           const FactorizedBasis& b_images, int k);

struct SymmetricGridSolveResult {
  Eigen::VectorXd x;
  int iterations = 0;
  bool converged = false;
  double residual_sq = 0.0;
};

/// Solves (K_G W^T W + sigma^2 I) x = rhs through the symmetric operator
/// K_G W^T W K_G + sigma^2 K_G: x = K_G (K_G W^T W K_G + sigma^2 K_G)^{-1} rhs.
/// The symmetric operator is only positive semidefinite when K_G is close
/// to singular; CG breakdown is rethrown with a hint to use the factorized
/// solvers instead.
SymmetricGridSolveResult symmetric_grid_solve(const ToeplitzOperator& kg,
                                              const SufficientStats& stats,
                                              const Eigen::VectorXd& rhs, double sigma,
                                              double tol, int maxiter = kDefaultMaxIter);

}  // namespace gsgp
