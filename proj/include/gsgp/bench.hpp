#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "gsgp/gp.hpp"
#include "gsgp/interp.hpp"
#include "gsgp/kernels.hpp"

namespace gsgp {

struct SyntheticSpec {
  std::int64_t n = 1000;
  double noise_variance = 0.25;
  Eigen::Index grid_size = 0;  // paired grid size for bench scenarios; unused by the generator
  std::uint64_t seed = 0;
};

struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

/// Two-period sine on [0, 1]: x_i uniform, y = sin(4 pi x) + eps with
/// eps ~ N(0, noise_variance). Deterministic for a fixed seed.
Dataset gen_sine(const SyntheticSpec& spec);

/// Same rows streamed straight to a binary dataset file, never holding the
/// dataset in memory. Produces bit-identical rows to gen_sine.
void gen_sine_to_file(const SyntheticSpec& spec, const std::string& path);

/// Loads a whole dataset into memory; binary files are self-describing,
/// CSV needs the coordinate dimension.
Dataset load_dataset(const std::string& path, int csv_dim = -1);

struct PathMetrics {
  bool ok = false;
  std::string error;
  double per_iter_seconds = 0.0;
  double per_iter_ci = 0.0;  // 95% normal-approximation half width over trials
  double prep_seconds = 0.0;
  double prep_ci = 0.0;
  double total_seconds = 0.0;  // one solve / loglik evaluation, including prep
  std::int64_t memory_scalars = 0;
  int iterations = 0;
  double loglik = 0.0;  // loglik task only
};

struct BenchReport {
  std::string scenario;
  std::string task;  // "mean" or "loglik"
  std::int64_t n = 0;
  Eigen::Index m = 0;
  int d = 1;
  std::string scheme;
  int trials = 0;
  int probes = 0;  // loglik task only
  PathMetrics ski;
  PathMetrics gsgp;
  double solution_agreement = 0.0;

  std::string to_json() const;
};

struct BenchOptions {
  double tol = 0.01;
  int trials = 3;
  int maxiter = kDefaultMaxIter;
  int probes = 30;  // loglik task
  std::uint64_t seed = 0;
  bool parallel = false;  // parallelize across scenarios, never inside a timed region
};

/// Posterior-mean benchmark: times CG on the n x n system against the fused
/// factorized CG on the grid system, both started from y / sigma^2 so the
/// two paths walk the same Krylov sequence. One warm-up run per scenario is
/// excluded from the statistics.
std::vector<BenchReport> bench_mean_inference(
    const Dataset& data, const std::vector<std::vector<Eigen::Index>>& grid_sizes,
    const KernelSpec& spec, InterpScheme scheme, const BenchOptions& opts);

/// Log-likelihood benchmark at a single grid size.
BenchReport bench_loglik(const Dataset& data, const std::vector<Eigen::Index>& grid_size,
                         const KernelSpec& spec, InterpScheme scheme,
                         const BenchOptions& opts);

/// Writes fig3_periter.csv, fig4_tradeoff.csv, fig5_runtime.csv and
/// bench_report.json (schema 1) under dir.
void emit_plot_data(const std::vector<BenchReport>& reports, const std::string& dir);

}  // namespace gsgp
