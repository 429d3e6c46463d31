#pragma once

#include <Eigen/Dense>

#include <string>

namespace gsgp {

/// Stationary kernel hyperparameters. Immutable after construction and
/// safe to share across threads.
struct Hyperparams {
  double noise_std = 1.0;            // observation noise standard deviation
  Eigen::VectorXd lengthscales;      // one per input dimension
  double outputscale = 1.0;

  Hyperparams() = default;
  Hyperparams(double noise, Eigen::VectorXd ls, double outscale);

  int dim() const { return static_cast<int>(lengthscales.size()); }
  double noise_variance() const { return noise_std * noise_std; }
};

enum class KernelFamily { SquaredExponential };

struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  Hyperparams hyper;

  KernelSpec() = default;
  explicit KernelSpec(Hyperparams h) : hyper(std::move(h)) {}
};

/// k(x, x2) for the given spec. Throws std::invalid_argument on a
/// dimension mismatch between x, x2 and the lengthscales.
double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& x2);

/// Named hyperparameter presets: "sine", "sound", "radar", "precipitation".
KernelSpec kernel_preset(const std::string& name);

/// Parses key-value kernel config text:
///   noise_std = 0.1
///   lengthscales = 0.3, 0.2
///   outputscale = 1.5
/// Lines starting with '#' and blank lines are ignored.
KernelSpec parse_kernel_config(const std::string& text);
KernelSpec load_kernel_config(const std::string& path);

}  // namespace gsgp
