#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "gsgp/kernels.hpp"

namespace gsgp {

struct GridDim {
  double min = 0.0;
  double max = 1.0;
  Eigen::Index size = 2;
};

/// Regular d-dimensional lattice. Multi-indices flatten row-major with the
/// last dimension fastest; this convention is shared by every module that
/// touches grid-indexed vectors.
class Grid {
 public:
  Grid() = default;
  explicit Grid(std::vector<GridDim> dims);

  int dim() const { return static_cast<int>(dims_.size()); }
  Eigen::Index size(int d) const { return dims_[d].size; }
  double min(int d) const { return dims_[d].min; }
  double max(int d) const { return dims_[d].max; }
  double spacing(int d) const { return spacings_[d]; }
  Eigen::Index num_points() const { return total_; }
  const std::vector<GridDim>& dims() const { return dims_; }

  Eigen::Index flat_index(const std::vector<Eigen::Index>& multi) const;
  Eigen::VectorXd point(Eigen::Index flat) const;

 private:
  std::vector<GridDim> dims_;
  std::vector<double> spacings_;
  Eigen::Index total_ = 0;
};

/// First generator slice of the grid kernel matrix: entry at multi-index
/// (i_1,...,i_d), flattened row-major, equals k(g_0, g_(i_1,...,i_d)).
Eigen::VectorXd kernel_generator_tensor(const KernelSpec& spec, const Grid& grid);

/// Dense m x m grid kernel matrix; testing oracle. Throws if
/// grid.num_points() exceeds max_points.
Eigen::MatrixXd kg_dense(const Grid& grid, const KernelSpec& spec,
                         Eigen::Index max_points = 8192);

/// Implicit multilevel-Toeplitz grid kernel operator. apply() multiplies by
/// K_G in O(m log m) through a circulant embedding and FFT. Immutable after
/// construction; concurrent apply() calls are safe (per-call scratch).
class ToeplitzOperator {
 public:
  ToeplitzOperator(const Grid& grid, const KernelSpec& spec);
  ~ToeplitzOperator();

  ToeplitzOperator(const ToeplitzOperator&) = delete;
  ToeplitzOperator& operator=(const ToeplitzOperator&) = delete;
  ToeplitzOperator(ToeplitzOperator&& other) noexcept;
  ToeplitzOperator& operator=(ToeplitzOperator&& other) noexcept;

  Eigen::Index dim() const { return m_; }
  double noise_variance() const { return sigma_sq_; }
  const Grid& grid() const { return grid_; }

  /// K_G v. Throws std::invalid_argument on a length mismatch.
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;

  /// Number of apply() calls since construction (instrumentation).
  std::int64_t matvec_count() const { return matvec_count_.load(); }

 private:
  Grid grid_;
  Eigen::Index m_ = 0;
  double sigma_sq_ = 0.0;
  std::vector<Eigen::Index> shape_;           // grid sizes per dimension
  std::vector<Eigen::Index> embed_shape_;     // circulant embedding sizes
  Eigen::Index embed_total_ = 0;
  Eigen::Index spectrum_size_ = 0;            // r2c non-redundant length
  std::vector<std::complex<double>> spectrum_;
  void* plan_fwd_ = nullptr;                  // fftw_plan
  void* plan_inv_ = nullptr;
  mutable std::atomic<std::int64_t> matvec_count_{0};
};

ToeplitzOperator build_toeplitz_operator(const Grid& grid, const KernelSpec& spec);

/// Smallest 5-smooth integer >= x (FFT-friendly embedding length).
Eigen::Index next_fast_fft_size(Eigen::Index x);

}  // namespace gsgp
