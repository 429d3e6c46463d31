#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <atomic>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "gsgp/grid.hpp"

namespace gsgp {

enum class InterpScheme { Linear, Cubic };

/// Stencil radius r in grid cells: weights are nonzero only for grid points
/// within r cells of x per dimension (1 for linear, 2 for cubic).
int stencil_radius(InterpScheme scheme);

/// Sparse interpolation weights for one point: flat grid indices plus
/// values. Values sum to 1; exact zeros are dropped.
struct WeightVector {
  std::vector<Eigen::Index> indices;
  std::vector<double> values;
  InterpScheme scheme = InterpScheme::Cubic;

  Eigen::Index nnz() const { return static_cast<Eigen::Index>(indices.size()); }
  double sum() const;
  Eigen::VectorXd dense(Eigen::Index m) const;
};

/// Weights to interpolate from the grid to x. Throws std::invalid_argument
/// when the stencil would leave the grid (no clamping).
WeightVector interp_weights(const Grid& grid, const Eigen::VectorXd& x,
                            InterpScheme scheme);

/// Sparse n x m interpolation weight matrix, one WeightVector per row.
class InterpMatrix {
 public:
  InterpMatrix() = default;
  InterpMatrix(Eigen::SparseMatrix<double, Eigen::RowMajor> w, InterpScheme scheme);
  InterpMatrix(const InterpMatrix& other)
      : w_(other.w_), scheme_(other.scheme_), w_count_(other.w_count_.load()),
        wt_count_(other.wt_count_.load()) {}
  InterpMatrix(InterpMatrix&& other) noexcept
      : w_(std::move(other.w_)), scheme_(other.scheme_),
        w_count_(other.w_count_.load()), wt_count_(other.wt_count_.load()) {}
  InterpMatrix& operator=(const InterpMatrix&) = delete;
  InterpMatrix& operator=(InterpMatrix&& other) noexcept {
    w_ = std::move(other.w_);
    scheme_ = other.scheme_;
    w_count_.store(other.w_count_.load());
    wt_count_.store(other.wt_count_.load());
    return *this;
  }

  Eigen::Index rows() const { return w_.rows(); }
  Eigen::Index cols() const { return w_.cols(); }
  std::int64_t nnz() const { return w_.nonZeros(); }
  InterpScheme scheme() const { return scheme_; }
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& matrix() const { return w_; }

  /// W v (interpolate grid values to the data points).
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  /// W^T u.
  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& u) const;

  std::int64_t matvec_count() const { return w_count_.load(); }
  std::int64_t matvec_transpose_count() const { return wt_count_.load(); }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> w_;
  InterpScheme scheme_ = InterpScheme::Cubic;
  mutable std::atomic<std::int64_t> w_count_{0};
  mutable std::atomic<std::int64_t> wt_count_{0};
};

InterpMatrix build_interp_matrix(const Grid& grid, const Eigen::MatrixXd& points,
                                 InterpScheme scheme);

/// One-pass accumulation of W^T W, W^T y and y^T y. Data rows are never
/// stored; memory stays O(m). merge() is commutative and associative so
/// shards can be accumulated in parallel and combined.
class SufficientStats;

class SufficientStatsAccumulator {
 public:
  SufficientStatsAccumulator(Grid grid, InterpScheme scheme);

  void add(const Eigen::VectorXd& x, double y);
  void merge(const SufficientStatsAccumulator& other);
  SufficientStats finalize() const;

  std::int64_t rows_seen() const { return n_; }

 private:
  Grid grid_;
  InterpScheme scheme_;
  Eigen::Index m_ = 0;
  std::unordered_map<std::int64_t, double> wtw_;
  Eigen::VectorXd wty_;
  double yty_ = 0.0;
  std::int64_t n_ = 0;
};

class SufficientStats {
 public:
  SufficientStats() = default;
  SufficientStats(Eigen::SparseMatrix<double, Eigen::RowMajor> wtw,
                  Eigen::VectorXd wty, double yty, std::int64_t n);
  SufficientStats(const SufficientStats& other)
      : wtw_(other.wtw_), wty_(other.wty_), yty_(other.yty_), n_(other.n_),
        wtw_count_(other.wtw_count_.load()) {}
  SufficientStats(SufficientStats&& other) noexcept
      : wtw_(std::move(other.wtw_)), wty_(std::move(other.wty_)), yty_(other.yty_),
        n_(other.n_), wtw_count_(other.wtw_count_.load()) {}
  SufficientStats& operator=(const SufficientStats&) = delete;
  SufficientStats& operator=(SufficientStats&& other) noexcept {
    wtw_ = std::move(other.wtw_);
    wty_ = std::move(other.wty_);
    yty_ = other.yty_;
    n_ = other.n_;
    wtw_count_.store(other.wtw_count_.load());
    return *this;
  }

  Eigen::Index grid_size() const { return wty_.size(); }
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& wtw() const { return wtw_; }
  const Eigen::VectorXd& wty() const { return wty_; }
  double yty() const { return yty_; }
  std::int64_t n() const { return n_; }

  /// (W^T W) v.
  Eigen::VectorXd apply_wtw(const Eigen::VectorXd& v) const;

  std::int64_t max_row_nnz() const;
  std::int64_t matvec_count() const { return wtw_count_.load(); }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> wtw_;
  Eigen::VectorXd wty_;
  double yty_ = 0.0;
  std::int64_t n_ = 0;
  mutable std::atomic<std::int64_t> wtw_count_{0};
};

/// Row-at-a-time data source; implementations stream from CSV/binary files
/// or memory. next() returns false at end of stream.
class RowStream {
 public:
  virtual ~RowStream() = default;
  virtual int dim() const = 0;
  virtual bool next(Eigen::VectorXd& x, double& y) = 0;
};

/// Single pass over the stream; throws with the 1-based stream position on
/// an uninterpolable point.
SufficientStats sufficient_stats(const Grid& grid, InterpScheme scheme,
                                 RowStream& stream);

enum class FootprintMode { SKI, GSGP };

/// Scalar-count memory accounting: nnz(W) + m + n for SKI,
/// nnz(W^T W) + 2m for GSGP.
std::int64_t memory_footprint(const InterpMatrix& w, FootprintMode mode);
std::int64_t memory_footprint(const SufficientStats& stats, FootprintMode mode);

/// Grid that covers [lo, hi] per dimension padded by stencil_radius(scheme)
/// cells per side, so every data point in the box is interpolable.
Grid fit_grid_to_data(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                      const std::vector<Eigen::Index>& sizes, InterpScheme scheme);

}  // namespace gsgp
