#include "gsgp/interp.hpp"

#include <cmath>
#include <stdexcept>

namespace gsgp {

int stencil_radius(InterpScheme scheme) {
  return scheme == InterpScheme::Linear ? 1 : 2;
}

double WeightVector::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

Eigen::VectorXd WeightVector::dense(Eigen::Index m) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 0; i < indices.size(); ++i) out[indices[i]] += values[i];
  return out;
}

namespace {

// Keys cubic convolution kernel with a = -1/2.
double cubic_weight(double t) {
  const double a = std::abs(t);
  if (a <= 1.0) return (1.5 * a - 2.5) * a * a + 1.0;
  if (a < 2.0) return ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0;
  return 0.0;
}

double linear_weight(double t) {
  const double a = std::abs(t);
  return a <= 1.0 ? 1.0 - a : 0.0;
}

struct Stencil1d {
  Eigen::Index start;           // grid index of the first stencil point
  double w[4];
  int count;
};

// Snap tolerance in index units; absorbs roundoff when x sits on a node.
constexpr double kSnapTol = 1e-9;

Stencil1d stencil_1d(double x, double gmin, double spacing, Eigen::Index size,
                     InterpScheme scheme) {
  double u = (x - gmin) / spacing;
  const double r = std::round(u);
  if (std::abs(u - r) < kSnapTol) u = r;
  if (u < 0.0 || u > static_cast<double>(size - 1)) {
    throw std::invalid_argument("interp_weights: point outside grid");
  }
  Eigen::Index i0 = static_cast<Eigen::Index>(std::floor(u));
  if (i0 > size - 2) i0 = size - 2;  // u == size-1 lands in the last cell
  const double t = u - static_cast<double>(i0);

  Stencil1d s{};
  if (scheme == InterpScheme::Linear) {
    s.start = i0;
    s.w[0] = linear_weight(t);
    s.w[1] = linear_weight(1.0 - t);
    s.count = 2;
  } else {
    s.start = i0 - 1;
    s.w[0] = cubic_weight(t + 1.0);
    s.w[1] = cubic_weight(t);
    s.w[2] = cubic_weight(1.0 - t);
    s.w[3] = cubic_weight(2.0 - t);
    s.count = 4;
  }
  return s;
}

}  // namespace

WeightVector interp_weights(const Grid& grid, const Eigen::VectorXd& x,
                            InterpScheme scheme) {
  const int d = grid.dim();
  if (x.size() != d) throw std::invalid_argument("interp_weights: dimension mismatch");

  std::vector<Stencil1d> per_dim(d);
  for (int k = 0; k < d; ++k) {
    per_dim[k] = stencil_1d(x[k], grid.min(k), grid.spacing(k), grid.size(k), scheme);
  }

  WeightVector out;
  out.scheme = scheme;
  const int width = per_dim[0].count;
  std::vector<int> offs(d, 0);
  const Eigen::Index combos = [&] {
    Eigen::Index c = 1;
    for (int k = 0; k < d; ++k) c *= width;
    return c;
  }();
  out.indices.reserve(combos);
  out.values.reserve(combos);
  for (Eigen::Index c = 0; c < combos; ++c) {
    double w = 1.0;
    Eigen::Index flat = 0;
    bool in_range = true;
    for (int k = 0; k < d; ++k) {
      const Stencil1d& s = per_dim[k];
      const double wk = s.w[offs[k]];
      if (wk == 0.0) {
        w = 0.0;
        break;
      }
      const Eigen::Index j = s.start + offs[k];
      if (j < 0 || j >= grid.size(k)) {
        in_range = false;
        break;
      }
      w *= wk;
      flat = flat * grid.size(k) + j;
    }
    if (w != 0.0) {
      if (!in_range) {
        throw std::invalid_argument(
            "interp_weights: stencil leaves the grid (point too close to the boundary "
            "for the requested scheme)");
      }
      out.indices.push_back(flat);
      out.values.push_back(w);
    }
    for (int k = d - 1; k >= 0; --k) {
      if (++offs[k] < width) break;
      offs[k] = 0;
    }
  }
  return out;
}

InterpMatrix::InterpMatrix(Eigen::SparseMatrix<double, Eigen::RowMajor> w,
                           InterpScheme scheme)
    : w_(std::move(w)), scheme_(scheme) {}

Eigen::VectorXd InterpMatrix::apply(const Eigen::VectorXd& v) const {
  if (v.size() != w_.cols()) throw std::invalid_argument("InterpMatrix::apply: length mismatch");
  w_count_.fetch_add(1, std::memory_order_relaxed);
  return w_ * v;
}

Eigen::VectorXd InterpMatrix::apply_transpose(const Eigen::VectorXd& u) const {
  if (u.size() != w_.rows()) {
    throw std::invalid_argument("InterpMatrix::apply_transpose: length mismatch");
  }
  wt_count_.fetch_add(1, std::memory_order_relaxed);
  return w_.transpose() * u;
}

InterpMatrix build_interp_matrix(const Grid& grid, const Eigen::MatrixXd& points,
                                 InterpScheme scheme) {
  const Eigen::Index n = points.rows();
  Eigen::SparseMatrix<double, Eigen::RowMajor> w(n, grid.num_points());
  std::vector<Eigen::Triplet<double>> trips;
  const Eigen::Index per_row = 1LL << (stencil_radius(scheme) == 1 ? grid.dim()
                                                                   : 2 * grid.dim());
  trips.reserve(n * per_row);
  for (Eigen::Index i = 0; i < n; ++i) {
    WeightVector wv;
    try {
      wv = interp_weights(grid, points.row(i).transpose(), scheme);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("build_interp_matrix: row " + std::to_string(i) +
                                  ": " + e.what());
    }
    for (Eigen::Index j = 0; j < wv.nnz(); ++j) {
      trips.emplace_back(static_cast<int>(i), static_cast<int>(wv.indices[j]),
                         wv.values[j]);
    }
  }
  w.setFromTriplets(trips.begin(), trips.end());
  return InterpMatrix(std::move(w), scheme);
}

SufficientStatsAccumulator::SufficientStatsAccumulator(Grid grid, InterpScheme scheme)
    : grid_(std::move(grid)), scheme_(scheme), m_(grid_.num_points()),
      wty_(Eigen::VectorXd::Zero(grid_.num_points())) {
  const int r = stencil_radius(scheme_);
  const double per_row = std::pow(4.0 * r - 1.0, grid_.dim());
  wtw_.reserve(static_cast<std::size_t>(
      std::min(per_row * static_cast<double>(m_), 1e7)));
}

void SufficientStatsAccumulator::add(const Eigen::VectorXd& x, double y) {
  const WeightVector w = interp_weights(grid_, x, scheme_);
  const Eigen::Index k = w.nnz();
  for (Eigen::Index a = 0; a < k; ++a) {
    const double wa = w.values[a];
    wty_[w.indices[a]] += y * wa;
    for (Eigen::Index b = 0; b < k; ++b) {
      wtw_[w.indices[a] * m_ + w.indices[b]] += wa * w.values[b];
    }
  }
  yty_ += y * y;
  ++n_;
}

void SufficientStatsAccumulator::merge(const SufficientStatsAccumulator& other) {
  if (other.m_ != m_ || other.scheme_ != scheme_) {
    throw std::invalid_argument("SufficientStatsAccumulator::merge: mismatched shards");
  }
  for (const auto& [key, val] : other.wtw_) wtw_[key] += val;
  wty_ += other.wty_;
  yty_ += other.yty_;
  n_ += other.n_;
}

SufficientStats SufficientStatsAccumulator::finalize() const {
  Eigen::SparseMatrix<double, Eigen::RowMajor> wtw(m_, m_);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(wtw_.size());
  for (const auto& [key, val] : wtw_) {
    trips.emplace_back(static_cast<int>(key / m_), static_cast<int>(key % m_), val);
  }
  wtw.setFromTriplets(trips.begin(), trips.end());
  return SufficientStats(std::move(wtw), wty_, yty_, n_);
}

SufficientStats::SufficientStats(Eigen::SparseMatrix<double, Eigen::RowMajor> wtw,
                                 Eigen::VectorXd wty, double yty, std::int64_t n)
    : wtw_(std::move(wtw)), wty_(std::move(wty)), yty_(yty), n_(n) {}

Eigen::VectorXd SufficientStats::apply_wtw(const Eigen::VectorXd& v) const {
  if (v.size() != wtw_.cols()) {
    throw std::invalid_argument("SufficientStats::apply_wtw: length mismatch");
  }
  wtw_count_.fetch_add(1, std::memory_order_relaxed);
  return wtw_ * v;
}

std::int64_t SufficientStats::max_row_nnz() const {
  std::int64_t best = 0;
  for (Eigen::Index i = 0; i < wtw_.rows(); ++i) {
    const std::int64_t row = wtw_.outerIndexPtr()[i + 1] - wtw_.outerIndexPtr()[i];
    best = std::max(best, row);
  }
  return best;
}

SufficientStats sufficient_stats(const Grid& grid, InterpScheme scheme,
                                 RowStream& stream) {
  if (stream.dim() != grid.dim()) {
    throw std::invalid_argument("sufficient_stats: stream/grid dimension mismatch");
  }
  SufficientStatsAccumulator acc(grid, scheme);
  Eigen::VectorXd x(grid.dim());
  double y = 0.0;
  std::int64_t pos = 0;
  while (stream.next(x, y)) {
    ++pos;
    try {
      acc.add(x, y);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("sufficient_stats: stream row " + std::to_string(pos) +
                                  ": " + e.what());
    }
  }
  return acc.finalize();
}

std::int64_t memory_footprint(const InterpMatrix& w, FootprintMode mode) {
  if (mode == FootprintMode::SKI) {
    return w.nnz() + w.cols() + w.rows();
  }
  // nnz(W^T W) requires the product; cheap at the sizes where W is dense
  // enough to hold in memory in the first place.
  Eigen::SparseMatrix<double> wtw =
      Eigen::SparseMatrix<double>(w.matrix().transpose()) * w.matrix();
  wtw.prune(0.0);
  return wtw.nonZeros() + 2 * w.cols();
}

std::int64_t memory_footprint(const SufficientStats& stats, FootprintMode mode) {
  if (mode == FootprintMode::SKI) {
    throw std::invalid_argument(
        "memory_footprint: SKI accounting needs the interpolation matrix, "
        "sufficient statistics do not retain nnz(W)");
  }
  return stats.wtw().nonZeros() + 2 * stats.grid_size();
}

Grid fit_grid_to_data(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                      const std::vector<Eigen::Index>& sizes, InterpScheme scheme) {
  if (lo.size() != hi.size() || static_cast<std::size_t>(lo.size()) != sizes.size()) {
    throw std::invalid_argument("fit_grid_to_data: dimension mismatch");
  }
  const int r = stencil_radius(scheme);
  std::vector<GridDim> dims(sizes.size());
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const Eigen::Index m = sizes[k];
    if (m < 2 * r + 2) {
      throw std::invalid_argument("fit_grid_to_data: need at least " +
                                  std::to_string(2 * r + 2) + " points per dimension");
    }
    if (!(hi[k] > lo[k])) {
      throw std::invalid_argument("fit_grid_to_data: empty data range");
    }
    const double s = (hi[k] - lo[k]) / static_cast<double>(m - 1 - 2 * r);
    dims[k] = GridDim{lo[k] - r * s, hi[k] + r * s, m};
  }
  return Grid(std::move(dims));
}

}  // namespace gsgp
