#include "gsgp/grid.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace gsgp {

Grid::Grid(std::vector<GridDim> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw std::invalid_argument("Grid: need at least one dimension");
  total_ = 1;
  spacings_.reserve(dims_.size());
  for (const auto& d : dims_) {
    if (d.size < 2) throw std::invalid_argument("Grid: size must be >= 2 per dimension");
    if (!(d.max > d.min)) throw std::invalid_argument("Grid: max must exceed min");
    spacings_.push_back((d.max - d.min) / static_cast<double>(d.size - 1));
    total_ *= d.size;
  }
}

Eigen::Index Grid::flat_index(const std::vector<Eigen::Index>& multi) const {
  Eigen::Index flat = 0;
  for (int d = 0; d < dim(); ++d) {
    flat = flat * dims_[d].size + multi[d];
  }
  return flat;
}

Eigen::VectorXd Grid::point(Eigen::Index flat) const {
  Eigen::VectorXd x(dim());
  for (int d = dim() - 1; d >= 0; --d) {
    const Eigen::Index i = flat % dims_[d].size;
    flat /= dims_[d].size;
    x[d] = dims_[d].min + static_cast<double>(i) * spacings_[d];
  }
  return x;
}

Eigen::VectorXd kernel_generator_tensor(const KernelSpec& spec, const Grid& grid) {
  if (spec.hyper.dim() != grid.dim()) {
    throw std::invalid_argument("kernel_generator_tensor: kernel/grid dimension mismatch");
  }
  const Eigen::VectorXd origin = grid.point(0);
  Eigen::VectorXd t(grid.num_points());
  for (Eigen::Index j = 0; j < grid.num_points(); ++j) {
    t[j] = eval_kernel(spec, origin, grid.point(j));
  }
  return t;
}

Eigen::MatrixXd kg_dense(const Grid& grid, const KernelSpec& spec,
                         Eigen::Index max_points) {
  const Eigen::Index m = grid.num_points();
  if (m > max_points) {
    throw std::invalid_argument("kg_dense: grid has " + std::to_string(m) +
                                " points, above the cap of " + std::to_string(max_points));
  }
  Eigen::MatrixXd K(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd gi = grid.point(i);
    K(i, i) = spec.hyper.outputscale;
    for (Eigen::Index j = i + 1; j < m; ++j) {
      K(i, j) = eval_kernel(spec, gi, grid.point(j));
      K(j, i) = K(i, j);
    }
  }
  return K;
}

Eigen::Index next_fast_fft_size(Eigen::Index x) {
  if (x < 1) return 1;
  for (Eigen::Index n = x;; ++n) {
    Eigen::Index r = n;
    while (r % 2 == 0) r /= 2;
    while (r % 3 == 0) r /= 3;
    while (r % 5 == 0) r /= 5;
    if (r == 1) return n;
  }
}

namespace {

// FFTW plan creation is not thread-safe; execution with distinct buffers is.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

ToeplitzOperator::ToeplitzOperator(const Grid& grid, const KernelSpec& spec)
    : grid_(grid), m_(grid.num_points()),
      sigma_sq_(spec.hyper.noise_variance()) {
  const int d = grid.dim();
  shape_.resize(d);
  embed_shape_.resize(d);
  embed_total_ = 1;
  for (int k = 0; k < d; ++k) {
    shape_[k] = grid.size(k);
    embed_shape_[k] = next_fast_fft_size(2 * shape_[k] - 1);
    embed_total_ *= embed_shape_[k];
  }
  spectrum_size_ = embed_total_ / embed_shape_[d - 1] * (embed_shape_[d - 1] / 2 + 1);

  // Wraparound embedding of the generator tensor: index j in [0, e) maps to
  // displacement j when j < m, to e - j when e - j < m, otherwise to the
  // zero-padding gap. Exact because the SE generator is even per dimension.
  const Eigen::VectorXd gen = kernel_generator_tensor(spec, grid);
  std::vector<double> embed(embed_total_, 0.0);
  std::vector<Eigen::Index> idx(d, 0);
  for (Eigen::Index flat = 0; flat < embed_total_; ++flat) {
    Eigen::Index gen_flat = 0;
    bool in_support = true;
    for (int k = 0; k < d && in_support; ++k) {
      Eigen::Index delta;
      if (idx[k] < shape_[k]) {
        delta = idx[k];
      } else if (embed_shape_[k] - idx[k] < shape_[k]) {
        delta = embed_shape_[k] - idx[k];
      } else {
        in_support = false;
        delta = 0;
      }
      gen_flat = gen_flat * shape_[k] + delta;
    }
    if (in_support) embed[flat] = gen[gen_flat];
    for (int k = d - 1; k >= 0; --k) {
      if (++idx[k] < embed_shape_[k]) break;
      idx[k] = 0;
    }
  }

  std::vector<int> dims(d);
  for (int k = 0; k < d; ++k) dims[k] = static_cast<int>(embed_shape_[k]);
  spectrum_.assign(spectrum_size_, {0.0, 0.0});
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    plan_fwd_ = fftw_plan_dft_r2c(d, dims.data(), embed.data(),
                                  reinterpret_cast<fftw_complex*>(spectrum_.data()),
                                  FFTW_ESTIMATE | FFTW_UNALIGNED);
    std::vector<std::complex<double>> ctmp(spectrum_size_);
    std::vector<double> rtmp(embed_total_);
    plan_inv_ = fftw_plan_dft_c2r(d, dims.data(),
                                  reinterpret_cast<fftw_complex*>(ctmp.data()),
                                  rtmp.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
}

ToeplitzOperator::~ToeplitzOperator() {
  std::lock_guard<std::mutex> lock(fftw_plan_mutex());
  if (plan_fwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  if (plan_inv_) fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
}

ToeplitzOperator::ToeplitzOperator(ToeplitzOperator&& other) noexcept
    : grid_(std::move(other.grid_)), m_(other.m_), sigma_sq_(other.sigma_sq_),
      shape_(std::move(other.shape_)), embed_shape_(std::move(other.embed_shape_)),
      embed_total_(other.embed_total_), spectrum_size_(other.spectrum_size_),
      spectrum_(std::move(other.spectrum_)), plan_fwd_(other.plan_fwd_),
      plan_inv_(other.plan_inv_), matvec_count_(other.matvec_count_.load()) {
  other.plan_fwd_ = nullptr;
  other.plan_inv_ = nullptr;
}

ToeplitzOperator& ToeplitzOperator::operator=(ToeplitzOperator&& other) noexcept {
  if (this != &other) {
    {
      std::lock_guard<std::mutex> lock(fftw_plan_mutex());
      if (plan_fwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
      if (plan_inv_) fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
    }
    grid_ = std::move(other.grid_);
    m_ = other.m_;
    sigma_sq_ = other.sigma_sq_;
    shape_ = std::move(other.shape_);
    embed_shape_ = std::move(other.embed_shape_);
    embed_total_ = other.embed_total_;
    spectrum_size_ = other.spectrum_size_;
    spectrum_ = std::move(other.spectrum_);
    plan_fwd_ = other.plan_fwd_;
    plan_inv_ = other.plan_inv_;
    matvec_count_.store(other.matvec_count_.load());
    other.plan_fwd_ = nullptr;
    other.plan_inv_ = nullptr;
  }
  return *this;
}

Eigen::VectorXd ToeplitzOperator::apply(const Eigen::VectorXd& v) const {
  if (v.size() != m_) {
    throw std::invalid_argument("ToeplitzOperator::apply: length mismatch");
  }
  matvec_count_.fetch_add(1, std::memory_order_relaxed);

  const int d = static_cast<int>(shape_.size());
  std::vector<double> real_buf(embed_total_, 0.0);
  std::vector<std::complex<double>> cpx_buf(spectrum_size_);

  // Scatter v into the leading corner of the embedding box.
  std::vector<Eigen::Index> idx(d, 0);
  for (Eigen::Index flat = 0; flat < m_; ++flat) {
    Eigen::Index eflat = 0;
    for (int k = 0; k < d; ++k) eflat = eflat * embed_shape_[k] + idx[k];
    real_buf[eflat] = v[flat];
    for (int k = d - 1; k >= 0; --k) {
      if (++idx[k] < shape_[k]) break;
      idx[k] = 0;
    }
  }

  fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_fwd_), real_buf.data(),
                       reinterpret_cast<fftw_complex*>(cpx_buf.data()));
  for (Eigen::Index i = 0; i < spectrum_size_; ++i) cpx_buf[i] *= spectrum_[i];
  fftw_execute_dft_c2r(static_cast<fftw_plan>(plan_inv_),
                       reinterpret_cast<fftw_complex*>(cpx_buf.data()),
                       real_buf.data());

  const double scale = 1.0 / static_cast<double>(embed_total_);
  Eigen::VectorXd out(m_);
  std::fill(idx.begin(), idx.end(), 0);
  for (Eigen::Index flat = 0; flat < m_; ++flat) {
    Eigen::Index eflat = 0;
    for (int k = 0; k < d; ++k) eflat = eflat * embed_shape_[k] + idx[k];
    out[flat] = real_buf[eflat] * scale;
    for (int k = d - 1; k >= 0; --k) {
      if (++idx[k] < shape_[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

ToeplitzOperator build_toeplitz_operator(const Grid& grid, const KernelSpec& spec) {
  if (spec.hyper.dim() != grid.dim()) {
    throw std::invalid_argument("build_toeplitz_operator: kernel/grid dimension mismatch");
  }
  return ToeplitzOperator(grid, spec);
}

}  // namespace gsgp
