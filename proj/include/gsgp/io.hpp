#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <string>

#include "gsgp/interp.hpp"

namespace gsgp {

/// Streaming CSV reader: d coordinate columns then one response column.
/// A non-numeric first line is treated as a header and skipped. Malformed
/// rows raise std::invalid_argument with the 1-based line number.
class CsvRowStream : public RowStream {
 public:
  CsvRowStream(const std::string& path, int dim);
  int dim() const override { return dim_; }
  bool next(Eigen::VectorXd& x, double& y) override;

 private:
  std::ifstream file_;
  int dim_;
  std::int64_t lineno_ = 0;
  bool checked_header_ = false;
  std::string pending_;
  bool has_pending_ = false;
};

/// Flat binary dataset: 8-byte magic "GSGPDAT1", u64 n, u64 d, then n rows
/// of (d+1) little-endian doubles (coordinates then response).
class BinaryRowStream : public RowStream {
 public:
  explicit BinaryRowStream(const std::string& path);
  int dim() const override { return dim_; }
  std::int64_t rows() const { return n_; }
  bool next(Eigen::VectorXd& x, double& y) override;

 private:
  std::ifstream file_;
  int dim_ = 0;
  std::int64_t n_ = 0;
  std::int64_t read_ = 0;
};

/// In-memory adapter so datasets already held as matrices can feed the
/// streaming accumulator.
class MemoryRowStream : public RowStream {
 public:
  MemoryRowStream(const Eigen::MatrixXd& x, const Eigen::VectorXd& y)
      : x_(x), y_(y) {}
  int dim() const override { return static_cast<int>(x_.cols()); }
  bool next(Eigen::VectorXd& x, double& y) override;

 private:
  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  Eigen::Index pos_ = 0;
};

void write_dataset_csv(const std::string& path, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, bool header = true);
void write_dataset_binary(const std::string& path, const Eigen::MatrixXd& x,
                          const Eigen::VectorXd& y);

/// Incremental binary dataset writer for files too large to materialize.
class BinaryDatasetWriter {
 public:
  BinaryDatasetWriter(const std::string& path, std::int64_t n, int dim);
  void write_row(const Eigen::VectorXd& x, double y);
  void close();
  ~BinaryDatasetWriter();

 private:
  std::ofstream file_;
  int dim_;
  std::int64_t n_;
  std::int64_t written_ = 0;
};

/// Sufficient statistics on disk: magic "GSGPSST1", the grid (u64 d, then
/// f64 min, f64 max, u64 size per dimension), u64 scheme, u64 m, u64 n,
/// u64 nnz, f64 yty, m doubles of W^T y, then nnz (u64 row, u64 col,
/// f64 value) coordinate triplets of W^T W.
struct StatsFile {
  Grid grid;
  InterpScheme scheme = InterpScheme::Cubic;
  SufficientStats stats;
};

void save_stats(const std::string& path, const SufficientStats& stats,
                const Grid& grid, InterpScheme scheme);
StatsFile load_stats(const std::string& path);

/// Reads a whole CSV of points (dim columns, optional header) into a matrix.
Eigen::MatrixXd read_points_csv(const std::string& path, int dim);

}  // namespace gsgp
