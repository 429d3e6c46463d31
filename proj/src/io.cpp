#include "gsgp/io.hpp"

#include <charconv>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace gsgp {

namespace {

constexpr char kDataMagic[8] = {'G', 'S', 'G', 'P', 'D', 'A', 'T', '1'};
constexpr char kStatsMagic[8] = {'G', 'S', 'G', 'P', 'S', 'S', 'T', '1'};

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ofstream& f, double v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f, const std::string& what) {
  std::uint64_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::invalid_argument("truncated file while reading " + what);
  }
  return v;
}

double read_f64(std::ifstream& f, const std::string& what) {
  double v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::invalid_argument("truncated file while reading " + what);
  }
  return v;
}

// Splits a CSV line into numeric fields; returns false when any field does
// not parse as a double.
bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  const char* p = line.data();
  const char* end = p + line.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    const char* field_end = p;
    while (field_end < end && *field_end != ',') ++field_end;
    const char* num_end = field_end;
    while (num_end > p && (num_end[-1] == ' ' || num_end[-1] == '\t' ||
                           num_end[-1] == '\r')) {
      --num_end;
    }
    double v = 0;
    const auto [ptr, ec] = std::from_chars(p, num_end, v);
    if (ec != std::errc() || ptr != num_end || num_end == p) return false;
    out.push_back(v);
    p = field_end < end ? field_end + 1 : end;
  }
  return !out.empty();
}

}  // namespace

CsvRowStream::CsvRowStream(const std::string& path, int dim)
    : file_(path), dim_(dim) {
  if (!file_) throw std::invalid_argument("cannot open CSV file: " + path);
  if (dim_ < 1) throw std::invalid_argument("CsvRowStream: dim must be >= 1");
}

bool CsvRowStream::next(Eigen::VectorXd& x, double& y) {
  std::string line;
  std::vector<double> fields;
  for (;;) {
    if (has_pending_) {
      line = std::move(pending_);
      has_pending_ = false;
    } else {
      if (!std::getline(file_, line)) return false;
      ++lineno_;
    }
    if (!checked_header_) {
      checked_header_ = true;
      if (!parse_row(line, fields)) continue;  // header row, skip
    } else if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;  // blank line
    } else if (!parse_row(line, fields)) {
      throw std::invalid_argument("CSV line " + std::to_string(lineno_) +
                                  ": malformed numeric field");
    }
    if (static_cast<int>(fields.size()) != dim_ + 1) {
      throw std::invalid_argument("CSV line " + std::to_string(lineno_) + ": expected " +
                                  std::to_string(dim_ + 1) + " columns, got " +
                                  std::to_string(fields.size()));
    }
    if (x.size() != dim_) x.resize(dim_);
    for (int k = 0; k < dim_; ++k) x[k] = fields[k];
    y = fields[dim_];
    return true;
  }
}

BinaryRowStream::BinaryRowStream(const std::string& path)
    : file_(path, std::ios::binary) {
  if (!file_) throw std::invalid_argument("cannot open binary dataset: " + path);
  char magic[8];
  if (!file_.read(magic, 8) || std::memcmp(magic, kDataMagic, 8) != 0) {
    throw std::invalid_argument("bad magic in binary dataset: " + path);
  }
  n_ = static_cast<std::int64_t>(read_u64(file_, "row count"));
  dim_ = static_cast<int>(read_u64(file_, "dimension"));
  if (dim_ < 1 || dim_ > 64) throw std::invalid_argument("binary dataset: bad dimension");
}

bool BinaryRowStream::next(Eigen::VectorXd& x, double& y) {
  if (read_ >= n_) return false;
  if (x.size() != dim_) x.resize(dim_);
  for (int k = 0; k < dim_; ++k) x[k] = read_f64(file_, "coordinate");
  y = read_f64(file_, "response");
  ++read_;
  return true;
}

bool MemoryRowStream::next(Eigen::VectorXd& x, double& y) {
  if (pos_ >= x_.rows()) return false;
  x = x_.row(pos_).transpose();
  y = y_[pos_];
  ++pos_;
  return true;
}

void write_dataset_csv(const std::string& path, const Eigen::MatrixXd& x,
                       const Eigen::VectorXd& y, bool header) {
  if (x.rows() != y.size()) throw std::invalid_argument("write_dataset_csv: size mismatch");
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("cannot open for writing: " + path);
  f.precision(17);
  if (header) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) f << "x" << k << ",";
    f << "y\n";
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) f << x(i, k) << ",";
    f << y[i] << "\n";
  }
}

void write_dataset_binary(const std::string& path, const Eigen::MatrixXd& x,
                          const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) {
    throw std::invalid_argument("write_dataset_binary: size mismatch");
  }
  BinaryDatasetWriter w(path, x.rows(), static_cast<int>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    w.write_row(x.row(i).transpose(), y[i]);
  }
  w.close();
}

BinaryDatasetWriter::BinaryDatasetWriter(const std::string& path, std::int64_t n,
                                         int dim)
    : file_(path, std::ios::binary), dim_(dim), n_(n) {
  if (!file_) throw std::invalid_argument("cannot open for writing: " + path);
  file_.write(kDataMagic, 8);
  write_u64(file_, static_cast<std::uint64_t>(n));
  write_u64(file_, static_cast<std::uint64_t>(dim));
}

void BinaryDatasetWriter::write_row(const Eigen::VectorXd& x, double y) {
  if (x.size() != dim_) throw std::invalid_argument("BinaryDatasetWriter: bad row dim");
  if (written_ >= n_) throw std::invalid_argument("BinaryDatasetWriter: too many rows");
  for (int k = 0; k < dim_; ++k) write_f64(file_, x[k]);
  write_f64(file_, y);
  ++written_;
}

void BinaryDatasetWriter::close() {
  if (file_.is_open()) {
    if (written_ != n_) {
      throw std::invalid_argument("BinaryDatasetWriter: wrote " +
                                  std::to_string(written_) + " of " +
                                  std::to_string(n_) + " rows");
    }
    file_.close();
  }
}

BinaryDatasetWriter::~BinaryDatasetWriter() {
  if (file_.is_open()) file_.close();
}

void save_stats(const std::string& path, const SufficientStats& stats,
                const Grid& grid, InterpScheme scheme) {
  if (grid.num_points() != stats.grid_size()) {
    throw std::invalid_argument("save_stats: grid does not match the statistics");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open for writing: " + path);
  f.write(kStatsMagic, 8);
  write_u64(f, static_cast<std::uint64_t>(grid.dim()));
  for (int k = 0; k < grid.dim(); ++k) {
    write_f64(f, grid.min(k));
    write_f64(f, grid.max(k));
    write_u64(f, static_cast<std::uint64_t>(grid.size(k)));
  }
  write_u64(f, scheme == InterpScheme::Linear ? 0 : 1);
  const auto& wtw = stats.wtw();
  write_u64(f, static_cast<std::uint64_t>(stats.grid_size()));
  write_u64(f, static_cast<std::uint64_t>(stats.n()));
  write_u64(f, static_cast<std::uint64_t>(wtw.nonZeros()));
  write_f64(f, stats.yty());
  for (Eigen::Index i = 0; i < stats.grid_size(); ++i) write_f64(f, stats.wty()[i]);
  for (Eigen::Index i = 0; i < wtw.outerSize(); ++i) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(wtw, i); it;
         ++it) {
      write_u64(f, static_cast<std::uint64_t>(it.row()));
      write_u64(f, static_cast<std::uint64_t>(it.col()));
      write_f64(f, it.value());
    }
  }
}

StatsFile load_stats(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open stats file: " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kStatsMagic, 8) != 0) {
    throw std::invalid_argument("bad magic in stats file: " + path);
  }
  const int d = static_cast<int>(read_u64(f, "grid dimension"));
  if (d < 1 || d > 64) throw std::invalid_argument("stats file: bad grid dimension");
  std::vector<GridDim> dims(d);
  for (int k = 0; k < d; ++k) {
    dims[k].min = read_f64(f, "grid min");
    dims[k].max = read_f64(f, "grid max");
    dims[k].size = static_cast<Eigen::Index>(read_u64(f, "grid size"));
  }
  const InterpScheme scheme =
      read_u64(f, "scheme") == 0 ? InterpScheme::Linear : InterpScheme::Cubic;
  const auto m = static_cast<Eigen::Index>(read_u64(f, "grid size"));
  const auto n = static_cast<std::int64_t>(read_u64(f, "row count"));
  const auto nnz = static_cast<Eigen::Index>(read_u64(f, "nnz"));
  const double yty = read_f64(f, "yty");
  Eigen::VectorXd wty(m);
  for (Eigen::Index i = 0; i < m; ++i) wty[i] = read_f64(f, "wty");
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(nnz);
  for (Eigen::Index i = 0; i < nnz; ++i) {
    const auto r = static_cast<int>(read_u64(f, "triplet row"));
    const auto c = static_cast<int>(read_u64(f, "triplet col"));
    const double v = read_f64(f, "triplet value");
    trips.emplace_back(r, c, v);
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> wtw(m, m);
  wtw.setFromTriplets(trips.begin(), trips.end());
  StatsFile out{Grid(std::move(dims)), scheme,
                SufficientStats(std::move(wtw), std::move(wty), yty, n)};
  if (out.grid.num_points() != m) {
    throw std::invalid_argument("stats file: grid/statistics size mismatch");
  }
  return out;
}

Eigen::MatrixXd read_points_csv(const std::string& path, int dim) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open points file: " + path);
  std::string line;
  std::vector<double> fields;
  std::vector<double> flat;
  std::int64_t lineno = 0;
  bool checked_header = false;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!parse_row(line, fields)) {
      if (!checked_header) {
        checked_header = true;
        continue;
      }
      throw std::invalid_argument("points file line " + std::to_string(lineno) +
                                  ": malformed numeric field");
    }
    checked_header = true;
    if (static_cast<int>(fields.size()) != dim) {
      throw std::invalid_argument("points file line " + std::to_string(lineno) +
                                  ": expected " + std::to_string(dim) + " columns");
    }
    flat.insert(flat.end(), fields.begin(), fields.end());
  }
  const auto rows = static_cast<Eigen::Index>(flat.size() / dim);
  Eigen::MatrixXd out(rows, dim);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int k = 0; k < dim; ++k) out(i, k) = flat[i * dim + k];
  }
  return out;
}

}  // namespace gsgp
