#include "gsgp/bench.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <random>

#include "gsgp/io.hpp"
#include "gsgp/solvers.hpp"

namespace gsgp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kTwoPeriods = 4.0 * M_PI;

template <typename RowFn>
void sine_rows(const SyntheticSpec& spec, RowFn&& fn) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> ux(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, std::sqrt(spec.noise_variance));
  for (std::int64_t i = 0; i < spec.n; ++i) {
    const double x = ux(rng);
    const double eps = spec.noise_variance > 0.0 ? noise(rng) : 0.0;
    fn(x, std::sin(kTwoPeriods * x) + eps);
  }
}

struct MeanStd {
  double mean = 0.0;
  double ci_half = 0.0;
};

MeanStd summarize(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double s = 0.0;
  for (double v : xs) s += v;
  out.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0.0;
    for (double v : xs) var += (v - out.mean) * (v - out.mean);
    var /= static_cast<double>(xs.size() - 1);
    out.ci_half = 1.96 * std::sqrt(var / static_cast<double>(xs.size()));
  }
  return out;
}

std::string scheme_name(InterpScheme s) {
  return s == InterpScheme::Linear ? "linear" : "cubic";
}

std::string size_label(const std::vector<Eigen::Index>& sizes) {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(sizes[i]);
  }
  return out;
}

Grid scenario_grid(const Dataset& data, const std::vector<Eigen::Index>& sizes,
                   InterpScheme scheme) {
  const Eigen::VectorXd lo = data.x.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = data.x.colwise().maxCoeff().transpose();
  return fit_grid_to_data(lo, hi, sizes, scheme);
}

BenchReport bench_mean_scenario(const Dataset& data,
                                const std::vector<Eigen::Index>& sizes,
                                const KernelSpec& spec, InterpScheme scheme,
                                const BenchOptions& opts) {
  BenchReport rep;
  rep.task = "mean";
  rep.n = data.x.rows();
  rep.d = static_cast<int>(data.x.cols());
  rep.scheme = scheme_name(scheme);
  rep.trials = opts.trials;
  rep.scenario = "mean-n" + std::to_string(rep.n) + "-m" + size_label(sizes);

  const Grid grid = scenario_grid(data, sizes, scheme);
  rep.m = grid.num_points();
  const ToeplitzOperator kg(grid, spec);
  const double sigma = spec.hyper.noise_std;
  const double sigma_sq = sigma * sigma;
  const Eigen::VectorXd x0 = data.y / sigma_sq;

  Eigen::VectorXd ski_coeffs, gsgp_coeffs;

  // SKI path: CG on the n x n operator.
  try {
    std::vector<double> per_iter, prep;
    for (int trial = -1; trial < opts.trials; ++trial) {
      const auto t0 = Clock::now();
      const InterpMatrix w = build_interp_matrix(grid, data.x, scheme);
      const double prep_s = seconds_since(t0);
      SkiOperator ski{&kg, &w, sigma_sq};
      const SolveResult res = cg(ski.to_linear_operator(), data.y, x0, opts.tol,
                                 opts.maxiter);
      if (trial < 0) {  // warm-up
        rep.ski.memory_scalars = memory_footprint(w, FootprintMode::SKI);
        rep.ski.iterations = res.iterations;
        ski_coeffs = kg.apply(w.apply_transpose(res.x));
        continue;
      }
      per_iter.push_back(res.loop_seconds / std::max(1, res.iterations));
      prep.push_back(prep_s);
      rep.ski.total_seconds = prep_s + res.setup_seconds + res.loop_seconds;
    }
    const MeanStd it = summarize(per_iter), pr = summarize(prep);
    rep.ski.per_iter_seconds = it.mean;
    rep.ski.per_iter_ci = it.ci_half;
    rep.ski.prep_seconds = pr.mean;
    rep.ski.prep_ci = pr.ci_half;
    rep.ski.ok = true;
  } catch (const std::exception& e) {
    rep.ski.error = e.what();
  }

  // GSGP path: sufficient statistics once per trial, then the fused
  // factorized CG whose per-iteration work is independent of n.
  try {
    std::vector<double> per_iter, prep;
    for (int trial = -1; trial < opts.trials; ++trial) {
      const auto t0 = Clock::now();
      MemoryRowStream stream(data.x, data.y);
      const SufficientStats stats = sufficient_stats(grid, scheme, stream);
      const double prep_s = seconds_since(t0);
      const Eigen::VectorXd rhat0 = -kg.apply(stats.wty()) / sigma_sq;
      GridRhsTolerance gt;
      gt.eps_abs = opts.tol * opts.tol * stats.yty();
      const GridSolveResult res =
          factorized_cg_grid_rhs(kg, stats, rhat0, sigma, gt, opts.maxiter);
      if (trial < 0) {
        rep.gsgp.memory_scalars = memory_footprint(stats, FootprintMode::GSGP);
        rep.gsgp.iterations = res.iterations;
        gsgp_coeffs = kg.apply(res.xhat_d + stats.wty() / sigma_sq);
        continue;
      }
      per_iter.push_back(res.loop_seconds / std::max(1, res.iterations));
      prep.push_back(prep_s);
      rep.gsgp.total_seconds = prep_s + res.loop_seconds;
    }
    const MeanStd it = summarize(per_iter), pr = summarize(prep);
    rep.gsgp.per_iter_seconds = it.mean;
    rep.gsgp.per_iter_ci = it.ci_half;
    rep.gsgp.prep_seconds = pr.mean;
    rep.gsgp.prep_ci = pr.ci_half;
    rep.gsgp.ok = true;
  } catch (const std::exception& e) {
    rep.gsgp.error = e.what();
  }

  if (rep.ski.ok && rep.gsgp.ok) {
    rep.solution_agreement =
        (ski_coeffs - gsgp_coeffs).norm() / std::max(gsgp_coeffs.norm(), 1e-300);
  }
  return rep;
}

}  // namespace

Dataset gen_sine(const SyntheticSpec& spec) {
  if (spec.n < 1) throw std::invalid_argument("gen_sine: n must be >= 1");
  Dataset data;
  data.x.resize(spec.n, 1);
  data.y.resize(spec.n);
  Eigen::Index i = 0;
  sine_rows(spec, [&](double x, double y) {
    data.x(i, 0) = x;
    data.y[i] = y;
    ++i;
  });
  return data;
}

void gen_sine_to_file(const SyntheticSpec& spec, const std::string& path) {
  if (spec.n < 1) throw std::invalid_argument("gen_sine_to_file: n must be >= 1");
  BinaryDatasetWriter writer(path, spec.n, 1);
  Eigen::VectorXd row(1);
  sine_rows(spec, [&](double x, double y) {
    row[0] = x;
    writer.write_row(row, y);
  });
  writer.close();
}

Dataset load_dataset(const std::string& path, int csv_dim) {
  std::unique_ptr<RowStream> stream;
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw std::invalid_argument("cannot open dataset: " + path);
    char magic[8] = {};
    probe.read(magic, 8);
    if (probe.gcount() == 8 && std::memcmp(magic, "GSGPDAT1", 8) == 0) {
      stream = std::make_unique<BinaryRowStream>(path);
    } else {
      if (csv_dim < 1) {
        throw std::invalid_argument("load_dataset: CSV input needs the dimension");
      }
      stream = std::make_unique<CsvRowStream>(path, csv_dim);
    }
  }
  const int d = stream->dim();
  std::vector<double> xs, ys;
  Eigen::VectorXd x(d);
  double y = 0.0;
  while (stream->next(x, y)) {
    for (int k = 0; k < d; ++k) xs.push_back(x[k]);
    ys.push_back(y);
  }
  Dataset data;
  const auto n = static_cast<Eigen::Index>(ys.size());
  data.x.resize(n, d);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) data.x(i, k) = xs[i * d + k];
    data.y[i] = ys[i];
  }
  return data;
}

std::vector<BenchReport> bench_mean_inference(
    const Dataset& data, const std::vector<std::vector<Eigen::Index>>& grid_sizes,
    const KernelSpec& spec, InterpScheme scheme, const BenchOptions& opts) {
  std::vector<BenchReport> reports;
  if (opts.parallel) {
    std::vector<std::future<BenchReport>> futs;
    futs.reserve(grid_sizes.size());
    for (const auto& sizes : grid_sizes) {
      futs.push_back(std::async(std::launch::async, [&, sizes] {
        return bench_mean_scenario(data, sizes, spec, scheme, opts);
      }));
    }
    for (auto& f : futs) reports.push_back(f.get());
  } else {
    for (const auto& sizes : grid_sizes) {
      reports.push_back(bench_mean_scenario(data, sizes, spec, scheme, opts));
    }
  }
  return reports;
}

BenchReport bench_loglik(const Dataset& data, const std::vector<Eigen::Index>& grid_size,
                         const KernelSpec& spec, InterpScheme scheme,
                         const BenchOptions& opts) {
  BenchReport rep;
  rep.task = "loglik";
  rep.n = data.x.rows();
  rep.d = static_cast<int>(data.x.cols());
  rep.scheme = scheme_name(scheme);
  rep.trials = opts.trials;
  rep.probes = opts.probes;
  rep.scenario = "loglik-n" + std::to_string(rep.n) + "-m" + size_label(grid_size);

  const Grid grid = scenario_grid(data, grid_size, scheme);
  rep.m = grid.num_points();
  const ToeplitzOperator kg(grid, spec);
  const double sigma = spec.hyper.noise_std;

  LoglikOptions ll;
  ll.solve_tol = opts.tol;
  ll.probes = opts.probes;
  ll.seed = opts.seed;
  ll.maxiter = opts.maxiter;

  try {
    std::vector<double> total, prep;
    for (int trial = -1; trial < opts.trials; ++trial) {
      const auto t0 = Clock::now();
      const InterpMatrix w = build_interp_matrix(grid, data.x, scheme);
      const double prep_s = seconds_since(t0);
      const LoglikResult res = log_likelihood_ski(w, data.y, kg, sigma, ll);
      if (trial < 0) {
        rep.ski.memory_scalars = memory_footprint(w, FootprintMode::SKI);
        rep.ski.iterations = res.solver_iterations;
        rep.ski.loglik = res.loglik;
        continue;
      }
      prep.push_back(prep_s);
      total.push_back(seconds_since(t0));
    }
    const MeanStd tt = summarize(total), pr = summarize(prep);
    rep.ski.total_seconds = tt.mean;
    rep.ski.per_iter_ci = tt.ci_half;
    rep.ski.prep_seconds = pr.mean;
    rep.ski.prep_ci = pr.ci_half;
    rep.ski.ok = true;
  } catch (const std::exception& e) {
    rep.ski.error = e.what();
  }

  try {
    std::vector<double> total, prep;
    for (int trial = -1; trial < opts.trials; ++trial) {
      const auto t0 = Clock::now();
      MemoryRowStream stream(data.x, data.y);
      const SufficientStats stats = sufficient_stats(grid, scheme, stream);
      const InterpMatrix w = build_interp_matrix(grid, data.x, scheme);
      const double prep_s = seconds_since(t0);
      ll.route = LogdetRoute::SkiOperator;  // factorized probes, m-cost iterations
      const LoglikResult res = log_likelihood_gsgp(stats, kg, sigma, ll, &w);
      if (trial < 0) {
        rep.gsgp.memory_scalars = memory_footprint(stats, FootprintMode::GSGP);
        rep.gsgp.iterations = res.solver_iterations;
        rep.gsgp.loglik = res.loglik;
        continue;
      }
      prep.push_back(prep_s);
      total.push_back(seconds_since(t0));
    }
    const MeanStd tt = summarize(total), pr = summarize(prep);
    rep.gsgp.total_seconds = tt.mean;
    rep.gsgp.per_iter_ci = tt.ci_half;
    rep.gsgp.prep_seconds = pr.mean;
    rep.gsgp.prep_ci = pr.ci_half;
    rep.gsgp.ok = true;
  } catch (const std::exception& e) {
    rep.gsgp.error = e.what();
  }

  if (rep.ski.ok && rep.gsgp.ok) {
    rep.solution_agreement = std::abs(rep.ski.loglik - rep.gsgp.loglik) /
                             std::max(std::abs(rep.gsgp.loglik), 1e-300);
  }
  return rep;
}

namespace {

nlohmann::json path_json(const PathMetrics& p) {
  nlohmann::json j;
  j["ok"] = p.ok;
  j["error"] = p.error;
  j["per_iter_seconds"] = p.per_iter_seconds;
  j["per_iter_ci"] = p.per_iter_ci;
  j["prep_seconds"] = p.prep_seconds;
  j["prep_ci"] = p.prep_ci;
  j["total_seconds"] = p.total_seconds;
  j["memory_scalars"] = p.memory_scalars;
  j["iterations"] = p.iterations;
  j["loglik"] = p.loglik;
  return j;
}

nlohmann::json report_json(const BenchReport& r) {
  nlohmann::json j;
  j["schema"] = 1;
  j["scenario"] = r.scenario;
  j["task"] = r.task;
  j["n"] = r.n;
  j["m"] = r.m;
  j["d"] = r.d;
  j["scheme"] = r.scheme;
  j["trials"] = r.trials;
  j["probes"] = r.probes;
  j["ski"] = path_json(r.ski);
  j["gsgp"] = path_json(r.gsgp);
  j["solution_agreement"] = r.solution_agreement;
  return j;
}

}  // namespace

std::string BenchReport::to_json() const { return report_json(*this).dump(2); }

void emit_plot_data(const std::vector<BenchReport>& reports, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ofstream fig3(fs::path(dir) / "fig3_periter.csv");
  fig3 << "n,m,path,per_iter_us,ci_us,prep_ms,mem_scalars,iters\n";
  std::ofstream fig4(fs::path(dir) / "fig4_tradeoff.csv");
  fig4 << "n,m,path,total_seconds,agreement\n";
  std::ofstream fig5(fs::path(dir) / "fig5_runtime.csv");
  fig5 << "n,m,path,probes,loglik,total_seconds\n";
  fig3.precision(6);
  fig4.precision(6);
  fig5.precision(10);

  for (const auto& r : reports) {
    const std::pair<const char*, const PathMetrics*> paths[] = {{"ski", &r.ski},
                                                                {"gsgp", &r.gsgp}};
    for (const auto& [name, p] : paths) {
      if (!p->ok) continue;
      if (r.task == "mean") {
        fig3 << r.n << "," << r.m << "," << name << "," << p->per_iter_seconds * 1e6
             << "," << p->per_iter_ci * 1e6 << "," << p->prep_seconds * 1e3 << ","
             << p->memory_scalars << "," << p->iterations << "\n";
        fig4 << r.n << "," << r.m << "," << name << "," << p->total_seconds << ","
             << r.solution_agreement << "\n";
      } else {
        fig5 << r.n << "," << r.m << "," << name << "," << r.probes << "," << p->loglik
             << "," << p->total_seconds << "\n";
      }
    }
  }

  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) all.push_back(report_json(r));
  std::ofstream jf(fs::path(dir) / "bench_report.json");
  jf << all.dump(2) << "\n";
}

}  // namespace gsgp
