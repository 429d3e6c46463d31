#include <CLI11.hpp>

#include <iostream>
#include <memory>
#include <sstream>

#include "gsgp/bench.hpp"
#include "gsgp/gp.hpp"
#include "gsgp/io.hpp"
#include "gsgp/kernels.hpp"

namespace {

using namespace gsgp;

struct KernelFlags {
  std::string preset;
  std::string config_path;
  std::string inline_hyper;  // same key=value syntax, ';' separated

  KernelSpec resolve() const {
    if (!preset.empty()) return kernel_preset(preset);
    if (!config_path.empty()) return load_kernel_config(config_path);
    if (!inline_hyper.empty()) {
      std::string text = inline_hyper;
      for (auto& c : text) {
        if (c == ';') c = '\n';
      }
      return parse_kernel_config(text);
    }
    throw std::invalid_argument(
        "no kernel given: use --kernel-preset, --kernel-config or --hyper");
  }
};

void add_kernel_flags(CLI::App* app, KernelFlags& flags) {
  app->add_option("--kernel-preset", flags.preset,
                  "named preset: sine, sound, radar, precipitation");
  app->add_option("--kernel-config", flags.config_path, "key-value config file");
  app->add_option("--hyper", flags.inline_hyper,
                  "inline config, e.g. \"noise_std=0.1;lengthscales=0.3;outputscale=1\"");
}

InterpScheme parse_scheme(const std::string& s) {
  if (s == "linear") return InterpScheme::Linear;
  if (s == "cubic") return InterpScheme::Cubic;
  throw std::invalid_argument("unknown scheme: " + s);
}

// "min:max:size[,min:max:size...]" for an explicit grid, or "auto:s1[,s2...]"
// to fit the data bounding box with scheme padding.
struct GridFlag {
  std::string text;

  bool is_auto() const { return text.rfind("auto:", 0) == 0; }

  std::vector<Eigen::Index> auto_sizes() const {
    std::vector<Eigen::Index> sizes;
    std::istringstream in(text.substr(5));
    std::string tok;
    while (std::getline(in, tok, ',')) sizes.push_back(std::stoll(tok));
    if (sizes.empty()) throw std::invalid_argument("--grid auto: needs sizes");
    return sizes;
  }

  Grid explicit_grid() const {
    std::vector<GridDim> dims;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      GridDim d;
      if (std::sscanf(tok.c_str(), "%lf:%lf:%td", &d.min, &d.max, &d.size) != 3) {
        throw std::invalid_argument("bad --grid component '" + tok +
                                    "', expected min:max:size");
      }
      dims.push_back(d);
    }
    if (dims.empty()) throw std::invalid_argument("--grid: empty specification");
    return Grid(std::move(dims));
  }

  Grid resolve(const Dataset& data, InterpScheme scheme) const {
    if (!is_auto()) return explicit_grid();
    const auto sizes = auto_sizes();
    if (static_cast<Eigen::Index>(sizes.size()) != data.x.cols()) {
      throw std::invalid_argument("--grid auto: size count must match data dimension");
    }
    const Eigen::VectorXd lo = data.x.colwise().minCoeff().transpose();
    const Eigen::VectorXd hi = data.x.colwise().maxCoeff().transpose();
    return fit_grid_to_data(lo, hi, sizes, scheme);
  }
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int run(int argc, char** argv) {
  CLI::App app{"gsgp: grid-structured Gaussian process regression"};
  app.require_subcommand(1);

  KernelFlags kernel;
  GridFlag grid_flag;
  std::string scheme_name = "cubic";
  double tol = 0.01;
  std::uint64_t seed = 0;
  int trials = 3;
  std::string format = "csv";
  app.add_option("--grid", grid_flag.text, "min:max:size,... or auto:s1,s2,...");
  add_kernel_flags(&app, kernel);
  app.add_option("--scheme", scheme_name, "linear or cubic")->default_str("cubic");
  app.add_option("--tol", tol, "relative solver tolerance")->default_val(0.01);
  app.add_option("--seed", seed, "RNG seed")->default_val(0);
  app.add_option("--trials", trials, "benchmark trials")->default_val(3);
  app.add_option("--format", format, "csv or json")->default_str("csv");

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic sine dataset");
  std::int64_t synth_n = 10000;
  double synth_noise = 0.25;
  std::string synth_out;
  synth->add_option("--n", synth_n)->default_val(10000);
  synth->add_option("--noise-var", synth_noise)->default_val(0.25);
  synth->add_option("--out", synth_out)->required();

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "one-pass sufficient statistics");
  std::string stats_data, stats_out;
  int stats_dim = -1;
  stats_cmd->add_option("--data", stats_data)->required();
  stats_cmd->add_option("--d", stats_dim, "coordinate dimension (CSV input)");
  stats_cmd->add_option("--out", stats_out)->required();

  // fit-mean
  auto* fit = app.add_subcommand("fit-mean", "fit the posterior mean");
  std::string fit_stats, fit_data, fit_out, fit_path = "gsgp";
  int fit_dim = -1;
  fit->add_option("--stats", fit_stats, "precomputed statistics file");
  fit->add_option("--data", fit_data, "dataset (needed for --path ski)");
  fit->add_option("--d", fit_dim);
  fit->add_option("--path", fit_path, "gsgp or ski")->default_str("gsgp");
  fit->add_option("--out", fit_out)->required();

  // cov
  auto* cov_cmd = app.add_subcommand("cov", "posterior covariance at test points");
  std::string cov_model, cov_stats, cov_points, cov_out;
  Eigen::Index cov_rank = -1;
  cov_cmd->add_option("--model", cov_model)->required();
  cov_cmd->add_option("--stats", cov_stats)->required();
  cov_cmd->add_option("--points", cov_points)->required();
  cov_cmd->add_option("--rank", cov_rank, "rank-k approximation; exact solves if unset");
  cov_cmd->add_option("--out", cov_out)->required();

  // loglik
  auto* ll_cmd = app.add_subcommand("loglik", "log likelihood of the data");
  std::string ll_stats, ll_data, ll_route = "auto";
  int ll_dim = -1, ll_probes = 30;
  ll_cmd->add_option("--stats", ll_stats)->required();
  ll_cmd->add_option("--data", ll_data, "dataset (enables the ski logdet route)");
  ll_cmd->add_option("--d", ll_dim);
  ll_cmd->add_option("--probes", ll_probes)->default_val(30);
  ll_cmd->add_option("--route", ll_route, "auto, sym, ski or dense")->default_str("auto");

  // exact
  auto* exact_cmd = app.add_subcommand("exact", "dense exact-GP oracle");
  std::string exact_data, exact_points;
  int exact_dim = -1;
  exact_cmd->add_option("--data", exact_data)->required();
  exact_cmd->add_option("--d", exact_dim);
  exact_cmd->add_option("--points", exact_points)->required();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "SKI vs GSGP benchmark sweep");
  std::string bench_task = "mean", bench_data, bench_m, bench_out_dir = "bench_out";
  std::int64_t bench_synth_n = 0;
  int bench_dim = -1, bench_probes = 30;
  bool bench_parallel = false;
  bench_cmd->add_option("--task", bench_task, "mean or loglik")->default_str("mean");
  bench_cmd->add_option("--data", bench_data, "dataset file; omit to use --synth-n");
  bench_cmd->add_option("--d", bench_dim);
  bench_cmd->add_option("--synth-n", bench_synth_n, "generate a sine dataset of this size");
  bench_cmd->add_option("--m", bench_m, "scenario grid sizes, e.g. \"1024;4096\" or \"64,64;128,128\"")
      ->required();
  bench_cmd->add_option("--probes", bench_probes)->default_val(30);
  bench_cmd->add_option("--out-dir", bench_out_dir)->default_str("bench_out");
  bench_cmd->add_flag("--parallel", bench_parallel, "run scenarios concurrently");

  CLI11_PARSE(app, argc, argv);
  const InterpScheme scheme = parse_scheme(scheme_name);

  if (synth->parsed()) {
    SyntheticSpec spec{synth_n, synth_noise, 0, seed};
    if (ends_with(synth_out, ".csv")) {
      const Dataset data = gen_sine(spec);
      write_dataset_csv(synth_out, data.x, data.y);
    } else {
      gen_sine_to_file(spec, synth_out);
    }
    std::cout << "wrote " << synth_n << " rows to " << synth_out << "\n";
    return 0;
  }

  if (stats_cmd->parsed()) {
    auto make_stream = [&]() -> std::unique_ptr<RowStream> {
      if (ends_with(stats_data, ".csv")) {
        if (stats_dim < 1) throw std::invalid_argument("stats: CSV input needs --d");
        return std::make_unique<CsvRowStream>(stats_data, stats_dim);
      }
      return std::make_unique<BinaryRowStream>(stats_data);
    };
    Grid grid = [&] {
      if (grid_flag.text.empty()) throw std::invalid_argument("stats: --grid is required");
      if (!grid_flag.is_auto()) return grid_flag.explicit_grid();
      // auto grid: one extra streaming pass for the bounding box
      auto probe = make_stream();
      const int d = probe->dim();
      Eigen::VectorXd lo = Eigen::VectorXd::Constant(d, 1e300);
      Eigen::VectorXd hi = Eigen::VectorXd::Constant(d, -1e300);
      Eigen::VectorXd x(d);
      double y = 0.0;
      while (probe->next(x, y)) {
        lo = lo.cwiseMin(x);
        hi = hi.cwiseMax(x);
      }
      return fit_grid_to_data(lo, hi, grid_flag.auto_sizes(), scheme);
    }();
    auto stream = make_stream();
    const SufficientStats stats = sufficient_stats(grid, scheme, *stream);
    save_stats(stats_out, stats, grid, scheme);
    std::cout << "n=" << stats.n() << " m=" << stats.grid_size()
              << " nnz(WtW)=" << stats.wtw().nonZeros()
              << " gsgp_memory_scalars=" << memory_footprint(stats, FootprintMode::GSGP)
              << "\n";
    return 0;
  }

  if (fit->parsed()) {
    const KernelSpec spec = kernel.resolve();
    const double sigma = spec.hyper.noise_std;
    if (fit_path == "gsgp") {
      if (fit_stats.empty()) throw std::invalid_argument("fit-mean --path gsgp needs --stats");
      StatsFile sf = load_stats(fit_stats);
      auto kg = std::make_shared<ToeplitzOperator>(sf.grid, spec);
      auto stats = std::make_shared<SufficientStats>(std::move(sf.stats));
      const PosteriorModel model =
          posterior_mean_gsgp(stats, kg, spec, sf.scheme, sigma, tol);
      save_model(fit_out, model);
      std::cout << "fit gsgp: iterations=" << model.solve_iterations << "\n";
    } else if (fit_path == "ski") {
      if (fit_data.empty()) throw std::invalid_argument("fit-mean --path ski needs --data");
      const Dataset data = load_dataset(fit_data, fit_dim);
      const Grid grid = grid_flag.resolve(data, scheme);
      auto kg = std::make_shared<ToeplitzOperator>(grid, spec);
      const InterpMatrix w = build_interp_matrix(grid, data.x, scheme);
      const PosteriorModel model =
          posterior_mean_ski(w, data.y, kg, spec, scheme, sigma, tol);
      save_model(fit_out, model);
      std::cout << "fit ski: iterations=" << model.solve_iterations << "\n";
    } else {
      throw std::invalid_argument("fit-mean: --path must be gsgp or ski");
    }
    return 0;
  }

  if (cov_cmd->parsed()) {
    auto [model, lowrank] = load_model(cov_model);
    StatsFile sf = load_stats(cov_stats);
    if (sf.grid.num_points() != model.kg->dim()) {
      throw std::invalid_argument("cov: statistics grid does not match the model");
    }
    model.stats = std::make_shared<SufficientStats>(std::move(sf.stats));
    const Eigen::MatrixXd pts = read_points_csv(cov_points, model.grid().dim());
    Eigen::MatrixXd cov;
    if (cov_rank >= 0) {
      cov = posterior_cov_lowrank(model, cov_rank).cov_matrix(pts);
    } else {
      const CovResult res = posterior_cov_exact(model, pts, tol);
      cov = res.cov;
      std::cerr << "max asymmetry before symmetrization: " << res.max_asymmetry << "\n";
    }
    std::ofstream out(cov_out);
    out.precision(17);
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
      for (Eigen::Index j = 0; j < cov.cols(); ++j) {
        out << cov(i, j) << (j + 1 < cov.cols() ? "," : "\n");
      }
    }
    std::cout << "wrote " << cov.rows() << "x" << cov.cols() << " covariance to "
              << cov_out << "\n";
    return 0;
  }

  if (ll_cmd->parsed()) {
    const KernelSpec spec = kernel.resolve();
    StatsFile sf = load_stats(ll_stats);
    const ToeplitzOperator kg(sf.grid, spec);
    LoglikOptions opts;
    opts.solve_tol = tol;
    opts.probes = ll_probes;
    opts.seed = seed;
    if (ll_route == "sym") {
      opts.route = LogdetRoute::SymmetricGrid;
    } else if (ll_route == "ski") {
      opts.route = LogdetRoute::SkiOperator;
    } else if (ll_route == "dense") {
      opts.route = LogdetRoute::Dense;
    } else if (ll_route != "auto") {
      throw std::invalid_argument("loglik: unknown --route " + ll_route);
    }
    std::unique_ptr<InterpMatrix> w;
    if (!ll_data.empty()) {
      const Dataset data = load_dataset(ll_data, ll_dim);
      w = std::make_unique<InterpMatrix>(
          build_interp_matrix(sf.grid, data.x, sf.scheme));
    }
    const LoglikResult res = log_likelihood_gsgp(sf.stats, kg, spec.hyper.noise_std,
                                                 opts, w.get());
    if (format == "json") {
      std::cout << res.to_json() << "\n";
    } else {
      std::cout << "loglik=" << res.loglik << " logdet=" << res.logdet_term
                << " quad=" << res.quad_term << " const=" << res.const_term
                << " route=" << res.logdet_route << "\n";
    }
    return 0;
  }

  if (exact_cmd->parsed()) {
    const KernelSpec spec = kernel.resolve();
    const Dataset data = load_dataset(exact_data, exact_dim);
    const ExactGp gp = exact_gp_reference(data.x, data.y, spec, spec.hyper.noise_std);
    const Eigen::MatrixXd pts = read_points_csv(exact_points,
                                                static_cast<int>(data.x.cols()));
    const Eigen::VectorXd mean = gp.mean(pts);
    std::cout.precision(12);
    std::cout << "loglik=" << gp.loglik() << "\n";
    for (Eigen::Index i = 0; i < mean.size(); ++i) std::cout << mean[i] << "\n";
    return 0;
  }

  if (bench_cmd->parsed()) {
    const KernelSpec spec = kernel.resolve();
    Dataset data;
    if (!bench_data.empty()) {
      data = load_dataset(bench_data, bench_dim);
    } else if (bench_synth_n > 0) {
      data = gen_sine({bench_synth_n, 0.25, 0, seed});
    } else {
      throw std::invalid_argument("bench: give --data or --synth-n");
    }
    std::vector<std::vector<Eigen::Index>> scenarios;
    std::istringstream in(bench_m);
    std::string group;
    while (std::getline(in, group, ';')) {
      std::vector<Eigen::Index> sizes;
      std::istringstream gin(group);
      std::string tok;
      while (std::getline(gin, tok, ',')) sizes.push_back(std::stoll(tok));
      if (!sizes.empty()) scenarios.push_back(std::move(sizes));
    }
    BenchOptions opts;
    opts.tol = tol;
    opts.trials = trials;
    opts.probes = bench_probes;
    opts.seed = seed;
    opts.parallel = bench_parallel;
    std::vector<BenchReport> reports;
    if (bench_task == "mean") {
      reports = bench_mean_inference(data, scenarios, spec, scheme, opts);
    } else if (bench_task == "loglik") {
      for (const auto& sizes : scenarios) {
        reports.push_back(bench_loglik(data, sizes, spec, scheme, opts));
      }
    } else {
      throw std::invalid_argument("bench: --task must be mean or loglik");
    }
    emit_plot_data(reports, bench_out_dir);
    for (const auto& r : reports) {
      std::cout << r.scenario << ": ski_ok=" << r.ski.ok << " gsgp_ok=" << r.gsgp.ok
                << " agreement=" << r.solution_agreement << "\n";
    }
    std::cout << "plot data written to " << bench_out_dir << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gsgp::SolverNonConvergence& e) {
    std::cerr << "solver did not converge: " << e.what()
              << " (residual_sq=" << e.residual_sq << ", iterations=" << e.iterations
              << ")\n";
    return 2;
  } catch (const gsgp::SolverBreakdown& e) {
    std::cerr << "solver breakdown: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
