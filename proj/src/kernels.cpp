#include "gsgp/kernels.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gsgp {

namespace {

void validate(const Hyperparams& h) {
  if (!(h.noise_std > 0.0)) {
    throw std::invalid_argument("Hyperparams: noise_std must be positive");
  }
  if (h.lengthscales.size() == 0) {
    throw std::invalid_argument("Hyperparams: need at least one lengthscale");
  }
  for (Eigen::Index i = 0; i < h.lengthscales.size(); ++i) {
    if (!(h.lengthscales[i] > 0.0)) {
      throw std::invalid_argument("Hyperparams: lengthscales must be positive");
    }
  }
  if (!(h.outputscale > 0.0)) {
    throw std::invalid_argument("Hyperparams: outputscale must be positive");
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Hyperparams::Hyperparams(double noise, Eigen::VectorXd ls, double outscale)
    : noise_std(noise), lengthscales(std::move(ls)), outputscale(outscale) {
  validate(*this);
}

double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& x2) {
  const auto& h = spec.hyper;
  if (x.size() != x2.size() || x.size() != h.lengthscales.size()) {
    throw std::invalid_argument("eval_kernel: dimension mismatch");
  }
  double q = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = (x[i] - x2[i]) / h.lengthscales[i];
    q += d * d;
  }
  return h.outputscale * std::exp(-0.5 * q);
}

KernelSpec kernel_preset(const std::string& name) {
  auto vec = [](std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out[i++] = d;
    return out;
  };
  if (name == "sine") return KernelSpec(Hyperparams(0.074, vec({0.312}), 1.439));
  if (name == "sound") return KernelSpec(Hyperparams(0.009, vec({10.895}), 0.002));
  if (name == "radar") {
    return KernelSpec(Hyperparams(50.0, vec({0.250, 0.250, 200.0}), 3.500));
  }
  if (name == "precipitation") {
    return KernelSpec(Hyperparams(3.990, vec({3.094, 2.030, 0.189}), 2.786));
  }
  throw std::invalid_argument("unknown kernel preset: " + name);
}

KernelSpec parse_kernel_config(const std::string& text) {
  double noise = -1.0, outscale = -1.0;
  std::vector<double> ls;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("kernel config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "noise_std") {
        noise = std::stod(val);
      } else if (key == "outputscale") {
        outscale = std::stod(val);
      } else if (key == "lengthscales") {
        ls.clear();
        std::istringstream vs(val);
        std::string tok;
        while (std::getline(vs, tok, ',')) ls.push_back(std::stod(trim(tok)));
      } else {
        throw std::invalid_argument("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("kernel config line " + std::to_string(lineno) +
                                  ": malformed value '" + val + "'");
    }
  }
  if (noise < 0 || outscale < 0 || ls.empty()) {
    throw std::invalid_argument(
        "kernel config: noise_std, lengthscales and outputscale are all required");
  }
  Eigen::VectorXd lsv = Eigen::Map<Eigen::VectorXd>(ls.data(), ls.size());
  return KernelSpec(Hyperparams(noise, lsv, outscale));
}

KernelSpec load_kernel_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open kernel config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_kernel_config(ss.str());
}

}  // namespace gsgp
