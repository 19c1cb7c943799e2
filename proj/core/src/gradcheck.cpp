#include "dsanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dsanet/errors.hpp"

namespace dsanet {

namespace {

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::string location(const std::string& param, std::size_t i) {
  std::ostringstream os;
  os << param << '[' << i << ']';
  return os.str();
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Var()>& f, const NamedParams& params,
                                  const GradCheckOptions& options, std::string name) {
  if (options.eps <= 0.0) throw ArgumentError("finite_diff_check: eps must be positive");
  GradCheckReport report;
  report.name = std::move(name);

  for (const auto& [pname, p] : params) const_cast<Var&>(p).zero_grad();
  Var loss = f();
  if (loss.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  const double f0 = loss.item();
  if (!std::isfinite(f0)) {
    report.nonfinite = true;
    report.nonfinite_location = "f(x)";
    return report;
  }
  loss.backward();

  std::mt19937_64 rng(options.seed);
  auto eval = [&]() {
    NoGradGuard guard;
    return f().item();
  };

  const double eps = options.eps;
  const double h = eps / 2.0;
  for (const auto& [pname, pc] : params) {
    Var p = pc;
    const Tensor analytic = p.grad();
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      double& x = p.mutable_value()[i];
      const double x0 = x;
      auto at = [&](double delta) {
        x = x0 + delta;
        const double v = eval();
        x = x0;
        return v;
      };
      const double fp = at(eps);
      const double fm = at(-eps);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.nonfinite = true;
        report.nonfinite_location = location(pname, i);
        report.passed = false;
        return report;
      }
      const double a = analytic[i];
      const double cd = (fp - fm) / (2.0 * eps);
      double err = rel_err(a, cd, options.floor);
      if (err > options.tol) {
        const double fhp = at(h);
        const double fhm = at(-h);
        const double fqp = at(h / 2.0);
        const double fqm = at(-h / 2.0);
        const double cdh = (fhp - fhm) / (2.0 * h);
        // (fd - bd) scales linearly with the step for smooth f; a kink breaks that.
        // Two step ratios: with only one, a kink a third of the way out cancels.
        const double curv_e = (fp - 2.0 * f0 + fm) / eps;
        const double curv_h = (fhp - 2.0 * f0 + fhm) / h;
        const double curv_q = (fqp - 2.0 * f0 + fqm) / (h / 2.0);
        const double residual = std::max(std::abs(curv_e - 2.0 * curv_h), std::abs(curv_h - 2.0 * curv_q));
        const double scale = std::max({std::abs(a), std::abs(cd), options.floor});
        if (residual > options.tol * scale) {
          ++report.skipped_nonsmooth;
          if (report.skipped_locations.size() < 8) report.skipped_locations.push_back(location(pname, i));
          continue;
        }
        const double rich = (4.0 * cdh - cd) / 3.0;
        err = std::min(err, rel_err(a, rich, options.floor));
      }
      ++report.checked;
      if (err > report.max_rel_error || report.worst_location.empty()) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_location = location(pname, i);
        }
      }
    }
  }
  report.passed = !report.nonfinite && report.checked > 0 && report.max_rel_error <= options.tol;
  return report;
}

}  // namespace dsanet
