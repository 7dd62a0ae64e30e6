#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "capkit/tensor.hpp"

namespace capkit {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "param[i]" of the worst coordinate

  bool ok(double tol) const { return max_rel_err < tol; }
};

namespace detail {

// Relative error with an absolute floor: tiny true gradients would otherwise
// turn finite-difference roundoff into spurious huge ratios.
inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

}  // namespace detail

// Central finite differences against reverse-mode gradients for a scalar
// function of several named parameter tensors. `make_loss` must rebuild the
// graph from the live parameter values on every call.
template <typename T>
GradCheckReport grad_check_params(const std::function<Tensor<T>()>& make_loss,
                                  const std::vector<std::pair<std::string, Tensor<T>>>& params,
                                  T h = T(1e-5)) {
  for (const auto& [name, p] : params) {
    Tensor<T> t = p;
    t.zero_grad();
  }
  Tensor<T> loss = make_loss();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    analytic.push_back(p.grad().empty() ? std::vector<T>(p.size(), T(0)) : p.grad());
  }

  GradCheckReport report;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T> p = params[pi].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p.values()[i];
      p.values()[i] = saved + h;
      const double f_plus = static_cast<double>(make_loss().item());
      p.values()[i] = saved - h;
      const double f_minus = static_cast<double>(make_loss().item());
      p.values()[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
      const double err = detail::rel_err(static_cast<double>(analytic[pi][i]), fd);
      ++report.coords_checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst = params[pi].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

// Single-input form: f maps one tensor to a scalar.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                           T h = T(1e-5)) {
  x.set_requires_grad(true);
  return grad_check_params<T>([&]() { return f(x); }, {{"x", x}}, h);
}

}  // namespace capkit
