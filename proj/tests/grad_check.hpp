#pragma once

// Central finite differences against autograd on a few entries of every
// parameter. The module should already be in double precision.

#include <torch/torch.h>

#include <algorithm>
#include <functional>
#include <string>

struct GradCheckReport
{
  int64_t checked = 0;
  double worst_rel = 0.0;
  std::string worst_name;
};

inline GradCheckReport check_parameter_gradients(torch::nn::Module &module, std::function<torch::Tensor()> const &loss,
                                                 int per_param, double step = 1e-5, double floor = 1e-5)
{
  for (auto &p : module.parameters()) { p.mutable_grad() = torch::Tensor(); }
  loss().backward();
  GradCheckReport report;
  torch::NoGradGuard no_grad;
  for (auto const &item : module.named_parameters()) {
    auto p = item.value();
    if (!p.grad().defined()) { continue; }
    auto flat = p.view(-1);
    auto const grad = p.grad().reshape(-1);
    int64_t const n = flat.numel();
    for (int k = 0; k < per_param && k < n; ++k) {
      // Spread the probes over the tensor: first, last, then evenly between.
      int64_t const idx = per_param == 1 ? 0 : (n - 1) * k / (per_param - 1);
      double const orig = flat[idx].item<double>();
      flat[idx] = orig + step;
      double const up = loss().item<double>();
      flat[idx] = orig - step;
      double const down = loss().item<double>();
      flat[idx] = orig;
      double const numeric = (up - down) / (2.0 * step);
      double const analytic = grad[idx].item<double>();
      double const rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), floor});
      ++report.checked;
      if (rel > report.worst_rel) {
        report.worst_rel = rel;
        report.worst_name = item.key() + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return report;
}
