#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "olvit/tensor.hpp"

namespace olvit {

struct ParamCheck {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

// |a - b| / max(|a|, |b|, floor); the floor keeps vanishing gradients from
// turning round-off into huge relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct NamedTensor {
  std::string name;
  Tensor<double> tensor;
};

// Compares tape gradients against central differences for every entry of
// every listed tensor. `loss_fn` must rebuild the graph on each call and must
// not depend on any state mutated between calls.
inline GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss_fn,
                                       std::vector<NamedTensor> inputs, double h = 1e-5,
                                       double tolerance = 1e-4) {
  for (auto& in : inputs) {
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    tape.backward(loss);
  }
  GradCheckReport report;
  for (auto& in : inputs) {
    ParamCheck pc;
    pc.name = in.name;
    pc.entries = in.tensor.numel();
    auto values = in.tensor.mutable_data();
    const auto grad = in.tensor.has_grad() ? std::vector<double>(in.tensor.grad().begin(), in.tensor.grad().end())
                                           : std::vector<double>(in.tensor.numel(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradScope<double> ng;
        values[i] = saved + h;
        plus = loss_fn().item();
        values[i] = saved - h;
        minus = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      pc.max_rel_error = std::max(pc.max_rel_error, relative_error(grad[i], numeric));
    }
    pc.passed = pc.max_rel_error <= tolerance;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.passed = report.passed && pc.passed;
    report.params.push_back(pc);
  }
  return report;
}

}  // namespace olvit
