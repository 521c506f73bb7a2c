#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jointseq/model.hpp"

namespace jointseq {

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t n_coords = 200;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error.
  double floor = 1e-5;
  // Fault injection for the negative control: adds this much to the analytic
  // gradient of every checked coordinate.
  double corrupt = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
  std::string worst;  // "name[index]" of the worst coordinate
};

double relative_error(double analytic, double numeric, double floor);

// Central differences of `loss` with respect to the scalars of `params`,
// compared against `analytic`. Coordinates are stratified: round robin over
// tensors, preferring coordinates whose analytic gradient is non-zero.
GradCheckResult check_gradient(std::vector<Tensor*> params,
                               const std::vector<std::string>& names,
                               const std::vector<Tensor>& analytic,
                               const std::function<double()>& loss,
                               const GradCheckOptions& options);

// Full-model check of the smoothed cross-entropy on one sample, eval mode.
GradCheckResult grad_check(ModelParams& params, const EncoderInput& input,
                           const TokenSeq& target, double label_smoothing,
                           const GradCheckOptions& options);

}  // namespace jointseq
