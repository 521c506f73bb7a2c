#include "jointseq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "jointseq/error.hpp"
#include "jointseq/rng.hpp"

namespace jointseq {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradient(std::vector<Tensor*> params,
                               const std::vector<std::string>& names,
                               const std::vector<Tensor>& analytic,
                               const std::function<double()>& loss,
                               const GradCheckOptions& options) {
  if (params.size() != analytic.size() || params.size() != names.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradcheck: parameter/gradient count");
  }
  std::mt19937_64 rng(options.seed);

  // Candidate coordinates per tensor.
  std::vector<std::vector<std::size_t>> pools(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    require_shape(analytic[p], params[p]->shape(), "gradcheck gradient");
    // Non-zero analytic coordinates first, then the zero ones, so a missing
    // gradient is still caught when a tensor is sampled deeply enough.
    std::vector<std::size_t> zeros;
    for (std::size_t i = 0; i < analytic[p].size(); ++i) {
      (analytic[p][i] != 0.0 ? pools[p] : zeros).push_back(i);
    }
    shuffle_in_place(pools[p], rng);
    shuffle_in_place(zeros, rng);
    pools[p].insert(pools[p].end(), zeros.begin(), zeros.end());
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t round = 0; coords.size() < options.n_coords; ++round) {
    bool any = false;
    for (std::size_t p = 0; p < params.size() && coords.size() < options.n_coords; ++p) {
      if (round < pools[p].size()) {
        coords.emplace_back(p, pools[p][round]);
        any = true;
      }
    }
    if (!any) break;
  }

  GradCheckResult res;
  for (auto [p, i] : coords) {
    double& x = (*params[p])[i];
    const double saved = x;
    x = saved + options.h;
    const double up = loss();
    x = saved - options.h;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * options.h);
    const double a = analytic[p][i] + options.corrupt;
    const double err = relative_error(a, numeric, options.floor);
    ++res.n_checked;
    if (err > res.max_rel_error || res.n_checked == 1) {
      res.max_rel_error = err;
      res.worst = names[p] + "[" + std::to_string(i) + "]";
    }
  }
  return res;
}

GradCheckResult grad_check(ModelParams& params, const EncoderInput& input,
                           const TokenSeq& target, double label_smoothing,
                           const GradCheckOptions& options) {
  const TokenSeq dec_in = decoder_input_for(target);
  Gradients grads = Gradients::zeros_like(params);
  {
    ForwardPass pass(params, ForwardOptions{});
    forward(pass, input, dec_in);
    pass.backward(pass.loss(target, label_smoothing), grads);
  }

  std::vector<Tensor*> ptrs;
  std::vector<std::string> names;
  for (std::size_t s = 0; s < params.size(); ++s) {
    ptrs.push_back(&params.mutable_tensor(s));
    names.push_back(params.name(s));
  }
  auto loss = [&]() {
    ForwardPass pass(params, ForwardOptions::inference());
    forward(pass, input, dec_in);
    return pass.tape().value(pass.loss(target, label_smoothing)).item();
  };
  GradCheckResult res = check_gradient(ptrs, names, grads.tensors, loss, options);
  params.touch();
  return res;
}

}  // namespace jointseq
