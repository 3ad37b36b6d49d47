#include "aman/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aman {

namespace {

Real eval_loss(const LossFn& f, const ModelParams& params) {
  Graph g(/*no_grad=*/true);
  Var loss = f(g, params);
  if (!loss.value().is_scalar()) throw ContractError("finite_diff_check: loss must be scalar");
  return loss.value()[0];
}

}  // namespace

GradCheckResult finite_diff_check(const LossFn& f, const ModelParams& params,
                                  const GradCheckOptions& opts) {
  Gradients analytic;
  {
    Graph g;
    Var loss = f(g, params);
    g.backward(loss);
    analytic = g.param_grads();
  }

  GradCheckResult result;
  ModelParams probe = params;
  Rng rng(opts.seed);
  for (auto& [name, tensor] : probe) {
    std::vector<std::size_t> coords(tensor.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_param > 0 && coords.size() > opts.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    const bool bound = analytic.contains(name);
    for (auto i : coords) {
      const Real orig = tensor[i];
      tensor[i] = orig + opts.eps;
      const Real up = eval_loss(f, probe);
      tensor[i] = orig - opts.eps;
      const Real down = eval_loss(f, probe);
      tensor[i] = orig;
      const Real numeric = (up - down) / (2.0 * opts.eps);
      const Real a = (bound ? analytic.at(name)[i] : 0.0) + opts.corrupt_analytic;
      const Real err = std::abs(a - numeric) / std::max<Real>(1.0, std::abs(numeric));
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = name;
          result.worst_index = i;
        }
      }
    }
  }
  return result;
}

}  // namespace aman
