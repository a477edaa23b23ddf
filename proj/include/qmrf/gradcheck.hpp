#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qmrf/tensor.hpp"

namespace qmrf::ad {

struct GradcheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t n_checked = 0;
  bool passed(double tol = 1e-4) const { return max_rel_err <= tol; }
};

/// Compares reverse-mode gradients of L = <w, f(inputs)> against central
/// differences for every input that requires grad. w is a fixed random weight
/// tensor (seeded) unless f already returns a scalar. Error per element is
/// |ad - fd| / (|fd| + 1e-8). At most `max_per_input` elements of each input
/// are probed (evenly strided); 0 probes all.
GradcheckResult gradcheck(const std::string& name,
                          const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs, double h = 1e-5, std::uint64_t seed = 0,
                          std::size_t max_per_input = 0);

/// As above, but each element's error is the smallest over the step sizes in `steps`.
/// For piecewise-smooth functions (relu) a single step can straddle a kink or drown in
/// roundoff; a correct gradient agrees at some step, a wrong one at none.
GradcheckResult gradcheck_steps(const std::string& name,
                                const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> inputs, const std::vector<double>& steps,
                                std::uint64_t seed = 0, std::size_t max_per_input = 0);

/// Runs gradcheck on every differentiable primitive over `instances` random
/// small problems each; one result per op (worst instance).
std::vector<GradcheckResult> op_gradcheck_suite(std::uint64_t seed, std::size_t instances = 5);

}  // namespace qmrf::ad
