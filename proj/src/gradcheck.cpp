#include "qmrf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <random>

#include <Eigen/QR>

#include "qmrf/acquisition.hpp"

namespace qmrf::ad {

GradcheckResult gradcheck_steps(const std::string& name,
                                const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> inputs, const std::vector<double>& steps,
                                std::uint64_t seed, std::size_t max_per_input) {
  if (steps.empty()) throw std::invalid_argument("gradcheck: no step sizes");
  Tensor probe = f(inputs);
  std::vector<double> w;
  if (probe.numel() != 1) {
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::normal_distribution<double> N(0.0, 1.0);
    w.resize(probe.numel());
    for (auto& v : w) v = N(rng);
  }
  auto loss = [&](const std::vector<Tensor>& in) {
    Tensor out = f(in);
    if (w.empty()) return out;
    return sum(mul(out, Tensor::from(out.shape(), w)));
  };
  for (auto& x : inputs)
    if (x.requires_grad()) x.clear_grad();
  Tensor L = loss(inputs);
  L.backward();

  GradcheckResult r;
  r.name = name;
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    const std::vector<double> g = x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                               : std::vector<double>(x.numel(), 0.0);
    const std::size_t n = x.numel();
    const std::size_t stride = max_per_input == 0 || n <= max_per_input ? 1 : n / max_per_input;
    for (std::size_t i = 0; i < n; i += stride) {
      auto vals = x.mutable_values();
      const double orig = vals[i];
      double err = std::numeric_limits<double>::infinity();
      for (double h : steps) {
        vals[i] = orig + h;
        const double fp = loss(inputs).item();
        vals[i] = orig - h;
        const double fm = loss(inputs).item();
        vals[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        err = std::min(err, std::abs(g[i] - fd) / (std::abs(fd) + 1e-8));
      }
      r.max_rel_err = std::max(r.max_rel_err, err);
      ++r.n_checked;
    }
  }
  return r;
}

GradcheckResult gradcheck(const std::string& name,
                          const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> inputs, double h, std::uint64_t seed,
                          std::size_t max_per_input) {
  return gradcheck_steps(name, f, std::move(inputs), {h}, seed, max_per_input);
}

namespace {

struct Rng {
  std::mt19937_64 g;
  explicit Rng(std::uint64_t s) : g(s) {}
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(g); }
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(g); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(g); }
  Tensor tensor(Shape s, bool grad = true) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = normal();
    return Tensor::from(std::move(s), std::move(v), grad);
  }
  // Values bounded away from zero so kinks (relu) are never straddled by ±h.
  Tensor tensor_off_zero(Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) {
      x = normal();
      if (std::abs(x) < 0.05) x = x < 0 ? -0.05 - std::abs(x) : 0.05 + x;
    }
    return Tensor::from(std::move(s), std::move(v), true);
  }
};

void keep_worst(GradcheckResult& acc, const GradcheckResult& r) {
  acc.max_rel_err = std::max(acc.max_rel_err, r.max_rel_err);
  acc.n_checked += r.n_checked;
}

}  // namespace

std::vector<GradcheckResult> op_gradcheck_suite(std::uint64_t seed, std::size_t instances) {
  Rng rng(seed);
  std::vector<GradcheckResult> out;
  auto run = [&](const std::string& name, auto&& make_case) {
    GradcheckResult acc;
    acc.name = name;
    for (std::size_t k = 0; k < instances; ++k) {
      auto [f, inputs] = make_case();
      keep_worst(acc, gradcheck(name, f, inputs, 1e-5, seed + k));
    }
    out.push_back(acc);
  };
  using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
  using Case = std::pair<Fn, std::vector<Tensor>>;

  run("conv2d", [&]() -> Case {
    const std::size_t k = rng.index(2) == 0 ? 3 : 1;
    const std::size_t N = 1 + rng.index(2), Ci = 1 + rng.index(3), Co = 1 + rng.index(4);
    const std::size_t H = 3 + rng.index(4), W = 3 + rng.index(4);
    return {[](const std::vector<Tensor>& a) { return conv2d(a[0], a[1], a[2]); },
            {rng.tensor({N, Ci, H, W}), rng.tensor({Co, Ci, k, k}), rng.tensor({Co})}};
  });
  run("relu", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return relu(a[0]); }, {rng.tensor_off_zero({2, 3, 4, 4})}};
  });
  run("add", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return add(a[0], a[1]); },
            {rng.tensor({2, 3, 4}), rng.tensor({2, 3, 4})}};
  });
  run("sub", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return sub(a[0], a[1]); },
            {rng.tensor({2, 3, 4}), rng.tensor({2, 3, 4})}};
  });
  run("scale", [&]() -> Case {
    const double s = rng.normal();
    return {[s](const std::vector<Tensor>& a) { return scale(a[0], s); }, {rng.tensor({5, 3})}};
  });
  run("add_scalar", [&]() -> Case {
    const double s = rng.normal();
    return {[s](const std::vector<Tensor>& a) { return add_scalar(a[0], s); }, {rng.tensor({5, 3})}};
  });
  run("mul", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return mul(a[0], a[1]); },
            {rng.tensor({2, 3, 4}), rng.tensor({2, 3, 4})}};
  });
  run("reshape", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return mul(reshape(a[0], {6, 4}), reshape(a[0], {6, 4})); },
            {rng.tensor({2, 3, 4})}};
  });
  run("concat_channels", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return concat_channels({a[0], a[1], a[0]}); },
            {rng.tensor({2, 1, 3, 3}), rng.tensor({2, 2, 3, 3})}};
  });
  run("concat_batch", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return concat_batch({a[0], a[1], a[0]}); },
            {rng.tensor({1, 2, 3, 3}), rng.tensor({2, 2, 3, 3})}};
  });
  run("slice_batch", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return slice_batch(a[0], 1, 2); }, {rng.tensor({4, 2, 3, 3})}};
  });
  run("slice_channels", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return slice_channels(a[0], 1, 2); }, {rng.tensor({2, 4, 3, 3})}};
  });
  run("mul_channel_broadcast", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return mul_channel_broadcast(a[0], a[1]); },
            {rng.tensor({2, 3, 4, 4}), rng.tensor({2, 1, 4, 4})}};
  });
  run("avgpool2", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return avgpool2(a[0]); }, {rng.tensor({2, 2, 4, 6})}};
  });
  run("upsample2_nearest", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return upsample2_nearest(a[0]); }, {rng.tensor({2, 2, 3, 2})}};
  });
  run("permute_pixels", [&]() -> Case {
    std::vector<std::size_t> perm(16);
    for (std::size_t i = 0; i < 16; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng.g);
    return {[perm](const std::vector<Tensor>& a) { return permute_pixels(a[0], perm); },
            {rng.tensor({2, 3, 4, 4})}};
  });
  run("gather_pixels", [&]() -> Case {
    std::vector<std::size_t> idx{0, 5, 17, 31, 12, 2};
    return {[idx](const std::vector<Tensor>& a) { return gather_pixels(a[0], idx); }, {rng.tensor({2, 3, 4, 4})}};
  });
  run("scatter_pixels", [&]() -> Case {
    std::vector<std::size_t> idx{0, 5, 17, 31, 12, 2};
    return {[idx](const std::vector<Tensor>& a) { return scatter_pixels(a[0], idx, 2, 4, 4); },
            {rng.tensor({1, 3, 1, 6})}};
  });
  run("log_floor", [&]() -> Case {
    // Mix of values above the floor and (continued) values below it, away from the junction.
    std::vector<double> v(24);
    for (auto& x : v) x = rng.index(3) == 0 ? rng.uniform(-0.5, 5e-4) : rng.uniform(2e-3, 5.0);
    return {[](const std::vector<Tensor>& a) { return log_floor(a[0], 1e-3); }, {Tensor::from({24}, v, true)}};
  });
  run("mse_loss", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return mse_loss(a[0], a[1]); },
            {rng.tensor({3, 5}), rng.tensor({3, 5})}};
  });
  run("sum", [&]() -> Case {
    return {[](const std::vector<Tensor>& a) { return sum(mul(a[0], a[0])); }, {rng.tensor({4, 4})}};
  });

  // A random masked-FFT operator on a small grid with a random orthonormal basis.
  run("apply_linear", [&]() -> Case {
    const std::size_t H = 6, W = 6, T = 8, t = 3, m = 7;
    CMatrix G(T, t);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = cd(rng.normal(), rng.normal());
    Eigen::HouseholderQR<CMatrix> qr(G);
    CMatrix Q = qr.householderQ() * CMatrix::Identity(T, t);
    auto basis = std::make_shared<const TemporalBasis>(TemporalBasis::from_matrix(Q));
    auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(H, W, m, T));
    auto op = std::make_shared<AcquisitionOperator>(mask, basis);
    LinearOperator L = op->as_linear();
    auto fwd = L.forward;
    auto adj = L.adjoint;
    L.forward = [op, fwd](std::span<const double> i, std::span<double> o) { fwd(i, o); };
    L.adjoint = [op, adj](std::span<const double> i, std::span<double> o) { adj(i, o); };
    return {[L](const std::vector<Tensor>& a) { return apply_linear(L, a[0]); },
            {rng.tensor({2, 2 * t, H, W})}};
  });
  return out;
}

}  // namespace qmrf::ad
