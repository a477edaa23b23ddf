#include "qmrf/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace qmrf::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) shape_fail(op, "undefined tensor operand");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.rank() != b.rank())
    shape_fail(op, "rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      shape_fail(op, "dimension " + std::to_string(i) + " mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void require_rank4(const Tensor& t, const char* op, const char* name) {
  require_defined(t, op);
  if (t.rank() != 4)
    shape_fail(op, std::string(name) + " must be rank 4 [N,C,H,W], got " + shape_str(t.shape()));
}

// Builds an op result; graph edges are recorded only when some parent needs grad.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const NodePtr& p) { return p && p->requires_grad; });
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

// Fills cols[(c*k+ky)*k+kx][y*W+x] = in[c][y+ky-r][x+kx-r] with zero padding.
void im2col(const double* in, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            double* cols) {
  const long r = static_cast<long>(k / 2);
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    const double* plane = in + c * HW;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * HW;
        const long dy = static_cast<long>(ky) - r;
        const long dx = static_cast<long>(kx) - r;
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(static_cast<long>(W), static_cast<long>(W) - dx);
        for (long y = 0; y < static_cast<long>(H); ++y) {
          double* dst = row + y * W;
          const long sy = y + dy;
          if (sy < 0 || sy >= static_cast<long>(H) || x1 <= x0) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          std::fill(dst, dst + x0, 0.0);
          std::memcpy(dst + x0, plane + sy * W + x0 + dx, sizeof(double) * (x1 - x0));
          std::fill(dst + x1, dst + W, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                double* out) {
  const long r = static_cast<long>(k / 2);
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    double* plane = out + c * HW;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * HW;
        const long dy = static_cast<long>(ky) - r;
        const long dx = static_cast<long>(kx) - r;
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(static_cast<long>(W), static_cast<long>(W) - dx);
        for (long y = 0; y < static_cast<long>(H); ++y) {
          const long sy = y + dy;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          const double* src = row + y * W;
          double* dst = plane + sy * W + dx;
          for (long x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), v);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("Tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw ShapeError("Tensor::dim: index " + std::to_string(i) + " out of rank");
  return s[i];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }
std::vector<double> Tensor::to_vector() const { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

const std::string& Tensor::op_name() const { return node_->op; }

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward: root must have one element, got " + shape_str(shape()));
  if (!node_->requires_grad) throw std::logic_error("backward: root does not require grad");

  // Iterative post-order DFS gives a topological order; each node is visited once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// --- ops -------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  constexpr const char* op = "conv2d";
  require_rank4(input, op, "input");
  require_rank4(kernel, op, "kernel");
  require_defined(bias, op);
  const std::size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != Cin)
    shape_fail(op, "kernel dimension 1 (Cin) is " + std::to_string(kernel.dim(1)) +
                       " but input dimension 1 is " + std::to_string(Cin));
  if (kernel.dim(3) != k) shape_fail(op, "kernel dimensions 2 and 3 must be equal");
  if (k % 2 == 0) shape_fail(op, "kernel dimension 2 must be odd, got " + std::to_string(k));
  if (bias.rank() != 1 || bias.dim(0) != Cout)
    shape_fail(op, "bias dimension 0 must equal Cout=" + std::to_string(Cout) + ", got " +
                       shape_str(bias.shape()));

  const std::size_t HW = H * W, K = Cin * k * k;
  std::vector<double> out(N * Cout * HW);
  CMapMat Km(kernel.values().data(), Cout, K);
  Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), Cout);
  std::vector<double> cols(k == 1 ? 0 : K * HW);
  for (std::size_t n = 0; n < N; ++n) {
    const double* src = input.values().data() + n * Cin * HW;
    if (k != 1) im2col(src, Cin, H, W, k, cols.data());
    CMapMat X(k == 1 ? src : cols.data(), K, HW);
    MapMat Y(out.data() + n * Cout * HW, Cout, HW);
    Y.noalias() = Km * X;
    Y.colwise() += b;
  }

  auto pin = input.node(), pk = kernel.node(), pb = bias.node();
  return make_result({N, Cout, H, W}, std::move(out), op, {pin, pk, pb},
                     [pin, pk, pb, N, Cin, Cout, H, W, k, HW, K](Node& self) {
                       std::vector<double> cols(k == 1 ? 0 : K * HW);
                       std::vector<double> dcols(pin->requires_grad && k != 1 ? K * HW : 0);
                       CMapMat Km(pk->value.data(), Cout, K);
                       for (std::size_t n = 0; n < N; ++n) {
                         CMapMat dY(self.grad.data() + n * Cout * HW, Cout, HW);
                         const double* src = pin->value.data() + n * Cin * HW;
                         if (pk->requires_grad) {
                           if (k != 1) im2col(src, Cin, H, W, k, cols.data());
                           CMapMat X(k == 1 ? src : cols.data(), K, HW);
                           MapMat dK(pk->ensure_grad().data(), Cout, K);
                           dK.noalias() += dY * X.transpose();
                         }
                         if (pb->requires_grad) {
                           // Plain loop: Eigen's redux order depends on pointer alignment.
                           double* db = pb->ensure_grad().data();
                           const double* g = self.grad.data() + n * Cout * HW;
                           for (std::size_t c = 0; c < Cout; ++c) {
                             double acc = 0.0;
                             for (std::size_t p = 0; p < HW; ++p) acc += g[c * HW + p];
                             db[c] += acc;
                           }
                         }
                         if (pin->requires_grad) {
                           double* dx = pin->ensure_grad().data() + n * Cin * HW;
                           if (k == 1) {
                             MapMat dX(dx, K, HW);
                             dX.noalias() += Km.transpose() * dY;
                           } else {
                             MapMat dC(dcols.data(), K, HW);
                             dC.noalias() = Km.transpose() * dY;
                             col2im_add(dcols.data(), Cin, H, W, k, dx);
                           }
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  auto px = x.node();
  return make_result(x.shape(), std::move(out), "relu", {px}, [px](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (px->value[i] > 0.0) g[i] += self.grad[i];
  });
}

namespace {

Tensor add_sub(const Tensor& a, const Tensor& b, double sign, const char* op) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[i];
  auto pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), op, {pa, pb}, [pa, pb, sign](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_sub(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_sub(a, b, -1.0, "sub"); }

Tensor scale(const Tensor& x, double s) {
  require_defined(x, "scale");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= s;
  auto px = x.node();
  return make_result(x.shape(), std::move(out), "scale", {px}, [px, s](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  require_defined(x, "add_scalar");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v += s;
  auto px = x.node();
  return make_result(x.shape(), std::move(out), "add_scalar", {px}, [px](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  return make_result(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel())
    shape_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  auto px = x.node();
  return make_result(std::move(shape), x.to_vector(), "reshape", {px}, [px](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  constexpr const char* op = "concat_channels";
  if (xs.empty()) shape_fail(op, "no inputs");
  for (const auto& x : xs) require_rank4(x, op, "input");
  const std::size_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3), HW = H * W;
  std::size_t C = 0;
  std::vector<std::size_t> offs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t d : {0u, 2u, 3u})
      if (xs[i].dim(d) != xs[0].dim(d))
        shape_fail(op, "input " + std::to_string(i) + " dimension " + std::to_string(d) +
                           " is " + std::to_string(xs[i].dim(d)) + ", expected " +
                           std::to_string(xs[0].dim(d)));
    offs.push_back(C);
    C += xs[i].dim(1);
  }
  std::vector<double> out(N * C * HW);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const std::size_t Ci = xs[i].dim(1);
      const double* src = xs[i].values().data() + n * Ci * HW;
      std::copy(src, src + Ci * HW, out.data() + (n * C + offs[i]) * HW);
    }
  std::vector<NodePtr> parents;
  for (const auto& x : xs) parents.push_back(x.node());
  return make_result({N, C, H, W}, std::move(out), op, parents,
                     [parents, offs, N, C, HW](Node& self) {
                       for (std::size_t i = 0; i < parents.size(); ++i) {
                         auto& p = parents[i];
                         if (!p->requires_grad) continue;
                         const std::size_t Ci = p->shape[1];
                         auto& g = p->ensure_grad();
                         for (std::size_t n = 0; n < N; ++n) {
                           const double* src = self.grad.data() + (n * C + offs[i]) * HW;
                           double* dst = g.data() + n * Ci * HW;
                           for (std::size_t j = 0; j < Ci * HW; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

Tensor concat_batch(const std::vector<Tensor>& xs) {
  constexpr const char* op = "concat_batch";
  if (xs.empty()) shape_fail(op, "no operands");
  for (const auto& x : xs) require_defined(x, op);
  const Shape& s0 = xs[0].shape();
  if (s0.empty()) shape_fail(op, "operands must have rank >= 1");
  Shape out_shape = s0;
  out_shape[0] = 0;
  std::vector<NodePtr> parents;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Shape& s = xs[i].shape();
    if (s.size() != s0.size() || !std::equal(s.begin() + 1, s.end(), s0.begin() + 1))
      shape_fail(op, "operand " + std::to_string(i) + " shape " + shape_str(s) + " differs from " + shape_str(s0) +
                         " beyond dimension 0");
    out_shape[0] += s[0];
    parents.push_back(xs[i].node());
  }
  std::vector<double> out;
  out.reserve(shape_numel(out_shape));
  for (const auto& x : xs) out.insert(out.end(), x.values().begin(), x.values().end());
  return make_result(std::move(out_shape), std::move(out), op, parents, [parents](Node& self) {
    std::size_t off = 0;
    for (const auto& p : parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t count) {
  constexpr const char* op = "slice_batch";
  require_defined(x, op);
  if (x.rank() == 0) shape_fail(op, "operand must have rank >= 1");
  if (begin + count > x.dim(0) || count == 0)
    shape_fail(op, "range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                       ") outside dimension 0 of size " + std::to_string(x.dim(0)));
  Shape s = x.shape();
  const std::size_t inner = x.numel() / s[0];
  s[0] = count;
  std::vector<double> out(x.values().begin() + static_cast<long>(begin * inner),
                          x.values().begin() + static_cast<long>((begin + count) * inner));
  auto px = x.node();
  return make_result(std::move(s), std::move(out), op, {px}, [px, off = begin * inner](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  constexpr const char* op = "slice_channels";
  require_rank4(x, op, "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), HW = H * W;
  if (begin + count > C || count == 0)
    shape_fail(op, "channel range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                       ") exceeds dimension 1 of size " + std::to_string(C));
  std::vector<double> out(N * count * HW);
  for (std::size_t n = 0; n < N; ++n) {
    const double* src = x.values().data() + (n * C + begin) * HW;
    std::copy(src, src + count * HW, out.data() + n * count * HW);
  }
  auto px = x.node();
  return make_result({N, count, H, W}, std::move(out), op, {px},
                     [px, N, C, HW, begin, count](Node& self) {
                       auto& g = px->ensure_grad();
                       for (std::size_t n = 0; n < N; ++n) {
                         const double* src = self.grad.data() + n * count * HW;
                         double* dst = g.data() + (n * C + begin) * HW;
                         for (std::size_t j = 0; j < count * HW; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& s) {
  constexpr const char* op = "mul_channel_broadcast";
  require_rank4(x, op, "x");
  require_rank4(s, op, "s");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (s.dim(1) != 1) shape_fail(op, "s dimension 1 must be 1, got " + std::to_string(s.dim(1)));
  for (std::size_t d : {0u, 2u, 3u})
    if (s.dim(d) != x.dim(d))
      shape_fail(op, "dimension " + std::to_string(d) + " mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(s.shape()));
  std::vector<double> out(x.numel());
  const auto xv = x.values(), sv = s.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p)
        out[(n * C + c) * HW + p] = xv[(n * C + c) * HW + p] * sv[n * HW + p];
  auto px = x.node(), ps = s.node();
  return make_result(x.shape(), std::move(out), op, {px, ps}, [px, ps, N, C, HW](Node& self) {
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < HW; ++p)
            g[(n * C + c) * HW + p] += self.grad[(n * C + c) * HW + p] * ps->value[n * HW + p];
    }
    if (ps->requires_grad) {
      auto& g = ps->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < HW; ++p)
            g[n * HW + p] += self.grad[(n * C + c) * HW + p] * px->value[(n * C + c) * HW + p];
    }
  });
}

Tensor avgpool2(const Tensor& x) {
  constexpr const char* op = "avgpool2";
  require_rank4(x, op, "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2)
    shape_fail(op, "dimensions 2 and 3 must be even, got " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2, planes = N * C;
  std::vector<double> out(planes * Ho * Wo);
  const double* src = x.values().data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const double* s = src + pl * H * W + 2 * y * W + 2 * xx;
        out[(pl * Ho + y) * Wo + xx] = 0.25 * (s[0] + s[1] + s[W] + s[W + 1]);
      }
  auto px = x.node();
  return make_result({N, C, Ho, Wo}, std::move(out), op, {px}, [px, planes, H, W, Ho, Wo](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          const double v = 0.25 * self.grad[(pl * Ho + y) * Wo + xx];
          double* d = g.data() + pl * H * W + 2 * y * W + 2 * xx;
          d[0] += v;
          d[1] += v;
          d[W] += v;
          d[W + 1] += v;
        }
  });
}

Tensor upsample2_nearest(const Tensor& x) {
  constexpr const char* op = "upsample2_nearest";
  require_rank4(x, op, "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W, planes = N * C;
  std::vector<double> out(planes * Ho * Wo);
  const double* src = x.values().data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx)
        out[(pl * Ho + y) * Wo + xx] = src[(pl * H + y / 2) * W + xx / 2];
  auto px = x.node();
  return make_result({N, C, Ho, Wo}, std::move(out), op, {px}, [px, planes, H, W, Ho, Wo](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx)
          g[(pl * H + y / 2) * W + xx / 2] += self.grad[(pl * Ho + y) * Wo + xx];
  });
}

Tensor permute_pixels(const Tensor& x, std::span<const std::size_t> perm) {
  constexpr const char* op = "permute_pixels";
  require_rank4(x, op, "input");
  const std::size_t planes = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  if (perm.size() != HW)
    shape_fail(op, "permutation length " + std::to_string(perm.size()) +
                       " does not match H*W=" + std::to_string(HW));
  std::vector<std::size_t> p(perm.begin(), perm.end());
  std::vector<double> out(x.numel());
  const double* src = x.values().data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t i = 0; i < HW; ++i) out[pl * HW + i] = src[pl * HW + p[i]];
  auto px = x.node();
  return make_result(x.shape(), std::move(out), op, {px}, [px, p = std::move(p), planes, HW](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t i = 0; i < HW; ++i) g[pl * HW + p[i]] += self.grad[pl * HW + i];
  });
}

Tensor gather_pixels(const Tensor& x, std::span<const std::size_t> idx) {
  constexpr const char* op = "gather_pixels";
  require_rank4(x, op, "input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3), P = idx.size();
  for (auto i : idx)
    if (i >= N * HW) shape_fail(op, "index " + std::to_string(i) + " out of range N*H*W=" + std::to_string(N * HW));
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  std::vector<double> out(C * P);
  const double* src = x.values().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < P; ++j) out[c * P + j] = src[((ix[j] / HW) * C + c) * HW + ix[j] % HW];
  auto px = x.node();
  return make_result({1, C, 1, P}, std::move(out), op, {px}, [px, ix = std::move(ix), C, HW, P](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < P; ++j) g[((ix[j] / HW) * C + c) * HW + ix[j] % HW] += self.grad[c * P + j];
  });
}

Tensor scatter_pixels(const Tensor& x, std::span<const std::size_t> idx, std::size_t N, std::size_t H,
                      std::size_t W) {
  constexpr const char* op = "scatter_pixels";
  require_rank4(x, op, "input");
  const std::size_t C = x.dim(1), HW = H * W, P = idx.size();
  if (x.dim(0) != 1 || x.dim(2) != 1 || x.dim(3) != P)
    shape_fail(op, "input must be [1,C,1," + std::to_string(P) + "], got " + shape_str(x.shape()));
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  std::vector<char> used(N * HW, 0);
  for (auto i : ix) {
    if (i >= N * HW) shape_fail(op, "index " + std::to_string(i) + " out of range N*H*W=" + std::to_string(N * HW));
    if (used[i]) shape_fail(op, "duplicate index " + std::to_string(i));
    used[i] = 1;
  }
  std::vector<double> out(N * C * HW, 0.0);
  const double* src = x.values().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < P; ++j) out[((ix[j] / HW) * C + c) * HW + ix[j] % HW] = src[c * P + j];
  auto px = x.node();
  return make_result({N, C, H, W}, std::move(out), op, {px}, [px, ix = std::move(ix), C, HW, P](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < P; ++j) g[c * P + j] += self.grad[((ix[j] / HW) * C + c) * HW + ix[j] % HW];
  });
}

Tensor log_floor(const Tensor& x, double floor) {
  require_defined(x, "log_floor");
  const double lf = std::log(floor);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] >= floor ? std::log(xv[i]) : lf + (xv[i] - floor) / floor;
  auto px = x.node();
  return make_result(x.shape(), std::move(out), "log_floor", {px}, [px, floor](Node& self) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px->value[i];
      g[i] += self.grad[i] / (v >= floor ? v : floor);
    }
  });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_loss");
  const std::size_t n = a.numel();
  if (n == 0) shape_fail("mse_loss", "empty operands");
  const auto av = a.values(), bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  auto pa = a.node(), pb = b.node();
  return make_result({}, {s / static_cast<double>(n)}, "mse_loss", {pa, pb}, [pa, pb, n](Node& self) {
    const double c = 2.0 * self.grad[0] / static_cast<double>(n);
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (pa->value[i] - pb->value[i]);
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * (pa->value[i] - pb->value[i]);
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto px = x.node();
  return make_result({}, {s}, "sum", {px}, [px](Node& self) {
    auto& g = px->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor apply_linear(const LinearOperator& op, const Tensor& x) {
  const std::string name = "apply_linear(" + op.name + ")";
  require_defined(x, name.c_str());
  const std::size_t in_n = shape_numel(op.in_shape), out_n = shape_numel(op.out_shape);
  std::size_t batch = 0;
  Shape out_shape;
  if (x.shape() == op.in_shape) {
    batch = 1;
    out_shape = op.out_shape;
  } else if (x.rank() == op.in_shape.size() + 1 &&
             std::equal(op.in_shape.begin(), op.in_shape.end(), x.shape().begin() + 1)) {
    batch = x.dim(0);
    out_shape = op.out_shape;
    out_shape.insert(out_shape.begin(), batch);
  } else {
    std::size_t off = x.rank() == op.in_shape.size() + 1 ? 1 : 0;
    for (std::size_t d = 0; d < op.in_shape.size() && d + off < x.rank(); ++d)
      if (x.dim(d + off) != op.in_shape[d])
        shape_fail(name, "input dimension " + std::to_string(d + off) + " is " +
                             std::to_string(x.dim(d + off)) + ", operator expects " +
                             std::to_string(op.in_shape[d]));
    shape_fail(name, "input shape " + shape_str(x.shape()) + " incompatible with operator input " +
                         shape_str(op.in_shape));
  }
  std::vector<double> out(batch * out_n);
  for (std::size_t b = 0; b < batch; ++b)
    op.forward(x.values().subspan(b * in_n, in_n), std::span<double>(out).subspan(b * out_n, out_n));
  auto px = x.node();
  auto adj = op.adjoint;
  return make_result(std::move(out_shape), std::move(out), "apply_linear", {px},
                     [px, adj, batch, in_n, out_n](Node& self) {
                       auto& g = px->ensure_grad();
                       std::vector<double> tmp(in_n);
                       for (std::size_t b = 0; b < batch; ++b) {
                         adj(std::span<const double>(self.grad).subspan(b * out_n, out_n), tmp);
                         for (std::size_t i = 0; i < in_n; ++i) g[b * in_n + i] += tmp[i];
                       }
                     });
}

}  // namespace qmrf::ad
