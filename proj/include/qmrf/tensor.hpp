#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qmrf::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Thrown when operands disagree on shape. The message names the op and the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major array of doubles with an optional reverse-mode tape.
///
/// Tensors are cheap handles; copies share the same node. Results of ops on
/// tensors that do not require grad carry no graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Accumulated gradient; empty span if none has been materialized.
  std::span<const double> grad() const;
  void zero_grad();
  /// Drops any gradient storage.
  void clear_grad();

  /// Seeds d(this)/d(this) = 1 on a single-element tensor and propagates.
  void backward() const;

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  const std::string& op_name() const;

  // Internal; used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Fixed linear map with a matrix-free adjoint. Backward of `forward` is `adjoint`.
struct LinearOperator {
  Shape in_shape;
  Shape out_shape;
  std::function<void(std::span<const double> in, std::span<double> out)> forward;
  std::function<void(std::span<const double> in, std::span<double> out)> adjoint;
  std::string name = "linear";
};

// --- ops -------------------------------------------------------------------

/// Same-padded, stride-1 cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,k,k] (k odd), bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_channels(const std::vector<Tensor>& xs);
/// Concatenation along dimension 0; all other dimensions must agree.
Tensor concat_batch(const std::vector<Tensor>& xs);
/// Entries [begin, begin+count) along dimension 0.
Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t count);
/// Channels [begin, begin+count) of an [N,C,H,W] tensor.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
/// x [N,C,H,W] times s [N,1,H,W], broadcast over C.
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& s);
Tensor avgpool2(const Tensor& x);
Tensor upsample2_nearest(const Tensor& x);
/// out[n,c,p] = x[n,c,perm[p]] over the flattened H*W plane.
Tensor permute_pixels(const Tensor& x, std::span<const std::size_t> perm);
/// Pixels idx (flat over N*H*W, i.e. n*H*W + p) of an [N,C,H,W] tensor as a [1,C,1,P] row.
Tensor gather_pixels(const Tensor& x, std::span<const std::size_t> idx);
/// Inverse of gather_pixels: places a [1,C,1,P] row at idx of a zero [N,C,H,W] tensor. Indices must be unique.
Tensor scatter_pixels(const Tensor& x, std::span<const std::size_t> idx, std::size_t N, std::size_t H,
                      std::size_t W);
/// log(x) for x >= floor, first-order continuation below it (finite everywhere).
Tensor log_floor(const Tensor& x, double floor);
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
/// Applies `op` to x, which is either exactly op.in_shape or [N] + op.in_shape.
Tensor apply_linear(const LinearOperator& op, const Tensor& x);

}  // namespace qmrf::ad
