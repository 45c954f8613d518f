#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trinet::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thread-local accounting of bytes held by tensor value and gradient buffers.
namespace memory {
std::size_t live_bytes();
std::size_t peak_bytes();
// Sets the peak watermark to the current live byte count.
void reset_peak();
}  // namespace memory

namespace detail {

void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes);

template <class T>
struct TrackedAllocator {
  using value_type = T;
  TrackedAllocator() = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, TrackedAllocator<double>>;

struct Impl;

// One recorded operation. `backward` reads the output gradient and
// accumulates into the gradients of tracking inputs.
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<Impl>> inputs;
  std::function<void(const Impl& out)> backward;
};

struct Impl {
  Shape shape;
  Buffer data;
  Buffer grad;  // allocated lazily, only when `track` is set
  bool track = false;
  std::shared_ptr<Node> node;  // null for leaves

  Buffer& ensure_grad();
};

}  // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient
// tracking. Copies share storage; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool track = false);
  static Tensor full(const Shape& shape, double value, bool track = false);
  static Tensor from_vector(const Shape& shape, std::vector<double> values,
                            bool track = false);
  static Tensor scalar(double value, bool track = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view for leaves (parameters, inputs). Mutating an op output
  // after it has been recorded invalidates the graph.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool tracks() const;
  void set_track(bool track);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, not tracking.
  Tensor detach() const;
  // Independent leaf copy preserving the tracking flag.
  Tensor clone() const;
  const char* op() const;

  const std::shared_ptr<detail::Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::Impl> impl_;
};

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Populates grad() of every tracking tensor that `loss` depends on.
// `loss` must be a tracking scalar.
void backward(const Tensor& loss);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                 // 2-D
Tensor swap_axes01(const Tensor& a);               // [a,b,...] -> [b,a,...]

// ---- broadcasting elementwise (trailing-dimension alignment) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);

// ---- shape manipulation ----
Tensor reshape(const Tensor& a, const Shape& shape);
// Rows [begin, end) of the leading axis.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
// Concatenates along the leading axis.
Tensor concat(const std::vector<Tensor>& parts);
// Row `index` of a [rows, width] table.
Tensor embedding_lookup(const Tensor& table, std::size_t index);

// ---- convolution ----
// x: [frames, cin, h, w]; weight: [cout, cin, 3, 3]; bias: [cout].
// Zero padding, stride 1.
Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias);
// 2x2 average pooling over the last two axes of [frames, c, h, w].
Tensor avg_pool2(const Tensor& x);

// ---- losses ----
// Mean over mask>0 entries of binary cross-entropy on logits. Returns a
// zero scalar when the mask is empty.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> mask);
// Same on probabilities (clamped to [1e-12, 1 - 1e-12]).
Tensor bce_probs(const Tensor& probs, std::span<const double> targets,
                 std::span<const double> mask);

namespace testing {
// Fault injection for gradient-check negative controls: the backward rule of
// the named op scales its incoming gradient by `factor`. Empty name disables.
void corrupt_backward(const std::string& op, double factor = 1.5);
}  // namespace testing

}  // namespace trinet::ad
