#include "trinet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "trinet/error.hpp"

namespace trinet::ad {

using detail::Buffer;
using detail::Impl;
using detail::Node;
using ImplPtr = std::shared_ptr<Impl>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

namespace {

thread_local std::size_t t_live_bytes = 0;
thread_local std::size_t t_peak_bytes = 0;
thread_local bool t_grad_enabled = true;
thread_local std::string t_corrupt_op;
thread_local double t_corrupt_factor = 1.0;

}  // namespace

namespace memory {
std::size_t live_bytes() { return t_live_bytes; }
std::size_t peak_bytes() { return t_peak_bytes; }
void reset_peak() { t_peak_bytes = t_live_bytes; }
}  // namespace memory

namespace detail {

void note_alloc(std::size_t bytes) {
  t_live_bytes += bytes;
  t_peak_bytes = std::max(t_peak_bytes, t_live_bytes);
}

void note_free(std::size_t bytes) {
  t_live_bytes = t_live_bytes >= bytes ? t_live_bytes - bytes : 0;
}

Buffer& Impl::ensure_grad() {
  if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace testing {
void corrupt_backward(const std::string& op, double factor) {
  t_corrupt_op = op;
  t_corrupt_factor = factor;
}
}  // namespace testing

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

namespace {

ImplPtr new_impl(const Shape& shape, Buffer data, bool track) {
  auto impl = std::make_shared<Impl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->track = track;
  return impl;
}

void check_finite(const Buffer& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool track) {
  return full(shape, 0.0, track);
}

Tensor Tensor::full(const Shape& shape, double value, bool track) {
  return Tensor(new_impl(shape, Buffer(shape_numel(shape), value), track));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values, bool track) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  Buffer data(values.begin(), values.end());
  check_finite(data, "from_vector");
  return Tensor(new_impl(shape, std::move(data), track));
}

Tensor Tensor::scalar(double value, bool track) {
  return from_vector({}, {value}, track);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("undefined tensor");
  return {impl_->data.data(), impl_->data.size()};
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractError("undefined tensor");
  return {impl_->data.data(), impl_->data.size()};
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::tracks() const { return impl_ && impl_->track; }

void Tensor::set_track(bool track) {
  if (!impl_) throw ContractError("undefined tensor");
  impl_->track = track;
  if (!track) impl_->grad = Buffer();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  return {impl_->grad.data(), impl_->grad.size()};
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_ || !impl_->track) throw ContractError("gradient requested on untracked tensor");
  auto& g = impl_->ensure_grad();
  return {g.data(), g.size()};
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(new_impl(shape(), impl_->data, false));
}

Tensor Tensor::clone() const {
  return Tensor(new_impl(shape(), impl_->data, impl_->track));
}

const char* Tensor::op() const {
  return impl_ && impl_->node ? impl_->node->op : "leaf";
}

// ---------------------------------------------------------------------------
// Graph recording and backward

namespace {

Tensor record(const Shape& shape, Buffer data, const char* op,
              std::vector<ImplPtr> inputs,
              std::function<void(const Impl&)> rule) {
  check_finite(data, op);
  bool track = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) track = track || in->track;
  }
  auto impl = new_impl(shape, std::move(data), track);
  if (track) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1 || loss.rank() != 0) {
    throw ContractError("backward requires a scalar loss");
  }
  if (!loss.tracks()) throw ContractError("backward on a loss that does not track");

  // Iterative post-order DFS: inputs before outputs.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      Impl* child = impl->node->inputs[next++].get();
      if (child->track && child->node && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  loss.impl()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* impl = *it;
    if (!impl->node || impl->grad.empty()) continue;
    const bool corrupt = !t_corrupt_op.empty() && t_corrupt_op == impl->node->op;
    if (corrupt) {
      for (double& g : impl->grad) g *= t_corrupt_factor;
    }
    impl->node->backward(*impl);
    if (corrupt) {
      for (double& g : impl->grad) g /= t_corrupt_factor;
    }
  }
}

// ---------------------------------------------------------------------------
// Broadcasting

namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t off = r - s.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[i + off] = s[i] == 1 ? 0 : acc;
    acc *= s[i];
  }
  return strides;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                           " with " + shape_str(b));
    }
    bc.out[i] = std::max(da, db);
  }
  bc.stride_a = aligned_strides(a, bc.out);
  bc.stride_b = aligned_strides(b, bc.out);
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_numel(bc.out);
  if (n == 0) return;
  const std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * bc.out[d];
      ib -= bc.stride_b[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

// value(a, b) and partials (da, db) given a, b.
template <class Fwd, class Bwd>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
  auto ia = a.impl();
  auto ib = b.impl();
  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    Buffer out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ia->data[i], ib->data[i]);
    return record(a.shape(), std::move(out), op, {ia, ib}, [ia, ib, bwd](const Impl& o) {
      const std::size_t n = o.data.size();
      double* ga = ia->track ? ia->ensure_grad().data() : nullptr;
      double* gb = ib->track ? ib->ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        auto [da, db] = bwd(ia->data[i], ib->data[i], o.data[i]);
        if (ga) ga[i] += o.grad[i] * da;
        if (gb) gb[i] += o.grad[i] * db;
      }
    });
  }
  Broadcast bc = make_broadcast(a.shape(), b.shape(), op);
  Buffer out(shape_numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t i, std::size_t xa, std::size_t xb) {
    out[i] = fwd(ia->data[xa], ib->data[xb]);
  });
  return record(bc.out, std::move(out), op, {ia, ib}, [ia, ib, bc, bwd](const Impl& o) {
    double* ga = ia->track ? ia->ensure_grad().data() : nullptr;
    double* gb = ib->track ? ib->ensure_grad().data() : nullptr;
    for_each_broadcast(bc, [&](std::size_t i, std::size_t xa, std::size_t xb) {
      auto [da, db] = bwd(ia->data[xa], ib->data[xb], o.data[i]);
      if (ga) ga[xa] += o.grad[i] * da;
      if (gb) gb[xb] += o.grad[i] * db;
    });
  });
}

// f(x) with derivative expressed through (x, y).
template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Bwd bwd) {
  auto ia = a.impl();
  const std::size_t n = a.numel();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ia->data[i]);
  return record(a.shape(), std::move(out), op, {ia}, [ia, bwd](const Impl& o) {
    auto& g = ia->ensure_grad();
    const std::size_t n = o.data.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * bwd(ia->data[i], o.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  }
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  auto ia = a.impl();
  auto ib = b.impl();
  Buffer out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(ia->data.data(), m, k) * ConstMapMat(ib->data.data(), k, n);
  return record({a.dim(0), b.dim(1)}, std::move(out), "matmul", {ia, ib},
                [ia, ib, m, k, n](const Impl& o) {
                  ConstMapMat dy(o.grad.data(), m, n);
                  if (ia->track) {
                    MapMat(ia->ensure_grad().data(), m, k).noalias() +=
                        dy * ConstMapMat(ib->data.data(), k, n).transpose();
                  }
                  if (ib->track) {
                    MapMat(ib->ensure_grad().data(), k, n).noalias() +=
                        ConstMapMat(ia->data.data(), m, k).transpose() * dy;
                  }
                });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(a.shape()));
  const auto r = static_cast<Eigen::Index>(a.dim(0));
  const auto c = static_cast<Eigen::Index>(a.dim(1));
  auto ia = a.impl();
  Buffer out(a.numel());
  MapMat(out.data(), c, r) = ConstMapMat(ia->data.data(), r, c).transpose();
  return record({a.dim(1), a.dim(0)}, std::move(out), "transpose", {ia}, [ia, r, c](const Impl& o) {
    MapMat(ia->ensure_grad().data(), r, c) += ConstMapMat(o.grad.data(), c, r).transpose();
  });
}

Tensor swap_axes01(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("swap_axes01 needs rank >= 2");
  const std::size_t d0 = a.dim(0);
  const std::size_t d1 = a.dim(1);
  const std::size_t inner = d0 * d1 == 0 ? 0 : a.numel() / (d0 * d1);
  Shape shape = a.shape();
  std::swap(shape[0], shape[1]);
  auto ia = a.impl();
  Buffer out(a.numel());
  for (std::size_t i = 0; i < d0; ++i) {
    for (std::size_t j = 0; j < d1; ++j) {
      std::copy_n(ia->data.data() + (i * d1 + j) * inner, inner,
                  out.data() + (j * d0 + i) * inner);
    }
  }
  return record(shape, std::move(out), "swap_axes01", {ia}, [ia, d0, d1, inner](const Impl& o) {
    auto& g = ia->ensure_grad();
    for (std::size_t i = 0; i < d0; ++i) {
      for (std::size_t j = 0; j < d1; ++j) {
        const double* src = o.grad.data() + (j * d0 + i) * inner;
        double* dst = g.data() + (i * d1 + j) * inner;
        for (std::size_t q = 0; q < inner; ++q) dst[q] += src[q];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {
struct Partials {
  double da;
  double db;
};
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return Partials{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return Partials{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double) { return Partials{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double) { return Partials{1.0 / y, -x / (y * y)}; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "sum");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto ia = a.impl();
  Buffer out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t l = 0; l < sp.len; ++l) {
      const double* src = ia->data.data() + (o * sp.len + l) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return record(shape, std::move(out), "sum", {ia}, [ia, sp](const Impl& o) {
    auto& g = ia->ensure_grad();
    for (std::size_t q = 0; q < sp.outer; ++q) {
      for (std::size_t l = 0; l < sp.len; ++l) {
        double* dst = g.data() + (q * sp.len + l) * sp.inner;
        const double* src = o.grad.data() + q * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const std::size_t len = a.dim(axis);
  if (len == 0) throw DimensionError("mean over empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

Tensor sum_all(const Tensor& a) {
  auto ia = a.impl();
  double s = 0.0;
  for (double v : ia->data) s += v;
  return record({}, Buffer{s}, "sum_all", {ia}, [ia](const Impl& o) {
    auto& g = ia->ensure_grad();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
  auto ia = a.impl();
  Buffer out(a.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, ia->data[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(ia->data[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return record(a.shape(), std::move(out), "softmax", {ia}, [ia, sp](const Impl& o) {
    auto& g = ia->ensure_grad();
    for (std::size_t q = 0; q < sp.outer; ++q) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = q * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          dot += o.data[base + l * sp.inner] * o.grad[base + l * sp.inner];
        }
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t at = base + l * sp.inner;
          g[at] += o.data[at] * (o.grad[at] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto ia = a.impl();
  return record(shape, ia->data, "reshape", {ia}, [ia](const Impl& o) {
    auto& g = ia->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.dim(0)) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(a.shape()));
  }
  const std::size_t row = a.dim(0) == 0 ? 0 : a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  auto ia = a.impl();
  Buffer out(ia->data.begin() + static_cast<std::ptrdiff_t>(begin * row),
             ia->data.begin() + static_cast<std::ptrdiff_t>(end * row));
  return record(shape, std::move(out), "slice", {ia}, [ia, begin, row](const Impl& o) {
    auto& g = ia->ensure_grad();
    double* dst = g.data() + begin * row;
    for (std::size_t i = 0; i < o.grad.size(); ++i) dst[i] += o.grad[i];
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack of zero tensors");
  const Shape& inner = parts.front().shape();
  std::vector<ImplPtr> inputs;
  Buffer out;
  out.reserve(parts.size() * shape_numel(inner));
  for (const auto& p : parts) {
    if (p.shape() != inner) {
      throw DimensionError("stack: " + shape_str(p.shape()) + " vs " + shape_str(inner));
    }
    inputs.push_back(p.impl());
    out.insert(out.end(), p.impl()->data.begin(), p.impl()->data.end());
  }
  Shape shape = inner;
  shape.insert(shape.begin(), parts.size());
  const std::size_t width = shape_numel(inner);
  auto captured = inputs;
  return record(shape, std::move(out), "stack", std::move(inputs),
                [captured, width](const Impl& o) {
                  for (std::size_t k = 0; k < captured.size(); ++k) {
                    if (!captured[k]->track) continue;
                    auto& g = captured[k]->ensure_grad();
                    for (std::size_t i = 0; i < width; ++i) g[i] += o.grad[k * width + i];
                  }
                });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape tail(parts.front().shape().begin() + (parts.front().rank() ? 1 : 0),
             parts.front().shape().end());
  std::vector<ImplPtr> inputs;
  std::vector<std::size_t> offsets;
  Buffer out;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() == 0) throw DimensionError("concat of scalars");
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " +
                           shape_str(parts.front().shape()));
    }
    offsets.push_back(out.size());
    rows += p.dim(0);
    inputs.push_back(p.impl());
    out.insert(out.end(), p.impl()->data.begin(), p.impl()->data.end());
  }
  Shape shape = tail;
  shape.insert(shape.begin(), rows);
  auto captured = inputs;
  return record(shape, std::move(out), "concat", std::move(inputs),
                [captured, offsets](const Impl& o) {
                  for (std::size_t k = 0; k < captured.size(); ++k) {
                    if (!captured[k]->track) continue;
                    auto& g = captured[k]->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offsets[k] + i];
                  }
                });
}

Tensor embedding_lookup(const Tensor& table, std::size_t index) {
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D");
  if (index >= table.dim(0)) {
    throw InputError("embedding index " + std::to_string(index) + " outside table of " +
                     std::to_string(table.dim(0)) + " rows");
  }
  const std::size_t width = table.dim(1);
  auto it = table.impl();
  Buffer out(it->data.begin() + static_cast<std::ptrdiff_t>(index * width),
             it->data.begin() + static_cast<std::ptrdiff_t>((index + 1) * width));
  return record({width}, std::move(out), "embedding_lookup", {it},
                [it, index, width](const Impl& o) {
                  auto& g = it->ensure_grad();
                  for (std::size_t i = 0; i < width; ++i) g[index * width + i] += o.grad[i];
                });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// cols: [cin*9, h*w] for one frame.
void im2col3x3(const double* x, std::size_t cin, std::size_t h, std::size_t w, double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    const double* xc = x + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          double* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(dst, w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(sy) * w;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
            dst[xx] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im3x3(const double* cols, std::size_t cin, std::size_t h, std::size_t w, double* x) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    double* xc = x + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* src = row + y * w;
          double* dst = xc + static_cast<std::size_t>(sy) * w;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += src[xx];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3 ||
      weight.dim(1) != x.dim(1) || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw DimensionError("conv3x3: x " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t frames = x.dim(0);
  const std::size_t cin = x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t cout = weight.dim(0);
  const std::size_t hw = h * w;
  const auto k = static_cast<Eigen::Index>(cin * 9);
  auto ix = x.impl();
  auto iw = weight.impl();
  auto ib = bias.impl();

  Buffer out(frames * cout * hw);
  std::vector<double> cols(cin * 9 * hw);
  ConstMapMat wm(iw->data.data(), static_cast<Eigen::Index>(cout), k);
  Eigen::Map<const Eigen::VectorXd> bv(ib->data.data(), static_cast<Eigen::Index>(cout));
  for (std::size_t f = 0; f < frames; ++f) {
    im2col3x3(ix->data.data() + f * cin * hw, cin, h, w, cols.data());
    MapMat y(out.data() + f * cout * hw, static_cast<Eigen::Index>(cout),
             static_cast<Eigen::Index>(hw));
    y.noalias() = wm * ConstMapMat(cols.data(), k, static_cast<Eigen::Index>(hw));
    y.colwise() += bv;
  }
  return record({frames, cout, h, w}, std::move(out), "conv3x3", {ix, iw, ib},
                [ix, iw, ib, frames, cin, cout, h, w, hw, k](const Impl& o) {
                  std::vector<double> cols(cin * 9 * hw);
                  std::vector<double> dcols(ix->track ? cin * 9 * hw : 0);
                  ConstMapMat wm(iw->data.data(), static_cast<Eigen::Index>(cout), k);
                  for (std::size_t f = 0; f < frames; ++f) {
                    ConstMapMat dy(o.grad.data() + f * cout * hw,
                                   static_cast<Eigen::Index>(cout),
                                   static_cast<Eigen::Index>(hw));
                    if (ib->track) {
                      Eigen::Map<Eigen::VectorXd>(ib->ensure_grad().data(),
                                                  static_cast<Eigen::Index>(cout)) +=
                          dy.rowwise().sum();
                    }
                    if (iw->track) {
                      im2col3x3(ix->data.data() + f * cin * hw, cin, h, w, cols.data());
                      MapMat(iw->ensure_grad().data(), static_cast<Eigen::Index>(cout), k)
                          .noalias() +=
                          dy * ConstMapMat(cols.data(), k, static_cast<Eigen::Index>(hw))
                                   .transpose();
                    }
                    if (ix->track) {
                      MapMat(dcols.data(), k, static_cast<Eigen::Index>(hw)).noalias() =
                          wm.transpose() * dy;
                      col2im3x3(dcols.data(), cin, h, w,
                                ix->ensure_grad().data() + f * cin * hw);
                    }
                  }
                });
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw DimensionError("avg_pool2 expects [f,c,even h,even w], got " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  auto ix = x.impl();
  Buffer out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = ix->data.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* s = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  return record({x.dim(0), x.dim(1), oh, ow}, std::move(out), "avg_pool2", {ix},
                [ix, planes, h, w, oh, ow](const Impl& o) {
                  auto& g = ix->ensure_grad();
                  for (std::size_t p = 0; p < planes; ++p) {
                    double* dst = g.data() + p * h * w;
                    const double* src = o.grad.data() + p * oh * ow;
                    for (std::size_t y = 0; y < oh; ++y) {
                      for (std::size_t xx = 0; xx < ow; ++xx) {
                        const double v = 0.25 * src[y * ow + xx];
                        double* d = dst + 2 * y * w + 2 * xx;
                        d[0] += v;
                        d[1] += v;
                        d[w] += v;
                        d[w + 1] += v;
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_loss_args(const Tensor& t, std::span<const double> targets,
                     std::span<const double> mask, const char* op) {
  if (targets.size() != t.numel() || mask.size() != t.numel()) {
    throw DimensionError(std::string(op) + ": targets/mask length mismatch with " +
                         shape_str(t.shape()));
  }
}

}  // namespace

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> mask) {
  check_loss_args(logits, targets, mask, "bce_with_logits");
  auto il = logits.impl();
  std::vector<double> y(targets.begin(), targets.end());
  std::vector<double> m(mask.begin(), mask.end());
  double count = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (m[i] <= 0.0) continue;
    const double z = il->data[i];
    total += m[i] * (std::max(z, 0.0) - z * y[i] + std::log1p(std::exp(-std::abs(z))));
    count += m[i];
  }
  const double loss = count > 0.0 ? total / count : 0.0;
  return record({}, Buffer{loss}, "bce_with_logits", {il},
                [il, y = std::move(y), m = std::move(m), count](const Impl& o) {
                  if (count <= 0.0) return;
                  auto& g = il->ensure_grad();
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    if (m[i] <= 0.0) continue;
                    g[i] += o.grad[0] * m[i] * (stable_sigmoid(il->data[i]) - y[i]) / count;
                  }
                });
}

Tensor bce_probs(const Tensor& probs, std::span<const double> targets,
                 std::span<const double> mask) {
  check_loss_args(probs, targets, mask, "bce_probs");
  constexpr double kEps = 1e-12;
  auto ip = probs.impl();
  std::vector<double> y(targets.begin(), targets.end());
  std::vector<double> m(mask.begin(), mask.end());
  double count = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (m[i] <= 0.0) continue;
    const double p = std::clamp(ip->data[i], kEps, 1.0 - kEps);
    total -= m[i] * (y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
    count += m[i];
  }
  const double loss = count > 0.0 ? total / count : 0.0;
  return record({}, Buffer{loss}, "bce_probs", {ip},
                [ip, y = std::move(y), m = std::move(m), count](const Impl& o) {
                  if (count <= 0.0) return;
                  auto& g = ip->ensure_grad();
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    if (m[i] <= 0.0) continue;
                    const double p = ip->data[i];
                    if (p <= kEps || p >= 1.0 - kEps) continue;
                    g[i] += o.grad[0] * m[i] * (p - y[i]) / (p * (1.0 - p)) / count;
                  }
                });
}

}  // namespace trinet::ad
