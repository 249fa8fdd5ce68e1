#include "srlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace srlab {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) {
    if (extent < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= extent;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(const Shape& shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  const auto n = static_cast<std::size_t>(numel_of(shape));
  if (dtype == DType::f32) {
    impl->storage = std::vector<float>(n, 0.0f);
  } else {
    impl->storage = std::vector<double>(n, 0.0);
  }
  return impl;
}

TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl) throw ShapeError("operation on an undefined tensor");
  return *impl;
}

thread_local bool g_grad_enabled = true;

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool value) { g_grad_enabled = value; }

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return Tensor(make_impl(shape, dtype)); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  visit_dtype(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

Tensor Tensor::from_vector(const Shape& shape, std::vector<float> values) {
  if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = DType::f32;
  impl->storage = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values) {
  if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = DType::f64;
  impl->storage = std::move(values);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return s[axis];
}

std::int64_t Tensor::numel() const { return numel_of(shape()); }
DType Tensor::dtype() const { return checked(impl_).dtype; }

template <typename T>
std::span<T> Tensor::data() {
  auto& impl = checked(impl_);
  auto* v = std::get_if<std::vector<T>>(&impl.storage);
  if (!v) throw ShapeError("tensor dtype does not match requested element type");
  return {v->data(), v->size()};
}

template <typename T>
std::span<const T> Tensor::data() const {
  const auto& impl = checked(impl_);
  const auto* v = std::get_if<std::vector<T>>(&impl.storage);
  if (!v) throw ShapeError("tensor dtype does not match requested element type");
  return {v->data(), v->size()};
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

double Tensor::at(std::int64_t flat_index) const {
  return visit_dtype(dtype(), [&]<typename T>() -> double {
    auto d = data<T>();
    if (flat_index < 0 || flat_index >= static_cast<std::int64_t>(d.size()))
      throw ShapeError("flat index out of range");
    return static_cast<double>(d[static_cast<std::size_t>(flat_index)]);
  });
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape().size())
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match " + shape_str(shape()));
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (std::int64_t i : index) {
    const std::int64_t extent = shape()[axis++];
    if (i < 0 || i >= extent) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * extent + i;
  }
  return at(flat);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

std::vector<double> Tensor::to_doubles() const {
  return visit_dtype(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  checked(impl_).requires_grad = value;
  return *this;
}

Tensor Tensor::grad() const {
  const auto& impl = checked(impl_);
  return impl.grad ? Tensor(impl.grad) : Tensor();
}

void Tensor::zero_grad() { checked(impl_).grad.reset(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  const auto& src = checked(impl_);
  impl->shape = src.shape;
  impl->dtype = src.dtype;
  impl->storage = src.storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor out = zeros(shape(), target);
  visit_dtype(dtype(), [&]<typename S>() {
    visit_dtype(target, [&]<typename D>() {
      auto src = data<S>();
      auto dst = out.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

Tensor Tensor::reshape(const Shape& new_shape) const {
  if (numel_of(new_shape) != numel())
    throw ShapeError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = new_shape;
  impl->dtype = dtype();
  impl->storage = checked(impl_).storage;
  Tensor out(std::move(impl));
  if (any_requires_grad({this})) {
    auto node = std::make_shared<Node>();
    node->name = "reshape";
    node->inputs = {*this};
    const Shape old_shape = shape();
    node->backward = [old_shape](const Tensor& g) { return std::vector<Tensor>{g.reshape(old_shape)}; };
    attach(out, std::move(node));
  }
  return out;
}

void Tensor::copy_from(const Tensor& other) {
  if (other.shape() != shape() || other.dtype() != dtype())
    throw ShapeError("copy_from: " + shape_str(other.shape()) + " into " + shape_str(shape()));
  checked(impl_).storage = other.impl_->storage;
}

const std::shared_ptr<Node>& Tensor::grad_fn() const { return checked(impl_).grad_fn; }

void Tensor::attach(Tensor& out, std::shared_ptr<Node> node) {
  if (!GradMode::enabled()) return;
  bool needs = false;
  for (const auto& in : node->inputs) needs = needs || (in.defined() && in.requires_grad());
  if (!needs) return;
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
}

bool any_requires_grad(std::initializer_list<const Tensor*> tensors) {
  if (!GradMode::enabled()) return false;
  for (const auto* t : tensors)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

namespace {

void accumulate_into(std::shared_ptr<TensorImpl>& slot, const Tensor& g) {
  if (!slot) {
    slot = std::make_shared<TensorImpl>(*g.clone().impl());
    return;
  }
  visit_dtype(g.dtype(), [&]<typename T>() {
    auto& dst = std::get<std::vector<T>>(slot->storage);
    auto src = g.data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

// Pending gradients may alias each other (an add node hands the same tensor to
// both inputs), so sums always go into fresh storage.
Tensor sum_of(const Tensor& a, const Tensor& b) {
  Tensor out = a.clone();
  visit_dtype(out.dtype(), [&]<typename T>() {
    auto d = out.data<T>();
    auto s = b.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  });
  return out;
}

}  // namespace

void Tensor::backward() const {
  if (numel() != 1)
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order of producer nodes.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node_impl, next] = stack.back();
    const auto& fn = node_impl->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].impl();
      if (child && child->grad_fn && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node_impl);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, Tensor> pending;
  pending[impl_.get()] = Tensor::full(shape(), 1.0, dtype());

  NoGradGuard no_grad;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node_impl = *it;
    auto found = pending.find(node_impl);
    if (found == pending.end()) continue;
    Tensor grad_out = std::move(found->second);
    pending.erase(found);
    const auto& fn = node_impl->grad_fn;
    auto grads = fn->backward(grad_out);
    for (std::size_t i = 0; i < fn->inputs.size(); ++i) {
      const Tensor& input = fn->inputs[i];
      if (i >= grads.size() || !grads[i].defined() || !input.defined() || !input.requires_grad())
        continue;
      if (grads[i].shape() != input.shape())
        throw ShapeError(std::string("gradient shape mismatch in ") + fn->name);
      TensorImpl* in_impl = input.impl();
      if (in_impl->grad_fn) {
        auto slot = pending.find(in_impl);
        if (slot == pending.end()) {
          pending.emplace(in_impl, grads[i]);
        } else {
          slot->second = sum_of(slot->second, grads[i]);
        }
      } else {
        accumulate_into(in_impl->grad, grads[i]);
      }
    }
  }
}

bool all_finite(const Tensor& t) {
  return visit_dtype(t.dtype(), [&]<typename T>() {
    for (T v : t.data<T>())
      if (!std::isfinite(v)) return false;
    return true;
  });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    return x.empty() || std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
  });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto x = a.to_doubles();
  const auto y = b.to_doubles();
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace srlab
