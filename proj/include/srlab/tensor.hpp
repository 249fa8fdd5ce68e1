#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "srlab/error.hpp"

namespace srlab {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

/// Invokes `fn.template operator()<T>()` with T matching the runtime dtype.
template <typename F>
decltype(auto) visit_dtype(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

class Tensor;
struct TensorImpl;

/// Backward closure of one recorded op. Receives the gradient of the op's
/// output and returns one gradient per input (undefined where not needed).
struct Node {
  std::vector<Tensor> inputs;
  std::function<std::vector<Tensor>(const Tensor& grad_output)> backward;
  const char* name = "op";
};

/// Dense row-major tensor with reverse-mode autodiff. Copies share storage;
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);
  static Tensor from_vector(const Shape& shape, std::vector<float> values);
  static Tensor from_vector(const Shape& shape, std::vector<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;
  DType dtype() const;

  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  /// Element at flat index, widened to double.
  double at(std::int64_t flat_index) const;
  /// Element at a full multi-index, widened to double.
  double at(std::initializer_list<std::int64_t> index) const;
  /// Value of a one-element tensor.
  double item() const;
  /// All values widened to double.
  std::vector<double> to_doubles() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  /// Accumulated gradient; undefined if backward never reached this tensor.
  Tensor grad() const;
  void zero_grad();

  /// Shares storage, drops the autodiff history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;
  Tensor reshape(const Shape& shape) const;

  /// Overwrites this tensor's values in place (shape and dtype must match).
  void copy_from(const Tensor& other);

  /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
  /// reachable leaf with requires_grad.
  void backward() const;

  const std::shared_ptr<Node>& grad_fn() const;
  TensorImpl* impl() const noexcept { return impl_.get(); }
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  /// Records `node` as the producer of `out` when grad mode is on and any
  /// input requires grad.
  static void attach(Tensor& out, std::shared_ptr<Node> node);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::variant<std::vector<float>, std::vector<double>> storage;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;
  std::shared_ptr<Node> grad_fn;
};

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool value);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool any_requires_grad(std::initializer_list<const Tensor*> tensors);

/// True when every element is finite.
bool all_finite(const Tensor& t);

/// Bitwise equality of shape, dtype and data.
bool bit_equal(const Tensor& a, const Tensor& b);

/// Largest absolute elementwise difference (shapes must match).
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace srlab
