#include "madun/tensor.hpp"

#include "madun/error.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <numeric>

namespace madun {

std::size_t numel(Shape const &shape)
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string to_string(Shape const &shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
  : impl_{std::make_shared<Impl>()}
{
  impl_->data.assign(madun::numel(shape), T(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
  : impl_{std::make_shared<Impl>()}
{
  if (values.size() != madun::numel(shape)) {
    throw ShapeError(fmt::format("tensor of shape {} given {} values", to_string(shape), values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T> Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T> Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
  return full(Shape{1}, value, requires_grad);
}

template <typename T> Shape const &Tensor<T>::shape() const
{
  static Shape const empty{};
  return impl_ ? impl_->shape : empty;
}

template <typename T> std::size_t Tensor<T>::dim(std::size_t i) const
{
  if (i >= rank()) { throw ShapeError(fmt::format("dimension {} out of range for shape {}", i, to_string(shape()))); }
  return impl_->shape[i];
}

template <typename T> std::size_t Tensor<T>::numel() const { return impl_ ? impl_->data.size() : 0; }

template <typename T> std::span<T> Tensor<T>::data()
{
  return impl_ ? std::span<T>{impl_->data} : std::span<T>{};
}

template <typename T> std::span<T const> Tensor<T>::data() const
{
  return impl_ ? std::span<T const>{impl_->data} : std::span<T const>{};
}

template <typename T> T Tensor<T>::item() const
{
  if (numel() != 1) { throw ShapeError(fmt::format("item() on tensor of shape {}", to_string(shape()))); }
  return impl_->data[0];
}

template <typename T> bool Tensor<T>::requires_grad() const { return impl_ && impl_->requires_grad; }

template <typename T> void Tensor<T>::set_requires_grad(bool flag)
{
  if (!impl_) { throw ContractError("set_requires_grad on an undefined tensor"); }
  impl_->requires_grad = flag;
}

template <typename T> bool Tensor<T>::has_grad() const { return impl_ && !impl_->grad.empty(); }

template <typename T> std::span<T> Tensor<T>::grad()
{
  if (!impl_) { throw ContractError("grad() on an undefined tensor"); }
  if (impl_->grad.size() != impl_->data.size()) { impl_->grad.assign(impl_->data.size(), T(0)); }
  return impl_->grad;
}

template <typename T> std::span<T const> Tensor<T>::grad() const
{
  return has_grad() ? std::span<T const>{impl_->grad} : std::span<T const>{};
}

template <typename T> void Tensor<T>::zero_grad()
{
  if (!impl_) { return; }
  impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T> Tensor<T> Tensor<T>::clone() const
{
  if (!impl_) { return {}; }
  Tensor t;
  t.impl_ = std::make_shared<Impl>(*impl_);
  return t;
}

template <typename T> void Tensor<T>::copy_from(Tensor const &other)
{
  if (shape() != other.shape()) {
    throw ShapeError(fmt::format("copy_from {} into {}", to_string(other.shape()), to_string(shape())));
  }
  std::copy(other.impl_->data.begin(), other.impl_->data.end(), impl_->data.begin());
}

template <typename T> bool Tape<T>::wants(std::initializer_list<Tensor<T> const *> inputs) const
{
  if (!recording_) { return false; }
  return std::any_of(inputs.begin(), inputs.end(), [](Tensor<T> const *t) { return t && t->requires_grad(); });
}

template <typename T> void Tape<T>::record(Tensor<T> output, BackwardFn backward)
{
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(output), std::move(backward)});
}

template <typename T> std::size_t Tape<T>::backward(Tensor<T> const &loss)
{
  if (loss.numel() != 1) {
    throw ContractError(fmt::format("backward() needs a scalar loss, got shape {}", to_string(loss.shape())));
  }
  if (!loss.requires_grad()) { throw ContractError("backward() on a loss that was not recorded"); }
  for (auto &node : nodes_) {
    node.output.zero_grad();
  }
  Tensor<T> seed = loss;
  seed.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
  return nodes_.size();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

} // namespace madun
