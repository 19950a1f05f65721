#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace madun {

using Shape = std::vector<std::size_t>;

std::size_t numel(Shape const &shape);
std::string to_string(Shape const &shape);

/*
 * Dense row-major array with an optional gradient buffer.
 *
 * Tensor is a handle: copies share storage, like a framework tensor. Use
 * clone() for an independent copy. The gradient buffer is allocated lazily
 * the first time grad() is requested on a mutable handle.
 */
template <typename T> class Tensor
{
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  bool same_storage(Tensor const &other) const { return impl_ == other.impl_; }

  Shape const &shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<T>       data();
  std::span<T const> data() const;
  T                 *ptr() { return data().data(); }
  T const           *ptr() const { return data().data(); }
  T                  item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool               has_grad() const;
  std::span<T>       grad();
  std::span<T const> grad() const;
  void               zero_grad();

  Tensor clone() const;
  void   copy_from(Tensor const &other);

private:
  struct Impl
  {
    Shape          shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool           requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/*
 * Ordered record of differentiable operations.
 *
 * Ops append a node when recording is on and at least one input requires a
 * gradient. backward() seeds the loss gradient with 1, clears the gradients of
 * every recorded intermediate and replays the nodes in reverse order. Leaf
 * gradients accumulate, so shared leaves receive the sum over all uses.
 */
template <typename T> class Tape
{
public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  explicit Tape(bool recording)
    : recording_{recording}
  {
  }

  static Tape inference() { return Tape{false}; }

  bool recording() const { return recording_; }

  // True when an op over these inputs must be recorded.
  bool wants(std::initializer_list<Tensor<T> const *> inputs) const;

  // Marks output as requiring grad and appends the node.
  void record(Tensor<T> output, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  void        clear() { nodes_.clear(); }

  // Returns the number of nodes visited.
  std::size_t backward(Tensor<T> const &loss);

private:
  struct Node
  {
    Tensor<T>  output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool              recording_ = true;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

} // namespace madun
