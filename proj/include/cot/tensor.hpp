#pragma once

// Minimal reverse-mode autodiff over dense row-major arrays.
//
// A Tensor is a handle to a graph node. Results of differentiable ops that
// depend on a requires_grad input record their inputs and a backward closure;
// backward() walks the recorded graph once in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cot/error.hpp"

namespace cot {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    // Interior node whose backward closure has already run and been released.
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled() noexcept;

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    // Direct write access; meant for leaves (parameter init and updates).
    std::span<T> mutable_values() { return node_->value; }
    T item() const;
    T at(std::size_t i) const { return node_->value.at(i); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    // Empty span when no gradient has been accumulated.
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad();

    // Internal: graph plumbing for op implementations.
    const NodePtr& node() const { return node_; }
    static Tensor wrap(NodePtr node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    NodePtr node_;
};

// Creates an op result. When grad mode is on and any input requires grad,
// the result records its inputs and backward closure.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn);

// Accumulates d(loss)/d(x) into every reachable requires_grad tensor.
// Throws NonScalarLoss for non-scalar input and DoubleBackward when any part of
// the graph has already been back-propagated.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cot
