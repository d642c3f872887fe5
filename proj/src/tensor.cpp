#include "cot/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace cot {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::DivisionByNearZero: return "DivisionByNearZero";
        case Errc::NonFiniteDisparity: return "NonFiniteDisparity";
        case Errc::NonScalarLoss: return "NonScalarLoss";
        case Errc::DoubleBackward: return "DoubleBackward";
        case Errc::InvalidArch: return "InvalidArch";
        case Errc::ThresholdOutOfRange: return "ThresholdOutOfRange";
        case Errc::EmptyNormalizer: return "EmptyNormalizer";
        case Errc::NegativeInput: return "NegativeInput";
        case Errc::DegenerateCrop: return "DegenerateCrop";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
        case Errc::InvalidSpec: return "InvalidSpec";
        case Errc::InvalidConfig: return "InvalidConfig";
        case Errc::MalformedHeader: return "MalformedHeader";
        case Errc::TruncatedData: return "TruncatedData";
        case Errc::UnsupportedFormat: return "UnsupportedFormat";
        case Errc::WrongBitDepth: return "WrongBitDepth";
        case Errc::EmptyMask: return "EmptyMask";
        case Errc::MissingOcclusionTruth: return "MissingOcclusionTruth";
        case Errc::Io: return "Io";
        case Errc::AlreadyExists: return "AlreadyExists";
    }
    return "Unknown";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw Error(Errc::ShapeMismatch, "negative dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw Error(Errc::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                             " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw Error(Errc::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_) node_->grad.clear();
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward_fn);
    }
    return Tensor<T>::wrap(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw Error(Errc::NonScalarLoss,
                    "backward() needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
    }
    using Node = detail::Node<T>;
    Node* root = loss.node().get();
    if (root->consumed) throw Error(Errc::DoubleBackward, "graph already back-propagated");
    if (!root->requires_grad) return;

    // Iterative post-order DFS; `order` ends up topologically sorted. Owning
    // pointers keep every node alive while inputs are released below.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{loss.node(), 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            std::shared_ptr<Node> child = node->inputs[next++];
            if (child->requires_grad && !visited.contains(child.get())) {
                if (child->consumed) throw Error(Errc::DoubleBackward, "graph already back-propagated");
                visited.insert(child.get());
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& node = **it;
        if (!node.backward) continue;  // leaf
        node.ensure_grad();
        node.backward(node);
        node.backward = nullptr;
        node.inputs.clear();
        node.consumed = true;
    }
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(detail::Node<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace cot
