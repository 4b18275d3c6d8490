// Dense NCHW tensor with tape-based reverse-mode autodiff.
//
// Tensors are shared handles: copying a Tensor aliases the same storage.
// Values are immutable after construction except through mutable_data(),
// which exists for the optimizer and for tests that craft parameters.
// Gradients live next to the values and accumulate across backward()
// calls on leaf tensors until zero_grad() is called.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace awnet {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

[[noreturn]] inline void shape_error(const std::string& msg) {
    throw std::invalid_argument(msg);
}

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(const std::vector<T>&)> backward_fn;

    std::size_t numel() const { return value.size(); }
    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    void accumulate(std::span<const T> g) {
        ensure_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
};

}  // namespace detail

// Disables graph recording for the lifetime of the guard (inference,
// finite-difference probes). Thread-local, nestable.
class NoGradGuard {
  public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor supports f32/f64 only");

  public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static Tensor full(Shape shape, T value) {
        auto n = std::make_shared<detail::Node<T>>();
        n->value.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value) { return full(Shape{1}, value); }

    static Tensor from_vector(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size())
            shape_error("from_vector: shape " + shape_str(shape) + " wants " +
                        std::to_string(shape_numel(shape)) + " values, got " +
                        std::to_string(values.size()));
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        return Tensor(std::move(n));
    }

    static Tensor uniform(Shape shape, T lo, T hi, Rng& rng) {
        std::uniform_real_distribution<T> dist(lo, hi);
        auto n = std::make_shared<detail::Node<T>>();
        n->value.resize(shape_numel(shape));
        n->shape = std::move(shape);
        for (auto& v : n->value) v = dist(rng);
        return Tensor(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t extent(std::size_t i) const { return node_->shape[i]; }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    // Mutation hook for the optimizer and for parameter surgery in tests.
    // Must not be called on tensors that already participate in a graph.
    std::span<T> mutable_data() { return node_->value; }

    T item() const {
        if (numel() != 1)
            shape_error("item: tensor " + shape_str(shape()) + " is not a scalar");
        return node_->value[0];
    }

    T at(std::initializer_list<std::size_t> idx) const {
        return node_->value[flat_index(idx)];
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool flag) {
        if (flag && !node_->is_leaf())
            shape_error("set_requires_grad: only leaf tensors may be marked");
        node_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }

    Tensor grad_tensor() const {
        if (!has_grad()) shape_error("grad_tensor: no gradient present");
        return from_vector(shape(), node_->grad);
    }

    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->numel(), T(0));
    }

    // Value copy detached from the graph.
    Tensor detach() const {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    // Reverse-mode sweep from a scalar. Interior gradients are reset per
    // call; leaf gradients accumulate until zero_grad().
    void backward() const {
        if (numel() != 1)
            shape_error("backward: loss must be scalar, got " + shape_str(shape()));
        if (!node_->requires_grad) return;

        std::vector<detail::Node<T>*> order = topo_order();
        for (auto* n : order)
            if (!n->is_leaf()) n->grad.assign(n->numel(), T(0));
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>* n = *it;
            if (n->backward_fn) n->backward_fn(n->grad);
        }
    }

    const NodePtr& node() const { return node_; }

  private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        const Shape& s = node_->shape;
        if (idx.size() != s.size())
            shape_error("at: rank mismatch for " + shape_str(s));
        std::size_t flat = 0, axis = 0;
        for (std::size_t i : idx) {
            if (i >= s[axis]) shape_error("at: index out of range");
            flat = flat * s[axis] + i;
            ++axis;
        }
        return flat;
    }

    std::vector<detail::Node<T>*> topo_order() const {
        std::vector<detail::Node<T>*> order;
        std::unordered_set<detail::Node<T>*> seen;
        // Iterative post-order DFS; graphs can be thousands of nodes deep.
        struct Frame {
            detail::Node<T>* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                detail::Node<T>* p = f.node->parents[f.next_parent++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
        return order;
    }

    NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace awnet
