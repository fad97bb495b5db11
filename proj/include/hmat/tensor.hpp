#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hmat/errors.hpp"

namespace hmat {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Scalar width of a graph. Standard is used for training and inference;
/// wide exists for finite-difference gradient checks.
enum class Precision { Standard, Wide };

template <typename T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Precision::Standard : Precision::Wide;
}

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Impl;

template <typename T>
struct Node {
    std::uint64_t seq = 0;
    const char* name = "";
    std::vector<std::shared_ptr<Impl<T>>> inputs;
    // Reads the output's gradient, accumulates into inputs' gradients.
    std::function<void(const Impl<T>& out)> backward;
    bool consumed = false;
};

template <typename T>
struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool retain_grad = false;
    std::shared_ptr<Node<T>> grad_fn;

    bool is_leaf() const { return grad_fn == nullptr; }

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

inline std::atomic<std::uint64_t>& sequence_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

inline bool& grad_mode_disabled() {
    thread_local bool disabled = false;
    return disabled;
}

}  // namespace detail

/// RAII guard that stops graph recording on the current thread.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode_disabled()) { detail::grad_mode_disabled() = true; }
    ~NoGradGuard() { detail::grad_mode_disabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Dense row-major array with optional reverse-mode gradient tracking.
///
/// Handles share storage; copying a Tensor aliases the same values. Values of
/// a non-leaf tensor never change after construction. Leaves may be updated
/// in place through mutable_data() (optimizer steps, test perturbations).
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : impl_(std::make_shared<detail::Impl<T>>()) {
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + hmat::to_string(shape));
        impl_->data.assign(numel(shape), fill);
        impl_->shape = std::move(shape);
        impl_->requires_grad = requires_grad;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel(shape) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             hmat::to_string(shape));
        Tensor t(std::move(shape), T(0), requires_grad);
        t.impl_->data = std::move(values);
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    T operator[](std::size_t i) const { return impl_->data[i]; }

    std::span<T> mutable_data() {
        if (!impl_->is_leaf()) throw GraphError("in-place write to a non-leaf tensor");
        return impl_->data;
    }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + hmat::to_string(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) {
        if (!impl_->is_leaf()) throw GraphError("requires_grad can only be toggled on leaves");
        impl_->requires_grad = on;
    }
    void retain_grad() { impl_->retain_grad = true; }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Accumulated gradient; zeros when nothing has flowed in yet.
    std::vector<T> grad() const {
        if (impl_->grad.empty()) return std::vector<T>(size(), T(0));
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    bool is_leaf() const { return impl_->is_leaf(); }

    /// Fresh leaf holding a copy of the values, cut from any graph.
    Tensor detach() const { return from(shape(), impl_->data, false); }

    Tensor clone_leaf(bool requires_grad) const { return from(shape(), impl_->data, requires_grad); }

    bool all_finite() const {
        return std::all_of(impl_->data.begin(), impl_->data.end(), [](T v) { return std::isfinite(v); });
    }

    /// Reverse-mode accumulation from a single-element tensor.
    void backward() const;

    // Internal access for op implementations.
    const std::shared_ptr<detail::Impl<T>>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::Impl<T>> impl) : impl_(std::move(impl)) {}

   private:
    std::shared_ptr<detail::Impl<T>> impl_;
};

template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& t, bool requires_grad = false) {
    std::vector<U> v(t.data().begin(), t.data().end());
    return Tensor<U>::from(t.shape(), std::move(v), requires_grad);
}

namespace detail {

enum class FiniteCheck { Strict, AllowNegInf };

inline bool finite_ok(float v, FiniteCheck c) {
    return std::isfinite(v) || (c == FiniteCheck::AllowNegInf && v == -std::numeric_limits<float>::infinity());
}
inline bool finite_ok(double v, FiniteCheck c) {
    return std::isfinite(v) || (c == FiniteCheck::AllowNegInf && v == -std::numeric_limits<double>::infinity());
}

/// Wraps freshly computed values into a tensor and, when any input tracks
/// gradients, records a graph node whose backward is built lazily by `make_bw`.
template <typename T, typename MakeBackward>
Tensor<T> record(const char* name, Shape shape, std::vector<T> values,
                 std::initializer_list<const Tensor<T>*> inputs, MakeBackward&& make_bw,
                 FiniteCheck check = FiniteCheck::Strict) {
    for (const T& v : values)
        if (!finite_ok(v, check)) throw NonFiniteError(std::string("non-finite value produced by ") + name);
    auto out = std::make_shared<Impl<T>>();
    out->shape = std::move(shape);
    out->data = std::move(values);
    bool any = false;
    if (!grad_mode_disabled())
        for (auto* in : inputs) any = any || in->requires_grad();
    if (any) {
        auto node = std::make_shared<Node<T>>();
        node->seq = sequence_counter().fetch_add(1) + 1;
        node->name = name;
        for (auto* in : inputs) node->inputs.push_back(in->impl());
        node->backward = make_bw();
        out->requires_grad = true;
        out->grad_fn = std::move(node);
    }
    return Tensor<T>(std::move(out));
}

/// Gradient buffer of an input if it participates in backward, else nullptr.
template <typename T>
std::vector<T>* grad_of(const std::shared_ptr<Impl<T>>& in) {
    return in->requires_grad ? &in->ensure_grad() : nullptr;
}

}  // namespace detail

template <typename T>
void Tensor<T>::backward() const {
    using detail::Impl;
    if (size() != 1) throw GraphError("backward requires a scalar loss, got shape " + hmat::to_string(shape()));
    if (!impl_->requires_grad) throw GraphError("backward on a tensor that does not require grad");
    if (impl_->grad_fn && impl_->grad_fn->consumed)
        throw GraphError("backward called twice on the same graph; run a fresh forward pass");

    std::vector<Impl<T>*> order;
    std::unordered_set<Impl<T>*> seen;
    std::vector<Impl<T>*> stack{impl_.get()};
    while (!stack.empty()) {
        Impl<T>* cur = stack.back();
        stack.pop_back();
        if (!seen.insert(cur).second) continue;
        if (!cur->grad_fn) continue;
        if (cur->grad_fn->consumed)
            throw GraphError("graph segment already consumed by an earlier backward");
        order.push_back(cur);
        for (auto& in : cur->grad_fn->inputs)
            if (in->requires_grad) stack.push_back(in.get());
    }
    // Reverse execution order.
    std::sort(order.begin(), order.end(),
              [](const Impl<T>* a, const Impl<T>* b) { return a->grad_fn->seq > b->grad_fn->seq; });

    impl_->ensure_grad()[0] += T(1);
    for (Impl<T>* cur : order) {
        auto node = cur->grad_fn;
        if (!cur->grad.empty()) node->backward(*cur);
        node->backward = nullptr;
        node->consumed = true;
        if (cur != impl_.get() && !cur->retain_grad) {
            cur->grad.clear();
            cur->grad.shrink_to_fit();
        }
    }
}

}  // namespace hmat
