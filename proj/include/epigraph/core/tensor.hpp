#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "epigraph/core/errors.hpp"

namespace epigraph {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

class Tape;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;
    bool leaf = true;
    const Tape* tape = nullptr;  // tape that produced this tensor, if recorded
    std::size_t tape_node = 0;
};

}  // namespace detail

// Dense row-major array of doubles. Copies share storage; operations never
// mutate their inputs. Leaves created with requires_grad accumulate gradients
// when a Tape records operations on them.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        for (auto d : shape)
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
        if (element_count(shape) != values.size())
            throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                                 " values");
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }
    static Tensor vector(std::vector<double> values, bool requires_grad = false) {
        const auto n = values.size();
        return Tensor({n}, std::move(values), requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(values), requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<const double> values() const { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }

    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }

    // In-place access for optimizer updates and checkpoint loading. Only valid
    // on leaves; recorded intermediates are immutable.
    std::span<double> mutable_values() {
        if (!impl_->leaf) throw ContractError("cannot mutate a recorded intermediate tensor");
        return impl_->data;
    }

    bool requires_grad() const { return impl_->requires_grad; }
    bool is_leaf() const { return impl_->leaf; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    // Handle of the recording node, if this tensor was produced on a tape.
    const Tape* tape() const { return impl_->tape; }

    // Copy of the values with no gradient tracking.
    Tensor detach() const { return Tensor(shape(), impl_->data, false); }

    std::shared_ptr<detail::TensorImpl> const& impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Records the backward rules of operations in execution order. Constructing a
// Tape makes it the active tape of the current thread until it is destroyed;
// operations executed with no active tape are not recorded.
class Tape {
public:
    Tape() : previous_(active_slot()) { active_slot() = this; }
    ~Tape() { active_slot() = previous_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_slot(); }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Clears recorded nodes so the tape can be reused for the next step.
    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

    std::size_t record(std::function<void()> backward_rule) {
        if (consumed_) throw ContractError("tape already ran backward; reset() before recording again");
        nodes_.push_back(std::move(backward_rule));
        return nodes_.size() - 1;
    }

    void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
        if (nodes_.empty()) throw ContractError("backward on an empty tape");
        if (consumed_) throw ContractError("backward called twice on the same tape without reset");
        if (loss.tape() != this) throw ContractError("loss was not recorded on this tape");
        consumed_ = true;
        loss.impl()->grad.assign(1, 1.0);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    friend class NoGradScope;

    static Tape*& active_slot() {
        thread_local Tape* slot = nullptr;
        return slot;
    }

    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    Tape* previous_;
};

// Temporarily disables recording on the current thread (evaluation mode).
class NoGradScope {
public:
    NoGradScope() : saved_(Tape::active_slot()) { Tape::active_slot() = nullptr; }
    ~NoGradScope() { Tape::active_slot() = saved_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* saved_;
};

namespace detail {

inline std::vector<double>& grad_buffer(TensorImpl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    return impl.grad;
}

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline bool should_record(std::span<const Tensor> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

// Registers `rule(output_grad)` on the active tape and marks `out` as a
// recorded, gradient-carrying intermediate.
template <class Rule>
void attach(Tensor& out, Rule rule) {
    Tape* tape = Tape::active();
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->leaf = false;
    impl->tape = tape;
    impl->tape_node = tape->record([impl, rule = std::move(rule)]() {
        if (impl->grad.empty()) return;
        rule(std::span<const double>(impl->grad));
    });
}

}  // namespace detail

}  // namespace epigraph
