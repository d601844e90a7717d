#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tvgcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised when tensor shapes are incompatible with an operation.
class dimension_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf shows up in a value or gradient.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { train, eval };

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until something accumulates into it
    bool requires_grad = false;

    T* grad_data() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

/// Row-major n-dimensional array with shared ownership. Copies alias the
/// same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : Tensor(Shape{0}) {}

    explicit Tensor(Shape shape, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        node_->value.assign(shape_numel(shape), T(0));
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        if (shape_numel(shape) != values.size()) {
            throw dimension_error("tensor: shape " + shape_to_string(shape) + " needs " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    T& operator[](std::size_t i) { return node_->value[i]; }
    const T& operator[](std::size_t i) const { return node_->value[i]; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return {node_->grad_data(), node_->value.size()}; }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    T item() const {
        if (size() != 1) throw dimension_error("item: tensor has shape " + shape_to_string(shape()));
        return node_->value[0];
    }

    Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

    /// Same values, no gradient tracking.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    /// Throws numeric_error naming `what` if any element is NaN or Inf.
    void check_finite(std::string_view what) const;

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

/// Records primitive operations in execution order so gradients can be
/// propagated in reverse. Operations record onto the tape made active by a
/// TapeScope; with no active tape nothing is recorded.
template <typename T>
class Tape {
public:
    using NodePtr = std::shared_ptr<TensorNode<T>>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::string_view op, NodePtr output, std::vector<NodePtr> inputs,
                std::function<void()> backward_fn);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the recorded operations in
    /// reverse. Gradients accumulate into every input that requires grad.
    void backward(const Tensor<T>& loss);

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    std::vector<std::string> op_names() const;

    static Tape* active() { return active_; }

private:
    struct Entry {
        std::string op;
        NodePtr output;
        std::vector<NodePtr> inputs;
        std::function<void()> backward;
    };

    std::vector<Entry> entries_;

    template <typename>
    friend class TapeScope;
    static thread_local Tape* active_;
};

template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
    ~TapeScope() { Tape<T>::active_ = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Test hook: scales the upstream gradient of every recorded op named `op`
/// by `scale` during backward. Used to confirm the gradient checker catches
/// a broken backward rule.
void set_backward_fault(std::string op, double scale);
void clear_backward_fault();

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

} // namespace tvgcn
