#include "tvgcn/tensor.hpp"

#include <cmath>
#include <optional>
#include <sstream>

namespace tvgcn {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
void Tensor<T>::check_finite(std::string_view what) const {
    for (std::size_t i = 0; i < size(); ++i) {
        if (!std::isfinite(node_->value[i])) {
            throw numeric_error(std::string(what) + ": non-finite value at flat index " +
                                std::to_string(i));
        }
    }
}

namespace {

struct BackwardFault {
    std::string op;
    double scale;
};

std::optional<BackwardFault>& backward_fault() {
    static std::optional<BackwardFault> fault;
    return fault;
}

} // namespace

void set_backward_fault(std::string op, double scale) {
    backward_fault() = BackwardFault{std::move(op), scale};
}

void clear_backward_fault() { backward_fault().reset(); }

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
void Tape<T>::record(std::string_view op, NodePtr output, std::vector<NodePtr> inputs,
                     std::function<void()> backward_fn) {
    entries_.push_back(Entry{std::string(op), std::move(output), std::move(inputs),
                             std::move(backward_fn)});
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.op);
    return names;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
        throw dimension_error("backward: loss must be a scalar, got shape " +
                             shape_to_string(loss.shape()));
    }
    loss.check_finite("backward: loss");
    auto& seed = loss.node()->grad;
    seed.assign(1, T(1));

    const auto& fault = backward_fault();
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        Entry& e = *it;
        if (e.output->grad.empty()) continue;
        if (fault && fault->op == e.op) {
            for (auto& g : e.output->grad) g = static_cast<T>(g * fault->scale);
        }
        e.backward();
        for (const auto& in : e.inputs) {
            for (const T g : in->grad) {
                if (!std::isfinite(g)) {
                    throw numeric_error("backward: non-finite gradient produced by op '" + e.op +
                                        "'");
                }
            }
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

} // namespace tvgcn
