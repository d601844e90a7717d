#include "tvgcn/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tvgcn {

void SgdOptions::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("sgd: learning rate must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd: weight decay must be >= 0");
}

template <typename T>
void sgd_momentum_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity,
                       const SgdOptions& options) {
    if (velocity.size() != param.size() || (!grad.empty() && grad.size() != param.size())) {
        throw dimension_error("sgd_momentum_step: param has " + std::to_string(param.size()) +
                              " elements, grad " + std::to_string(grad.size()) + ", velocity " +
                              std::to_string(velocity.size()));
    }
    const T lr = static_cast<T>(options.learning_rate);
    const T mu = static_cast<T>(options.momentum);
    const T wd = static_cast<T>(options.weight_decay);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad.empty() ? T(0) : grad[i];
        velocity[i] = mu * velocity[i] + g + wd * param[i];
        param[i] -= lr * velocity[i];
    }
}

template <typename T>
SgdMomentum<T>::SgdMomentum(std::vector<Tensor<T>> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
    options_.validate();
    velocities_.reserve(params_.size());
    for (const auto& p : params_) velocities_.emplace_back(p.shape());
}

template <typename T>
void SgdMomentum<T>::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        sgd_momentum_step<T>(params_[i].data(), params_[i].grad(), velocities_[i].data(), options_);
    }
}

template <typename T>
void SgdMomentum<T>::set_learning_rate(double lr) {
    SgdOptions next = options_;
    next.learning_rate = lr;
    next.validate();
    options_ = next;
}

double lr_at_epoch(double base_lr, int epoch, int step_epochs) {
    if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
    if (step_epochs <= 0) throw std::invalid_argument("lr_at_epoch: step must be positive");
    return base_lr * std::pow(0.5, epoch / step_epochs);
}

template void sgd_momentum_step<float>(std::span<float>, std::span<const float>, std::span<float>,
                                       const SgdOptions&);
template void sgd_momentum_step<double>(std::span<double>, std::span<const double>,
                                        std::span<double>, const SgdOptions&);
template class SgdMomentum<float>;
template class SgdMomentum<double>;

} // namespace tvgcn
