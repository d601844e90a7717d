#pragma once

#include "tvgcn/tensor.hpp"

#include <span>
#include <vector>

namespace tvgcn {

struct SgdOptions {
    double learning_rate = 5e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    /// Throws std::invalid_argument unless lr > 0, 0 <= momentum < 1, wd >= 0.
    void validate() const;
};

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
template <typename T>
void sgd_momentum_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity,
                       const SgdOptions& options);

/// SGD with momentum and L2 weight decay over a fixed parameter list.
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(std::vector<Tensor<T>> params, SgdOptions options);

    void step();
    void set_learning_rate(double lr);
    double learning_rate() const { return options_.learning_rate; }
    const SgdOptions& options() const { return options_; }

    const std::vector<Tensor<T>>& params() const { return params_; }
    std::vector<Tensor<T>>& velocities() { return velocities_; }
    const std::vector<Tensor<T>>& velocities() const { return velocities_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<Tensor<T>> velocities_;
    SgdOptions options_;
};

/// base_lr * 0.5^floor(epoch / step_epochs)
double lr_at_epoch(double base_lr, int epoch, int step_epochs = 10);

extern template class SgdMomentum<float>;
extern template class SgdMomentum<double>;

} // namespace tvgcn
