#pragma once

#include "tvgcn/ops.hpp"
#include "tvgcn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tvgcn {

using Rng = std::mt19937_64;

/// A named tensor owned by a model. Buffers (batch-norm running stats) are
/// saved with the weights but never optimized.
template <typename T>
struct Parameter {
    std::string name;
    std::string group;
    Tensor<T> tensor;
    bool trainable = true;
};

template <typename T>
class ParamList {
public:
    void add(std::string name, std::string group, Tensor<T> tensor, bool trainable = true) {
        items_.push_back(Parameter<T>{std::move(name), std::move(group), std::move(tensor), trainable});
    }

    std::vector<Parameter<T>>& items() { return items_; }
    const std::vector<Parameter<T>>& items() const { return items_; }

    std::vector<Tensor<T>> trainable(const std::string& group = {}) const {
        std::vector<Tensor<T>> out;
        for (const auto& p : items_)
            if (p.trainable && (group.empty() || p.group == group)) out.push_back(p.tensor);
        return out;
    }

    std::vector<Tensor<T>> trainable_except(const std::string& group) const {
        std::vector<Tensor<T>> out;
        for (const auto& p : items_)
            if (p.trainable && p.group != group) out.push_back(p.tensor);
        return out;
    }

    void zero_grad() {
        for (auto& p : items_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter<T>> items_;
};

/// Fills t with N(0, gain^2 * 2 / fan_in).
template <typename T>
void he_normal(Tensor<T>& t, std::size_t fan_in, Rng& rng, double gain = 1.0) {
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0)
        : weight(Shape{in, out}, true), bias(Shape{out}, true) {
        he_normal(weight, in, rng, gain);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias); }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    void collect(ParamList<T>& params, const std::string& prefix, const std::string& group) const {
        params.add(prefix + ".weight", group, weight);
        params.add(prefix + ".bias", group, bias);
    }

    Tensor<T> weight; // [in x out]
    Tensor<T> bias;
};

template <typename T>
class BatchNorm {
public:
    BatchNorm() = default;
    explicit BatchNorm(std::size_t channels)
        : gamma(Shape{channels}, std::vector<T>(channels, T(1)), true),
          beta(Shape{channels}, true),
          running_mean(Shape{channels}),
          running_var(Shape{channels}, std::vector<T>(channels, T(1))) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        return batch_norm(x, gamma, beta, running_mean, running_var, mode, options);
    }
    Tensor<T> forward2d(const Tensor<T>& x, Mode mode) {
        return batch_norm2d(x, gamma, beta, running_mean, running_var, mode, options);
    }

    void collect(ParamList<T>& params, const std::string& prefix, const std::string& group) const {
        params.add(prefix + ".gamma", group, gamma);
        params.add(prefix + ".beta", group, beta);
        params.add(prefix + ".running_mean", group, running_mean, false);
        params.add(prefix + ".running_var", group, running_var, false);
    }

    Tensor<T> gamma, beta, running_mean, running_var;
    BatchNormOptions options;
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
           std::size_t padding_, Rng& rng)
        : weight(Shape{out, in, kernel, kernel}, true), stride(stride_), padding(padding_) {
        he_normal(weight, in * kernel * kernel, rng);
    }

    /// Windows that would run past the padded input are dropped, giving
    /// H' = floor((H + 2p - k) / stride) + 1.
    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.rank() < 3) return conv2d(x, weight, stride, padding);
        const std::size_t k = weight.dim(2), h = x.dim(x.rank() - 2);
        const std::size_t span = h + 2 * padding;
        const std::size_t extra = span >= k ? (span - k) % stride : 0;
        return conv2d(x, weight, stride, padding,
                      static_cast<std::ptrdiff_t>(padding) - static_cast<std::ptrdiff_t>(extra));
    }

    void collect(ParamList<T>& params, const std::string& prefix, const std::string& group) const {
        params.add(prefix + ".weight", group, weight);
    }

    Tensor<T> weight;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

} // namespace tvgcn
