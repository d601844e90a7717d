#pragma once

#include "tvgcn/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tvgcn {

// Differentiable primitives. Every function here records a backward rule on
// the active Tape<T> when at least one input requires grad.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// x[R x C] + bias[C] broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Sum of all elements as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// a[m x k] * b[k x n]. Throws dimension_error naming both shapes.
/// While alive, folds the branch taken by every piecewise-linear op
/// (activation signs, max-pool winners) into a hash. Two forward passes
/// with equal hashes took the same linear piece.
class BranchTrace {
public:
    BranchTrace();
    ~BranchTrace();
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    std::uint64_t hash() const { return hash_; }

    static void note(std::uint64_t code);
    static bool active() { return current_ != nullptr; }

private:
    std::uint64_t hash_ = 1469598103934665603ull;
    BranchTrace* previous_;
    static thread_local BranchTrace* current_;
};

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// max(x, slope * x); the derivative at exactly 0 is `slope`.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return leaky_relu(x, T(0));
}

/// Zero-padded cross-correlation. Input is [C x H x W] or [B x C x H x W];
/// kernels are [C_out x C_in x kH x kW]. The output keeps the input rank.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t padding);

/// Asymmetric variant: pad_begin zeros before each spatial axis, pad_end
/// after it. A negative pad_end drops trailing rows and columns.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t pad_begin, std::ptrdiff_t pad_end);

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Normalizes each column of x[B x D]. Train mode uses batch statistics and
/// updates the running estimates in place; eval mode uses the running ones.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     BatchNormOptions options = {});

/// Per-channel batch norm over x[B x C x H x W] (statistics over B, H, W).
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                       BatchNormOptions options = {});

/// [B x C x H x W] -> [B x C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Column-wise max of x[N x D] -> [D]. Gradient goes to the first argmax row.
template <typename T>
Tensor<T> max_pool_rows(const Tensor<T>& x);

/// Column-wise max inside consecutive blocks of `rows_per_segment` rows:
/// [B*N x D] -> [B x D].
template <typename T>
Tensor<T> segment_max_rows(const Tensor<T>& x, std::size_t rows_per_segment);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Rows of x[R x C] picked by index; repeated indices are allowed.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Row-wise softmax over the entries where mask != 0; other entries are 0.
/// Every row must keep at least one entry.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& scores, std::span<const unsigned char> mask);

/// Block-diagonal product: a[B*N x N] holds B square blocks, f[B*N x D].
/// Row block b of the result is a_b * f_b.
template <typename T>
Tensor<T> block_matmul(const Tensor<T>& a, const Tensor<T>& f);

/// f[B*N x D] -> [B*N*N x 2D]; row (b, i, j) is [f_bi, f_bj].
template <typename T>
Tensor<T> pair_concat(const Tensor<T>& f, std::size_t nodes);

/// m[B*N*N x D] with row (b, j, i) the message j -> i. Returns r[B*N x D]
/// with r_bi = sum over j of m_bji, summed in ascending j.
template <typename T>
Tensor<T> sum_senders(const Tensor<T>& m, std::size_t nodes);

/// Plain row-wise softmax of a [R x C] tensor (no tape).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits);

} // namespace tvgcn
