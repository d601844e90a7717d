#include "tvgcn/ops.hpp"

#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>

namespace tvgcn {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const auto* x : inputs)
        if (x->requires_grad()) return true;
    return false;
}

template <typename T>
void attach(std::string_view op, Tensor<T>& out, std::vector<NodePtr<T>> inputs,
            std::function<void()> backward_fn) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(op, out.node(), std::move(inputs), std::move(backward_fn));
}

void require(bool ok, const std::string& message) {
    if (!ok) throw dimension_error(message);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
    require(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  ", got shape " + shape_to_string(s));
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_to_string(a.shape()) +
                                        " vs " + shape_to_string(b.shape()));
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    Tensor<T> out(a.shape(), std::move(v));
    if (tracking({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        attach<T>("add", out, {an, bn}, [an, bn, on] {
            const T* g = on->grad.data();
            for (const auto& n : {an, bn}) {
                if (!n->requires_grad) continue;
                T* d = n->grad_data();
                for (std::size_t i = 0; i < on->value.size(); ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    require_rank(x.shape(), 2, "add_bias");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    require(bias.size() == cols, "add_bias: bias of size " + std::to_string(bias.size()) +
                                     " for input " + shape_to_string(x.shape()));
    std::vector<T> v(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = x[r * cols + c] + bias[c];
    Tensor<T> out(x.shape(), std::move(v));
    if (tracking({&x, &bias})) {
        auto xn = x.node(), bn = bias.node(), on = out.node();
        attach<T>("add_bias", out, {xn, bn}, [xn, bn, on, rows, cols] {
            const T* g = on->grad.data();
            if (xn->requires_grad) {
                T* d = xn->grad_data();
                for (std::size_t i = 0; i < rows * cols; ++i) d[i] += g[i];
            }
            if (bn->requires_grad) {
                T* d = bn->grad_data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * factor;
    Tensor<T> out(x.shape(), std::move(v));
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        attach<T>("scale", out, {xn}, [xn, on, factor] {
            T* d = xn->grad_data();
            for (std::size_t i = 0; i < on->value.size(); ++i) d[i] += on->grad[i] * factor;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0;
    for (const T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        attach<T>("sum", out, {xn}, [xn, on] {
            T* d = xn->grad_data();
            const T g = on->grad[0];
            for (std::size_t i = 0; i < xn->value.size(); ++i) d[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                shape_to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out(Shape{m, n});
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
    if (tracking({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        attach<T>("matmul", out, {an, bn}, [an, bn, on, m, n, k] {
            const T* g = on->grad.data();
            if (an->requires_grad) detail::gemm_nt(m, k, n, g, bn->value.data(), an->grad_data());
            if (bn->requires_grad) detail::gemm_tn(k, n, m, an->value.data(), g, bn->grad_data());
        });
    }
    return out;
}

thread_local BranchTrace* BranchTrace::current_ = nullptr;

BranchTrace::BranchTrace() : previous_(current_) { current_ = this; }
BranchTrace::~BranchTrace() { current_ = previous_; }

void BranchTrace::note(std::uint64_t code) {
    if (!current_) return;
    current_->hash_ = (current_->hash_ ^ code) * 1099511628211ull;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > T(0) ? x[i] : slope * x[i];
    if (BranchTrace::active())
        for (std::size_t i = 0; i < v.size(); ++i) BranchTrace::note(x[i] > T(0) ? i * 2 + 1 : i * 2);
    Tensor<T> out(x.shape(), std::move(v));
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        attach<T>("leaky_relu", out, {xn}, [xn, on, slope] {
            T* d = xn->grad_data();
            const T* g = on->grad.data();
            const T* xv = xn->value.data();
            for (std::size_t i = 0; i < xn->value.size(); ++i)
                d[i] += xv[i] > T(0) ? g[i] : slope * g[i];
        });
    }
    return out;
}

namespace {

struct ConvGeometry {
    std::size_t batch, in_c, h, w, out_c, kh, kw, stride, pad, out_h, out_w;
    std::size_t col_rows() const { return in_c * kh * kw; }
    std::size_t col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* cols) {
    const std::size_t p = g.col_cols();
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix =
                            static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                            ix < static_cast<long>(g.w);
                        row[oy * g.out_w + ox] =
                            inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                                         static_cast<std::size_t>(ix)]
                                   : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* img) {
    const std::size_t p = g.col_cols();
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix =
                            static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        img[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                            static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
                    }
                }
            }
}

} // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t padding) {
    return conv2d(input, kernels, stride, padding, static_cast<std::ptrdiff_t>(padding));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t pad_begin, std::ptrdiff_t pad_end) {
    const std::size_t padding = pad_begin;
    const bool batched = input.rank() == 4;
    require(input.rank() == 3 || batched,
            "conv2d: input must be [C x H x W] or [B x C x H x W], got " +
                shape_to_string(input.shape()));
    require_rank(kernels.shape(), 4, "conv2d kernels");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    ConvGeometry g{};
    g.batch = batched ? input.dim(0) : 1;
    const std::size_t off = batched ? 1 : 0;
    g.in_c = input.dim(off);
    g.h = input.dim(off + 1);
    g.w = input.dim(off + 2);
    g.out_c = kernels.dim(0);
    g.kh = kernels.dim(2);
    g.kw = kernels.dim(3);
    g.stride = stride;
    g.pad = padding;
    require(kernels.dim(1) == g.in_c, "conv2d: kernels " + shape_to_string(kernels.shape()) +
                                          " do not match input " + shape_to_string(input.shape()));
    const auto signed_span = [&](std::size_t extent) {
        return static_cast<std::ptrdiff_t>(extent + padding) + pad_end;
    };
    if (signed_span(g.h) < static_cast<std::ptrdiff_t>(g.kh) ||
        signed_span(g.w) < static_cast<std::ptrdiff_t>(g.kw)) {
        throw std::invalid_argument("conv2d: kernel " + shape_to_string(kernels.shape()) +
                                    " larger than padded input " + shape_to_string(input.shape()));
    }
    const auto span_h = static_cast<std::size_t>(signed_span(g.h));
    const auto span_w = static_cast<std::size_t>(signed_span(g.w));
    if ((span_h - g.kh) % stride != 0 || (span_w - g.kw) % stride != 0) {
        throw std::invalid_argument("conv2d: output size is not a positive integer for input " +
                                    shape_to_string(input.shape()) + ", kernel " +
                                    shape_to_string(kernels.shape()) + ", stride " +
                                    std::to_string(stride) + ", padding " +
                                    std::to_string(padding) + "/" + std::to_string(pad_end));
    }
    g.out_h = (span_h - g.kh) / stride + 1;
    g.out_w = (span_w - g.kw) / stride + 1;

    const std::size_t in_img = g.in_c * g.h * g.w;
    const std::size_t out_img = g.out_c * g.out_h * g.out_w;
    Shape out_shape = batched ? Shape{g.batch, g.out_c, g.out_h, g.out_w}
                              : Shape{g.out_c, g.out_h, g.out_w};
    Tensor<T> out(out_shape);
    std::vector<T> cols(g.col_rows() * g.col_cols());
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(g, input.data().data() + b * in_img, cols.data());
        detail::gemm_nn(g.out_c, g.col_cols(), g.col_rows(), kernels.data().data(), cols.data(),
                        out.data().data() + b * out_img);
    }
    if (tracking({&input, &kernels})) {
        auto xn = input.node(), kn = kernels.node(), on = out.node();
        attach<T>("conv2d", out, {xn, kn}, [xn, kn, on, g, in_img, out_img] {
            std::vector<T> buf(g.col_rows() * g.col_cols());
            for (std::size_t b = 0; b < g.batch; ++b) {
                const T* gout = on->grad.data() + b * out_img;
                if (kn->requires_grad) {
                    im2col(g, xn->value.data() + b * in_img, buf.data());
                    detail::gemm_nt(g.out_c, g.col_rows(), g.col_cols(), gout, buf.data(),
                                    kn->grad_data());
                }
                if (xn->requires_grad) {
                    std::fill(buf.begin(), buf.end(), T(0));
                    detail::gemm_tn(g.col_rows(), g.col_cols(), g.out_c, kn->value.data(), gout,
                                    buf.data());
                    col2im_add(g, buf.data(), xn->grad_data() + b * in_img);
                }
            }
        });
    }
    return out;
}

namespace {

// Shared batch-norm kernel. Elements are addressed as (outer, channel, inner)
// with statistics per channel over outer * inner elements.
template <typename T>
Tensor<T> batch_norm_impl(const char* op, const Tensor<T>& x, std::size_t outer,
                          std::size_t channels, std::size_t inner, const Tensor<T>& gamma,
                          const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                          Mode mode, BatchNormOptions opt) {
    require(gamma.size() == channels && beta.size() == channels &&
                running_mean.size() == channels && running_var.size() == channels,
            std::string(op) + ": parameter size does not match " + std::to_string(channels) +
                " channels");
    const std::size_t count = outer * inner;
    if (mode == Mode::train && count < 2) {
        throw std::invalid_argument(std::string(op) +
                                    ": train mode needs at least 2 values per channel, input " +
                                    shape_to_string(x.shape()));
    }
    std::vector<T> inv_std(channels);
    std::vector<T> xhat(x.size());
    std::vector<T> y(x.size());
    const T* xv = x.data().data();
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = 0, var = 0;
        if (mode == Mode::train) {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) mean += xv[(o * channels + c) * inner + i];
            mean /= static_cast<double>(count);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const double d = xv[(o * channels + c) * inner + i] - mean;
                    var += d * d;
                }
            const double unbiased = var / static_cast<double>(count - 1);
            var /= static_cast<double>(count);
            running_mean[c] = static_cast<T>((1 - opt.momentum) * running_mean[c] + opt.momentum * mean);
            running_var[c] =
                static_cast<T>((1 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double is = 1.0 / std::sqrt(var + opt.eps);
        inv_std[c] = static_cast<T>(is);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = (o * channels + c) * inner + i;
                xhat[idx] = static_cast<T>((xv[idx] - mean) * is);
                y[idx] = gamma[c] * xhat[idx] + beta[c];
            }
    }
    Tensor<T> out(x.shape(), std::move(y));
    if (tracking({&x, &gamma, &beta})) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        attach<T>(op, out, {xn, gn, bn},
                  [xn, gn, bn, on, outer, channels, inner, count, mode,
                   inv_std = std::move(inv_std), xhat = std::move(xhat)] {
                      const T* g = on->grad.data();
                      for (std::size_t c = 0; c < channels; ++c) {
                          double sum_g = 0, sum_gx = 0;
                          for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < inner; ++i) {
                                  const std::size_t idx = (o * channels + c) * inner + i;
                                  sum_g += g[idx];
                                  sum_gx += static_cast<double>(g[idx]) * xhat[idx];
                              }
                          if (gn->requires_grad) gn->grad_data()[c] += static_cast<T>(sum_gx);
                          if (bn->requires_grad) bn->grad_data()[c] += static_cast<T>(sum_g);
                          if (!xn->requires_grad) continue;
                          T* d = xn->grad_data();
                          const double scale_c = static_cast<double>(gn->value[c]) * inv_std[c];
                          const double n = static_cast<double>(count);
                          for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < inner; ++i) {
                                  const std::size_t idx = (o * channels + c) * inner + i;
                                  if (mode == Mode::train) {
                                      d[idx] += static_cast<T>(
                                          scale_c / n * (n * g[idx] - sum_g - xhat[idx] * sum_gx));
                                  } else {
                                      d[idx] += static_cast<T>(scale_c * g[idx]);
                                  }
                              }
                      }
                  });
    }
    return out;
}

} // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     BatchNormOptions options) {
    require_rank(x.shape(), 2, "batch_norm");
    return batch_norm_impl("batch_norm", x, x.dim(0), x.dim(1), 1, gamma, beta, running_mean,
                           running_var, mode, options);
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                       BatchNormOptions options) {
    require_rank(x.shape(), 4, "batch_norm2d");
    return batch_norm_impl("batch_norm2d", x, x.dim(0), x.dim(1), x.dim(2) * x.dim(3), gamma,
                           beta, running_mean, running_var, mode, options);
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "global_avg_pool");
    const std::size_t rows = x.dim(0) * x.dim(1), inner = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{x.dim(0), x.dim(1)});
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0;
        for (std::size_t i = 0; i < inner; ++i) acc += x[r * inner + i];
        out[r] = static_cast<T>(acc / static_cast<double>(inner));
    }
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        attach<T>("global_avg_pool", out, {xn}, [xn, on, rows, inner] {
            T* d = xn->grad_data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T g = on->grad[r] / static_cast<T>(inner);
                for (std::size_t i = 0; i < inner; ++i) d[r * inner + i] += g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> segment_max_rows(const Tensor<T>& x, std::size_t rows_per_segment) {
    require_rank(x.shape(), 2, "segment_max_rows");
    if (x.dim(0) == 0 || rows_per_segment == 0) {
        throw std::invalid_argument("max_pool_rows: empty input");
    }
    require(x.dim(0) % rows_per_segment == 0,
            "segment_max_rows: " + std::to_string(x.dim(0)) + " rows not divisible into blocks of " +
                std::to_string(rows_per_segment));
    const std::size_t segments = x.dim(0) / rows_per_segment, cols = x.dim(1);
    Tensor<T> out(Shape{segments, cols});
    std::vector<std::size_t> argmax(segments * cols);
    for (std::size_t s = 0; s < segments; ++s)
        for (std::size_t c = 0; c < cols; ++c) {
            std::size_t best = s * rows_per_segment;
            for (std::size_t r = best + 1; r < (s + 1) * rows_per_segment; ++r)
                if (x[r * cols + c] > x[best * cols + c]) best = r;
            argmax[s * cols + c] = best;
            out[s * cols + c] = x[best * cols + c];
            BranchTrace::note(best);
        }
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        attach<T>("max_pool_rows", out, {xn}, [xn, on, cols, argmax = std::move(argmax)] {
            T* d = xn->grad_data();
            for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i] * cols + i % cols] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> max_pool_rows(const Tensor<T>& x) {
    require_rank(x.shape(), 2, "max_pool_rows");
    if (x.dim(0) == 0) throw std::invalid_argument("max_pool_rows: empty input");
    return reshape(segment_max_rows(x, x.dim(0)), Shape{x.dim(1)});
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    require_rank(logits.shape(), 2, "softmax_cross_entropy");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    require(labels.size() == batch, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                        " labels for logits " + shape_to_string(logits.shape()));
    if (batch == 0) throw std::invalid_argument("softmax_cross_entropy: empty batch");
    std::vector<double> probs(batch * classes);
    double total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                                    " outside [0, " + std::to_string(classes) + ")");
        }
        const T* row = logits.data().data() + b * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double z = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            probs[b * classes + c] = std::exp(row[c] - mx);
            z += probs[b * classes + c];
        }
        for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= z;
        total += mx + std::log(z) - row[label];
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch)));
    out.check_finite("softmax_cross_entropy");
    if (tracking({&logits})) {
        auto ln = logits.node(), on = out.node();
        std::vector<int> lab(labels.begin(), labels.end());
        attach<T>("softmax_cross_entropy", out, {ln},
                  [ln, on, batch, classes, probs = std::move(probs), lab = std::move(lab)] {
                      T* d = ln->grad_data();
                      const double g = static_cast<double>(on->grad[0]) / static_cast<double>(batch);
                      for (std::size_t b = 0; b < batch; ++b)
                          for (std::size_t c = 0; c < classes; ++c) {
                              const double onehot = static_cast<int>(c) == lab[b] ? 1.0 : 0.0;
                              d[b * classes + c] +=
                                  static_cast<T>(g * (probs[b * classes + c] - onehot));
                          }
                  });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(0) == rows,
                "concat_cols: incompatible part " + shape_to_string(p.shape()));
        total += p.dim(1);
    }
    Tensor<T> out(Shape{rows, total});
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t w = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data().data() + r * w, w, out.data().data() + r * total + offset);
        offset += w;
    }
    bool track = false;
    for (const auto& p : parts) track = track || tracking({&p});
    if (track) {
        std::vector<NodePtr<T>> ins;
        for (const auto& p : parts) ins.push_back(p.node());
        auto on = out.node();
        attach<T>("concat_cols", out, ins, [ins, on, rows, total, offsets] {
            for (std::size_t k = 0; k < ins.size(); ++k) {
                if (!ins[k]->requires_grad) continue;
                const std::size_t w = ins[k]->shape[1];
                T* d = ins[k]->grad_data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < w; ++c)
                        d[r * w + c] += on->grad[r * total + offsets[k] + c];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(1) == cols,
                "concat_rows: incompatible part " + shape_to_string(p.shape()));
        rows += p.dim(0);
    }
    std::vector<T> v;
    v.reserve(rows * cols);
    for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
    Tensor<T> out(Shape{rows, cols}, std::move(v));
    bool track = false;
    for (const auto& p : parts) track = track || tracking({&p});
    if (track) {
        std::vector<NodePtr<T>> ins;
        for (const auto& p : parts) ins.push_back(p.node());
        auto on = out.node();
        attach<T>("concat_rows", out, ins, [ins, on] {
            std::size_t offset = 0;
            for (const auto& in : ins) {
                const std::size_t n = in->value.size();
                if (in->requires_grad) {
                    T* d = in->grad_data();
                    for (std::size_t i = 0; i < n; ++i) d[i] += on->grad[offset + i];
                }
                offset += n;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    require_rank(x.shape(), 2, "gather_rows");
    const std::size_t cols = x.dim(1);
    Tensor<T> out(Shape{rows.size(), cols});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= x.dim(0)) {
            throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]) +
                                    " outside input " + shape_to_string(x.shape()));
        }
        std::copy_n(x.data().data() + rows[r] * cols, cols, out.data().data() + r * cols);
    }
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        attach<T>("gather_rows", out, {xn}, [xn, on, cols, idx = std::move(idx)] {
            T* d = xn->grad_data();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < cols; ++c) d[idx[r] * cols + c] += on->grad[r * cols + c];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    require(shape_numel(shape) == x.size(), "reshape: cannot view " + shape_to_string(x.shape()) +
                                                " as " + shape_to_string(shape));
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (tracking({&x})) {
        auto xn = x.node(), on = out.node();
        attach<T>("reshape", out, {xn}, [xn, on] {
            T* d = xn->grad_data();
            for (std::size_t i = 0; i < on->value.size(); ++i) d[i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& scores, std::span<const unsigned char> mask) {
    require_rank(scores.shape(), 2, "masked_softmax_rows");
    require(mask.size() == scores.size(), "masked_softmax_rows: mask size " +
                                              std::to_string(mask.size()) + " for scores " +
                                              shape_to_string(scores.shape()));
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    Tensor<T> out(scores.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c)
            if (mask[r * cols + c]) mx = std::max(mx, static_cast<double>(scores[r * cols + c]));
        if (!std::isfinite(mx)) {
            throw std::invalid_argument("masked_softmax_rows: row " + std::to_string(r) +
                                        " keeps no entries");
        }
        double z = 0;
        std::vector<double> e(cols, 0.0);
        for (std::size_t c = 0; c < cols; ++c)
            if (mask[r * cols + c]) {
                e[c] = std::exp(scores[r * cols + c] - mx);
                z += e[c];
            }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<T>(e[c] / z);
    }
    if (tracking({&scores})) {
        auto sn = scores.node(), on = out.node();
        attach<T>("masked_softmax_rows", out, {sn}, [sn, on, rows, cols] {
            T* d = sn->grad_data();
            const T* a = on->value.data();
            const T* g = on->grad.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0;
                for (std::size_t c = 0; c < cols; ++c)
                    dot += static_cast<double>(a[r * cols + c]) * g[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    if (a[i] != T(0)) d[i] += static_cast<T>(a[i] * (g[i] - dot));
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> block_matmul(const Tensor<T>& a, const Tensor<T>& f) {
    require(a.rank() == 2 && f.rank() == 2 && a.dim(1) > 0 && a.dim(0) % a.dim(1) == 0 &&
                a.dim(0) == f.dim(0),
            "block_matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                shape_to_string(f.shape()));
    const std::size_t n = a.dim(1), blocks = a.dim(0) / n, d = f.dim(1);
    Tensor<T> out(Shape{blocks * n, d});
    for (std::size_t b = 0; b < blocks; ++b)
        detail::gemm_nn(n, d, n, a.data().data() + b * n * n, f.data().data() + b * n * d,
                        out.data().data() + b * n * d);
    if (tracking({&a, &f})) {
        auto an = a.node(), fn = f.node(), on = out.node();
        attach<T>("block_matmul", out, {an, fn}, [an, fn, on, n, blocks, d] {
            for (std::size_t b = 0; b < blocks; ++b) {
                const T* g = on->grad.data() + b * n * d;
                if (an->requires_grad)
                    detail::gemm_nt(n, n, d, g, fn->value.data() + b * n * d,
                                    an->grad_data() + b * n * n);
                if (fn->requires_grad)
                    detail::gemm_tn(n, d, n, an->value.data() + b * n * n, g,
                                    fn->grad_data() + b * n * d);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> pair_concat(const Tensor<T>& f, std::size_t nodes) {
    require(f.rank() == 2 && nodes > 0 && f.dim(0) % nodes == 0,
            "pair_concat: " + shape_to_string(f.shape()) + " is not a stack of " +
                std::to_string(nodes) + "-node graphs");
    const std::size_t blocks = f.dim(0) / nodes, d = f.dim(1);
    Tensor<T> out(Shape{blocks * nodes * nodes, 2 * d});
    const T* src = f.data().data();
    T* dst = out.data().data();
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < nodes; ++i)
            for (std::size_t j = 0; j < nodes; ++j) {
                T* row = dst + ((b * nodes + i) * nodes + j) * 2 * d;
                std::copy_n(src + (b * nodes + i) * d, d, row);
                std::copy_n(src + (b * nodes + j) * d, d, row + d);
            }
    if (tracking({&f})) {
        auto fnode = f.node(), on = out.node();
        attach<T>("pair_concat", out, {fnode}, [fnode, on, blocks, nodes, d] {
            T* g = fnode->grad_data();
            const T* go = on->grad.data();
            for (std::size_t b = 0; b < blocks; ++b)
                for (std::size_t i = 0; i < nodes; ++i)
                    for (std::size_t j = 0; j < nodes; ++j) {
                        const T* row = go + ((b * nodes + i) * nodes + j) * 2 * d;
                        T* gi = g + (b * nodes + i) * d;
                        T* gj = g + (b * nodes + j) * d;
                        for (std::size_t c = 0; c < d; ++c) {
                            gi[c] += row[c];
                            gj[c] += row[d + c];
                        }
                    }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_senders(const Tensor<T>& m, std::size_t nodes) {
    require(m.rank() == 2 && nodes > 0 && m.dim(0) % (nodes * nodes) == 0,
            "sum_senders: " + shape_to_string(m.shape()) + " is not a stack of " +
                std::to_string(nodes) + "x" + std::to_string(nodes) + " message blocks");
    const std::size_t blocks = m.dim(0) / (nodes * nodes), d = m.dim(1);
    Tensor<T> out(Shape{blocks * nodes, d});
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < nodes; ++i) {
            T* r = out.data().data() + (b * nodes + i) * d;
            for (std::size_t j = 0; j < nodes; ++j) {
                const T* msg = m.data().data() + ((b * nodes + j) * nodes + i) * d;
                for (std::size_t c = 0; c < d; ++c) r[c] += msg[c];
            }
        }
    if (tracking({&m})) {
        auto mn = m.node(), on = out.node();
        attach<T>("sum_senders", out, {mn}, [mn, on, blocks, nodes, d] {
            T* g = mn->grad_data();
            for (std::size_t b = 0; b < blocks; ++b)
                for (std::size_t i = 0; i < nodes; ++i) {
                    const T* gr = on->grad.data() + (b * nodes + i) * d;
                    for (std::size_t j = 0; j < nodes; ++j) {
                        T* gm = g + ((b * nodes + j) * nodes + i) * d;
                        for (std::size_t c = 0; c < d; ++c) gm[c] += gr[c];
                    }
                }
        });
    }
    return out;
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
    require_rank(logits.shape(), 2, "softmax_rows");
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    std::vector<T> p(logits.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = logits.data().data() + r * cols;
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double z = 0;
        std::vector<double> e(cols);
        for (std::size_t c = 0; c < cols; ++c) {
            e[c] = std::exp(row[c] - mx);
            z += e[c];
        }
        for (std::size_t c = 0; c < cols; ++c) p[r * cols + c] = static_cast<T>(e[c] / z);
    }
    return p;
}

#define TVGCN_INSTANTIATE_OPS(T)                                                                   \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> scale(const Tensor<T>&, T);                                                 \
    template Tensor<T> sum(const Tensor<T>&);                                                      \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                            \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);       \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,            \
                              std::ptrdiff_t);                                                  \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                  Tensor<T>&, Tensor<T>&, Mode, BatchNormOptions);                 \
    template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                    Tensor<T>&, Tensor<T>&, Mode, BatchNormOptions);               \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
    template Tensor<T> max_pool_rows(const Tensor<T>&);                                            \
    template Tensor<T> segment_max_rows(const Tensor<T>&, std::size_t);                            \
    template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);              \
    template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
    template Tensor<T> masked_softmax_rows(const Tensor<T>&, std::span<const unsigned char>);      \
    template Tensor<T> block_matmul(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> pair_concat(const Tensor<T>&, std::size_t);                                 \
    template Tensor<T> sum_senders(const Tensor<T>&, std::size_t);                                 \
    template std::vector<T> softmax_rows(const Tensor<T>&);

TVGCN_INSTANTIATE_OPS(float)
TVGCN_INSTANTIATE_OPS(double)

} // namespace tvgcn
