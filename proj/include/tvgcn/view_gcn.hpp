#pragma once

#include "tvgcn/nn.hpp"
#include "tvgcn/view_graph.hpp"

#include <span>
#include <vector>

namespace tvgcn {

struct GcnConfig {
    std::size_t feature_dim = 64;     // D
    std::size_t selector_hidden = 64; // d
    std::size_t num_classes = 26;     // N_c
    std::size_t num_views = 8;        // N^0
    std::size_t levels = 3;           // L
    std::size_t n_neighbors = 3;
    double slope = 0.01;
    double view_loss_weight = 1.0;
    bool share_relation_mlp = true;
    std::size_t fps_seed = 0;

    void validate() const;

    /// N^0 = num_views, N^{l+1} = ceil(N^l / 2).
    std::vector<std::size_t> level_sizes() const;

    /// Number of selector slots summed over all coarsening steps.
    std::size_t selector_count() const;
};

/// Greedy max-min selection of m indices starting at seed_index. Each step
/// picks the point whose distance to the already selected set is largest,
/// breaking ties by lowest index.
std::vector<std::size_t> furthest_point_sampling(std::span<const Vec3> coords, std::size_t m,
                                                 std::size_t seed_index);

/// {center} plus its n nearest viewpoints, in ascending index order.
std::vector<std::size_t> sampling_neighborhood(std::span<const Vec3> coords, std::size_t center,
                                               std::size_t n);

/// Picks the neighbour whose selector output has the largest top-class
/// probability; equal values resolve to the lowest node index.
std::size_t select_view(std::span<const std::size_t> neighbors, std::span<const double> max_probability);

/// Viewpoint indices sorted lexicographically by coordinate. The model
/// processes views in this order so that its output does not depend on
/// the order in which views are supplied.
std::vector<std::size_t> canonical_view_order(std::span<const Vec3> coords);

template <typename T>
struct LocalConvParams {
    Tensor<T> weight; // W^l, D x D
    Linear<T> affine;
    BatchNorm<T> norm;
    bool use_norm = true;

    LocalConvParams() = default;
    LocalConvParams(std::size_t dim, Rng& rng);
};

template <typename T>
struct MessageParams {
    Linear<T> relation; // tau: 2D -> D
    Linear<T> fusion;   // Omega: 2D -> D
    BatchNorm<T> fusion_norm;
    bool use_norm = true;

    MessageParams() = default;
    MessageParams(std::size_t dim, Rng& rng);
};

template <typename T>
struct ViewSelector {
    Linear<T> hidden; // D -> d
    Linear<T> output; // d -> N_c

    ViewSelector() = default;
    ViewSelector(std::size_t dim, std::size_t hidden_dim, std::size_t classes, Rng& rng);

    Tensor<T> logits(const Tensor<T>& x, T slope) const;
};

/// F <- LeakyReLU(BN(affine(A F W))). features and adjacency are stacks of
/// per-sample blocks: [B*N x D] and [B*N x N].
template <typename T>
Tensor<T> local_graph_conv(const Tensor<T>& features, const Tensor<T>& adjacency,
                           LocalConvParams<T>& params, Mode mode, T slope);

/// m_ij = LeakyReLU(tau([F_i, F_j])) for every ordered pair in each sample;
/// [B*N x D] -> [B*N*N x D], row (b, i, j).
template <typename T>
Tensor<T> nonlocal_messages(const Tensor<T>& features, std::size_t nodes,
                            const MessageParams<T>& params, T slope);

/// r_i = sum_j m_ji, then f_i <- LeakyReLU(BN(Omega([f_i, r_i]))).
template <typename T>
Tensor<T> fuse_messages(const Tensor<T>& features, const Tensor<T>& messages, std::size_t nodes,
                        MessageParams<T>& params, Mode mode, T slope);

template <typename T>
struct SelectorTerm {
    std::size_t level = 0;
    std::size_t slot = 0;
    std::size_t neighbors = 0; // Q
    Tensor<T> logits;          // [B*Q x N_c], sample-major
};

struct LevelTrace {
    std::size_t nodes = 0;
    std::vector<std::vector<Vec3>> coords;            // per sample
    std::vector<std::vector<std::size_t>> selected;   // per sample, next-level node -> node here
};

template <typename T>
struct GcnOutput {
    std::size_t batch = 0;
    Tensor<T> descriptor; // [B x L*D]
    Tensor<T> logits;     // [B x N_c]
    std::vector<Tensor<T>> pooled;
    std::vector<SelectorTerm<T>> view_terms;
    std::vector<LevelTrace> levels;
};

/// Hierarchical view-graph aggregation: per level local graph convolution,
/// max pooling, non-local message passing and selective view sampling,
/// followed by the concatenated descriptor and a linear classifier.
template <typename T>
class ViewGcn {
public:
    ViewGcn(const GcnConfig& config, Rng& rng);

    /// features: [B*N x D], sample-major, row b*N + i belongs to viewpoints[i].
    GcnOutput<T> forward(const Tensor<T>& features, std::span<const Vec3> viewpoints,
                         std::size_t batch, Mode mode);

    /// descriptor [B x L*D] -> logits [B x N_c]
    Tensor<T> classify(const Tensor<T>& descriptor) const;

    void collect(ParamList<T>& params) const;

    const GcnConfig& config() const { return config_; }
    RelationMlp<T>& relation_mlp(std::size_t level);
    LocalConvParams<T>& local_params(std::size_t level) { return local_.at(level); }
    MessageParams<T>& message_params(std::size_t level) { return messages_.at(level); }
    ViewSelector<T>& selector(std::size_t level, std::size_t slot) { return selectors_.at(level).at(slot); }
    Linear<T>& classifier() { return classifier_; }

private:
    GcnConfig config_;
    std::vector<RelationMlp<T>> relation_;
    std::vector<LocalConvParams<T>> local_;
    std::vector<MessageParams<T>> messages_;
    std::vector<std::vector<ViewSelector<T>>> selectors_;
    Linear<T> classifier_;
};

/// L = CE(logits, Y) + weight * sum over every selector output of CE(., Y),
/// averaged over the batch. Throws if the selector terms do not cover every
/// coarsening slot.
template <typename T>
Tensor<T> total_loss(const GcnOutput<T>& output, std::span<const int> labels, const GcnConfig& config);

extern template class ViewGcn<float>;
extern template class ViewGcn<double>;

} // namespace tvgcn
