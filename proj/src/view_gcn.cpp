#include "tvgcn/view_gcn.hpp"

#include "tvgcn/backbone.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tvgcn {

void GcnConfig::validate() const {
    if (feature_dim == 0 || selector_hidden == 0) throw std::invalid_argument("gcn: widths must be positive");
    if (num_classes < 2) throw std::invalid_argument("gcn: num_classes must be >= 2");
    if (num_views < 2) throw std::invalid_argument("gcn: need at least 2 views");
    if (levels < 1) throw std::invalid_argument("gcn: need at least 1 level");
    if (n_neighbors < 1 || n_neighbors > num_views - 1) {
        throw std::invalid_argument("gcn: n_neighbors = " + std::to_string(n_neighbors) + " outside [1, " +
                                    std::to_string(num_views - 1) + "]");
    }
    if (!(slope >= 0.0 && slope < 1.0)) throw std::invalid_argument("gcn: slope must lie in [0, 1)");
    if (fps_seed >= num_views) throw std::invalid_argument("gcn: fps_seed must index a view");
    if (view_loss_weight < 0.0) throw std::invalid_argument("gcn: view_loss_weight must be >= 0");
}

std::vector<std::size_t> GcnConfig::level_sizes() const {
    std::vector<std::size_t> sizes{num_views};
    while (sizes.size() < levels) sizes.push_back((sizes.back() + 1) / 2);
    return sizes;
}

std::size_t GcnConfig::selector_count() const {
    const auto sizes = level_sizes();
    return std::accumulate(sizes.begin() + 1, sizes.end(), std::size_t{0});
}

std::vector<std::size_t> furthest_point_sampling(std::span<const Vec3> coords, std::size_t m,
                                                 std::size_t seed_index) {
    const std::size_t n = coords.size();
    if (m < 1 || m > n) {
        throw std::invalid_argument("furthest_point_sampling: m = " + std::to_string(m) + " outside [1, " +
                                    std::to_string(n) + "]");
    }
    if (seed_index >= n) throw std::invalid_argument("furthest_point_sampling: seed index out of range");
    std::vector<std::size_t> picked{seed_index};
    std::vector<bool> taken(n, false);
    taken[seed_index] = true;
    std::vector<double> min_dist(n);
    for (std::size_t i = 0; i < n; ++i) min_dist[i] = squared_distance(coords[i], coords[seed_index]);
    while (picked.size() < m) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (best == n || min_dist[i] > min_dist[best]) best = i;
        }
        picked.push_back(best);
        taken[best] = true;
        for (std::size_t i = 0; i < n; ++i)
            min_dist[i] = std::min(min_dist[i], squared_distance(coords[i], coords[best]));
    }
    return picked;
}

std::vector<std::size_t> sampling_neighborhood(std::span<const Vec3> coords, std::size_t center,
                                               std::size_t n) {
    if (center >= coords.size()) throw std::out_of_range("sampling_neighborhood: center out of range");
    std::vector<std::size_t> out = nearest_neighbors(coords, n)[center];
    out.push_back(center);
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t select_view(std::span<const std::size_t> neighbors, std::span<const double> max_probability) {
    if (neighbors.empty()) throw std::invalid_argument("select_view: empty neighbourhood");
    if (neighbors.size() != max_probability.size())
        throw dimension_error("select_view: one probability per neighbour required");
    std::size_t best = 0;
    for (std::size_t q = 1; q < neighbors.size(); ++q) {
        if (max_probability[q] > max_probability[best] ||
            (max_probability[q] == max_probability[best] && neighbors[q] < neighbors[best]))
            best = q;
    }
    return neighbors[best];
}

std::vector<std::size_t> canonical_view_order(std::span<const Vec3> coords) {
    std::vector<std::size_t> order(coords.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });
    return order;
}

template <typename T>
LocalConvParams<T>::LocalConvParams(std::size_t dim, Rng& rng)
    : weight(Shape{dim, dim}, true), affine(dim, dim, rng), norm(dim) {
    he_normal(weight, dim, rng);
}

template <typename T>
MessageParams<T>::MessageParams(std::size_t dim, Rng& rng)
    : relation(2 * dim, dim, rng), fusion(2 * dim, dim, rng), fusion_norm(dim) {}

template <typename T>
ViewSelector<T>::ViewSelector(std::size_t dim, std::size_t hidden_dim, std::size_t classes, Rng& rng)
    : hidden(dim, hidden_dim, rng), output(hidden_dim, classes, rng, output_head_gain) {}

template <typename T>
Tensor<T> ViewSelector<T>::logits(const Tensor<T>& x, T slope) const {
    return output(leaky_relu(hidden(x), slope));
}

template <typename T>
Tensor<T> local_graph_conv(const Tensor<T>& features, const Tensor<T>& adjacency,
                           LocalConvParams<T>& params, Mode mode, T slope) {
    Tensor<T> h = matmul(block_matmul(adjacency, features), params.weight);
    h = params.affine(h);
    if (params.use_norm) h = params.norm.forward(h, mode);
    return leaky_relu(h, slope);
}

template <typename T>
Tensor<T> nonlocal_messages(const Tensor<T>& features, std::size_t nodes,
                            const MessageParams<T>& params, T slope) {
    return leaky_relu(params.relation(pair_concat(features, nodes)), slope);
}

template <typename T>
Tensor<T> fuse_messages(const Tensor<T>& features, const Tensor<T>& messages, std::size_t nodes,
                        MessageParams<T>& params, Mode mode, T slope) {
    if (messages.rank() != 2 || features.rank() != 2 || messages.dim(0) != features.dim(0) * nodes ||
        messages.dim(1) != features.dim(1)) {
        throw dimension_error("fuse_messages: messages " + shape_to_string(messages.shape()) +
                              " do not match features " + shape_to_string(features.shape()));
    }
    Tensor<T> received = sum_senders(messages, nodes);
    Tensor<T> h = params.fusion(concat_cols<T>({features, received}));
    if (params.use_norm) h = params.fusion_norm.forward(h, mode);
    return leaky_relu(h, slope);
}

template <typename T>
ViewGcn<T>::ViewGcn(const GcnConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const T slope = static_cast<T>(config_.slope);
    const auto sizes = config_.level_sizes();
    const std::size_t relation_count = config_.share_relation_mlp ? 1 : config_.levels;
    for (std::size_t i = 0; i < relation_count; ++i) relation_.emplace_back(rng, slope);
    for (std::size_t l = 0; l < config_.levels; ++l) {
        local_.emplace_back(config_.feature_dim, rng);
        if (l + 1 < config_.levels) {
            messages_.emplace_back(config_.feature_dim, rng);
            std::vector<ViewSelector<T>> slots;
            for (std::size_t j = 0; j < sizes[l + 1]; ++j)
                slots.emplace_back(config_.feature_dim, config_.selector_hidden, config_.num_classes, rng);
            selectors_.push_back(std::move(slots));
        }
    }
    classifier_ = Linear<T>(config_.levels * config_.feature_dim, config_.num_classes, rng, output_head_gain);
}

template <typename T>
RelationMlp<T>& ViewGcn<T>::relation_mlp(std::size_t level) {
    return relation_.at(config_.share_relation_mlp ? 0 : level);
}

template <typename T>
GcnOutput<T> ViewGcn<T>::forward(const Tensor<T>& features, std::span<const Vec3> viewpoints,
                                 std::size_t batch, Mode mode) {
    const auto sizes = config_.level_sizes();
    const std::size_t views = sizes[0], dim = config_.feature_dim;
    if (viewpoints.size() != views)
        throw dimension_error("view gcn: expected " + std::to_string(views) + " viewpoints, got " +
                              std::to_string(viewpoints.size()));
    if (batch == 0 || features.shape() != Shape{batch * views, dim}) {
        throw dimension_error("view gcn: features " + shape_to_string(features.shape()) + " do not match " +
                              std::to_string(batch) + " samples of " + std::to_string(views) + " x " +
                              std::to_string(dim));
    }
    const T slope = static_cast<T>(config_.slope);

    const auto order = canonical_view_order(viewpoints);
    std::vector<std::size_t> rows;
    std::vector<Vec3> ordered;
    for (auto k : order) ordered.push_back(viewpoints[k]);
    for (std::size_t b = 0; b < batch; ++b)
        for (auto k : order) rows.push_back(b * views + k);
    Tensor<T> f = gather_rows(features, rows);
    std::vector<std::vector<Vec3>> coords(batch, ordered);

    GcnOutput<T> out;
    out.batch = batch;
    for (std::size_t l = 0; l < config_.levels; ++l) {
        const std::size_t n = sizes[l];
        const std::size_t k = std::min(config_.n_neighbors, n - 1);

        // Adjacency from the relation MLP, sparsified on viewpoint distance.
        Tensor<T> g(Shape{batch * n * n, 10});
        std::vector<unsigned char> mask;
        mask.reserve(batch * n * n);
        for (std::size_t b = 0; b < batch; ++b) {
            const Tensor<T> gb = relation_inputs<T>(coords[b]);
            std::copy(gb.data().begin(), gb.data().end(), g.data().begin() + b * n * n * 10);
            const auto mb = knn_mask(coords[b], k);
            mask.insert(mask.end(), mb.begin(), mb.end());
        }
        Tensor<T> scores = reshape(relation_mlp(l)(g), Shape{batch * n, n});
        Tensor<T> adjacency = masked_softmax_rows(scores, mask);

        Tensor<T> local = local_graph_conv(f, adjacency, local_[l], mode, slope);
        out.pooled.push_back(segment_max_rows(local, n));

        LevelTrace trace;
        trace.nodes = n;
        trace.coords = coords;
        if (l + 1 == config_.levels) {
            out.levels.push_back(std::move(trace));
            break;
        }

        Tensor<T> messages = nonlocal_messages(local, n, messages_[l], slope);
        Tensor<T> fused = fuse_messages(local, messages, n, messages_[l], mode, slope);

        const std::size_t next = sizes[l + 1];
        std::vector<std::vector<std::size_t>> fps(batch);
        for (std::size_t b = 0; b < batch; ++b)
            fps[b] = furthest_point_sampling(coords[b], next, l == 0 ? config_.fps_seed : 0);

        std::vector<std::size_t> next_rows(batch * next);
        std::vector<std::vector<Vec3>> next_coords(batch, std::vector<Vec3>(next));
        trace.selected.assign(batch, std::vector<std::size_t>(next));
        for (std::size_t j = 0; j < next; ++j) {
            std::vector<std::vector<std::size_t>> hoods(batch);
            std::vector<std::size_t> gather;
            for (std::size_t b = 0; b < batch; ++b) {
                hoods[b] = sampling_neighborhood(coords[b], fps[b][j], k);
                for (auto q : hoods[b]) gather.push_back(b * n + q);
            }
            const std::size_t hood = hoods[0].size();
            Tensor<T> logits = selectors_[l][j].logits(gather_rows(fused, gather), slope);
            const auto probs = softmax_rows(logits);
            const std::size_t classes = config_.num_classes;
            for (std::size_t b = 0; b < batch; ++b) {
                std::vector<double> best(hood);
                for (std::size_t q = 0; q < hood; ++q) {
                    const auto* p = probs.data() + (b * hood + q) * classes;
                    best[q] = static_cast<double>(*std::max_element(p, p + classes));
                }
                const std::size_t chosen = select_view(hoods[b], best);
                trace.selected[b][j] = chosen;
                next_rows[b * next + j] = b * n + chosen;
                next_coords[b][j] = coords[b][chosen];
            }
            out.view_terms.push_back(SelectorTerm<T>{l, j, hood, logits});
        }
        out.levels.push_back(std::move(trace));
        f = gather_rows(fused, next_rows);
        coords = std::move(next_coords);
    }
    out.descriptor = concat_cols(out.pooled);
    out.logits = classify(out.descriptor);
    return out;
}

template <typename T>
Tensor<T> ViewGcn<T>::classify(const Tensor<T>& descriptor) const {
    const std::size_t expected = config_.levels * config_.feature_dim;
    if (descriptor.rank() != 2 || descriptor.dim(1) != expected) {
        throw dimension_error("classify: descriptor " + shape_to_string(descriptor.shape()) +
                              " does not have length " + std::to_string(expected));
    }
    return classifier_(descriptor);
}

template <typename T>
void ViewGcn<T>::collect(ParamList<T>& params) const {
    for (std::size_t i = 0; i < relation_.size(); ++i)
        relation_[i].collect(params, "gcn.relation" + std::to_string(i));
    for (std::size_t l = 0; l < local_.size(); ++l) {
        const std::string p = "gcn.level" + std::to_string(l);
        params.add(p + ".W", "W", local_[l].weight);
        local_[l].affine.collect(params, p + ".psi", "theta_c");
        local_[l].norm.collect(params, p + ".psi_bn", "theta_c");
    }
    for (std::size_t l = 0; l < messages_.size(); ++l) {
        const std::string p = "gcn.level" + std::to_string(l);
        messages_[l].relation.collect(params, p + ".tau", "theta_m");
        messages_[l].fusion.collect(params, p + ".fuse", "theta_f");
        messages_[l].fusion_norm.collect(params, p + ".fuse_bn", "theta_f");
    }
    for (std::size_t l = 0; l < selectors_.size(); ++l)
        for (std::size_t j = 0; j < selectors_[l].size(); ++j) {
            const std::string p = "gcn.level" + std::to_string(l) + ".selector" + std::to_string(j);
            selectors_[l][j].hidden.collect(params, p + ".hidden", "theta_v");
            selectors_[l][j].output.collect(params, p + ".output", "theta_v");
        }
    classifier_.collect(params, "gcn.classifier", "classifier");
}

template <typename T>
Tensor<T> total_loss(const GcnOutput<T>& output, std::span<const int> labels, const GcnConfig& config) {
    if (labels.size() != output.batch)
        throw dimension_error("total_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                              std::to_string(output.batch));
    if (output.view_terms.size() != config.selector_count()) {
        throw std::invalid_argument("total_loss: expected " + std::to_string(config.selector_count()) +
                                    " selector outputs, got " + std::to_string(output.view_terms.size()));
    }
    Tensor<T> loss = softmax_cross_entropy(output.logits, labels);
    for (const auto& term : output.view_terms) {
        std::vector<int> repeated;
        for (auto y : labels) repeated.insert(repeated.end(), term.neighbors, y);
        // Mean over B*Q rows times Q is the per-sample sum over neighbours.
        const T w = static_cast<T>(config.view_loss_weight * static_cast<double>(term.neighbors));
        loss = add(loss, scale(softmax_cross_entropy(term.logits, repeated), w));
    }
    return loss;
}

#define TVGCN_INSTANTIATE_GCN(T)                                                                    \
    template struct LocalConvParams<T>;                                                             \
    template struct MessageParams<T>;                                                               \
    template struct ViewSelector<T>;                                                                \
    template class ViewGcn<T>;                                                                      \
    template Tensor<T> local_graph_conv(const Tensor<T>&, const Tensor<T>&, LocalConvParams<T>&,    \
                                        Mode, T);                                                   \
    template Tensor<T> nonlocal_messages(const Tensor<T>&, std::size_t, const MessageParams<T>&, T); \
    template Tensor<T> fuse_messages(const Tensor<T>&, const Tensor<T>&, std::size_t,               \
                                     MessageParams<T>&, Mode, T);                                   \
    template Tensor<T> total_loss(const GcnOutput<T>&, std::span<const int>, const GcnConfig&);

TVGCN_INSTANTIATE_GCN(float)
TVGCN_INSTANTIATE_GCN(double)

} // namespace tvgcn
