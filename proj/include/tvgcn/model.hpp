#pragma once

#include "tvgcn/backbone.hpp"
#include "tvgcn/view_gcn.hpp"

#include <span>

namespace tvgcn {

/// Backbone features for every frame of a view-set batch, fed to the
/// view-graph network.
template <typename T>
class TactileViewGcn {
public:
    TactileViewGcn(const BackboneConfig& backbone, const GcnConfig& gcn, Rng& rng);

    /// frames [B*N x 1 x 32 x 32], sample-major; row b*N + i is seen from viewpoints[i].
    GcnOutput<T> forward(const Tensor<T>& frames, std::span<const Vec3> viewpoints, std::size_t batch, Mode mode);

    void collect(ParamList<T>& params) const;

    Backbone<T>& backbone() { return backbone_; }
    ViewGcn<T>& gcn() { return gcn_; }

private:
    Backbone<T> backbone_;
    ViewGcn<T> gcn_;
};

/// Ablation baseline: the same backbone with the view hierarchy replaced by
/// a max over views and a linear classifier.
template <typename T>
class MaxPoolBaseline {
public:
    MaxPoolBaseline(const BackboneConfig& backbone, std::size_t num_views, Rng& rng);

    /// frames [B*N x 1 x 32 x 32] -> logits [B x N_c]
    Tensor<T> forward(const Tensor<T>& frames, std::size_t batch, Mode mode);

    void collect(ParamList<T>& params) const;

    Backbone<T>& backbone() { return backbone_; }

private:
    Backbone<T> backbone_;
    std::size_t views_;
    Linear<T> classifier_;
};

extern template class TactileViewGcn<float>;
extern template class TactileViewGcn<double>;
extern template class MaxPoolBaseline<float>;
extern template class MaxPoolBaseline<double>;

} // namespace tvgcn
