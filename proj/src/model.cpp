#include "tvgcn/model.hpp"

namespace tvgcn {

template <typename T>
TactileViewGcn<T>::TactileViewGcn(const BackboneConfig& backbone, const GcnConfig& gcn, Rng& rng)
    : backbone_(backbone, rng), gcn_(gcn, rng) {
    if (backbone.feature_dim != gcn.feature_dim) {
        throw std::invalid_argument("model: backbone feature_dim " + std::to_string(backbone.feature_dim) +
                                    " != gcn feature_dim " + std::to_string(gcn.feature_dim));
    }
    if (backbone.num_classes != gcn.num_classes) {
        throw std::invalid_argument("model: backbone num_classes " + std::to_string(backbone.num_classes) +
                                    " != gcn num_classes " + std::to_string(gcn.num_classes));
    }
}

template <typename T>
GcnOutput<T> TactileViewGcn<T>::forward(const Tensor<T>& frames, std::span<const Vec3> viewpoints,
                                        std::size_t batch, Mode mode) {
    return gcn_.forward(backbone_.forward(frames, mode), viewpoints, batch, mode);
}

template <typename T>
void TactileViewGcn<T>::collect(ParamList<T>& params) const {
    backbone_.collect(params);
    gcn_.collect(params);
}

template <typename T>
MaxPoolBaseline<T>::MaxPoolBaseline(const BackboneConfig& backbone, std::size_t num_views, Rng& rng)
    : backbone_(backbone, rng),
      views_(num_views),
      classifier_(backbone.feature_dim, backbone.num_classes, rng, output_head_gain) {
    if (num_views == 0) throw std::invalid_argument("max-pool baseline: need at least one view");
}

template <typename T>
Tensor<T> MaxPoolBaseline<T>::forward(const Tensor<T>& frames, std::size_t batch, Mode mode) {
    if (batch == 0 || frames.rank() != 4 || frames.dim(0) != batch * views_) {
        throw dimension_error("max-pool baseline: frames " + shape_to_string(frames.shape()) + " for " +
                              std::to_string(batch) + " samples of " + std::to_string(views_) + " views");
    }
    return classifier_(segment_max_rows(backbone_.forward(frames, mode), views_));
}

template <typename T>
void MaxPoolBaseline<T>::collect(ParamList<T>& params) const {
    backbone_.collect(params);
    classifier_.collect(params, "pool.classifier", "classifier");
}

template class TactileViewGcn<float>;
template class TactileViewGcn<double>;
template class MaxPoolBaseline<float>;
template class MaxPoolBaseline<double>;

} // namespace tvgcn
