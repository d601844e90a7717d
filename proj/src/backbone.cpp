#include "tvgcn/backbone.hpp"

#include <stdexcept>

namespace tvgcn {

std::string to_string(BackbonePreset preset) {
    return preset == BackbonePreset::resnet18 ? "resnet18" : "tiny";
}

BackbonePreset parse_backbone_preset(std::string_view name) {
    if (name == "resnet18") return BackbonePreset::resnet18;
    if (name == "tiny") return BackbonePreset::tiny;
    throw std::invalid_argument("unknown backbone preset '" + std::string(name) +
                                "' (expected resnet18 or tiny)");
}

BackboneConfig BackboneConfig::for_preset(BackbonePreset preset, std::size_t num_classes) {
    return BackboneConfig{preset, preset == BackbonePreset::resnet18 ? 512u : 64u, num_classes};
}

void BackboneConfig::validate() const {
    if (feature_dim < 8) throw std::invalid_argument("backbone: feature_dim must be >= 8");
    if (num_classes < 2) throw std::invalid_argument("backbone: num_classes must be >= 2");
    const std::size_t expected = preset == BackbonePreset::resnet18 ? 512 : 64;
    if (feature_dim != expected) {
        throw std::invalid_argument("backbone: preset " + to_string(preset) + " requires feature_dim " +
                                    std::to_string(expected) + ", got " + std::to_string(feature_dim));
    }
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_channels, std::size_t out_channels,
                                std::size_t stride, Rng& rng)
    : conv1_(in_channels, out_channels, 3, stride, 1, rng),
      conv2_(out_channels, out_channels, 3, 1, 1, rng),
      bn1_(out_channels),
      bn2_(out_channels) {
    if (stride != 1 || in_channels != out_channels) {
        projection_.emplace(in_channels, out_channels, 1, stride, 0, rng);
        projection_bn_.emplace(out_channels);
    }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> h = relu(bn1_.forward2d(conv1_(x), mode));
    h = bn2_.forward2d(conv2_(h), mode);
    Tensor<T> skip = projection_ ? projection_bn_->forward2d((*projection_)(x), mode) : x;
    return relu(add(h, skip));
}

template <typename T>
void ResidualBlock<T>::collect(ParamList<T>& params, const std::string& prefix) const {
    conv1_.collect(params, prefix + ".conv1", "backbone");
    bn1_.collect(params, prefix + ".bn1", "backbone");
    conv2_.collect(params, prefix + ".conv2", "backbone");
    bn2_.collect(params, prefix + ".bn2", "backbone");
    if (projection_) {
        projection_->collect(params, prefix + ".proj", "backbone");
        projection_bn_->collect(params, prefix + ".proj_bn", "backbone");
    }
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    std::size_t stem_channels = 0, blocks_per_stage = 0;
    bool downsample_first_stage = false;
    if (config_.preset == BackbonePreset::resnet18) {
        stem_channels = 64;
        stage_channels_ = {64, 128, 256, 512};
        blocks_per_stage = 2;
    } else {
        stem_channels = 16;
        stage_channels_ = {16, 32};
        blocks_per_stage = 1;
        downsample_first_stage = true;
    }
    stem_ = Conv2d<T>(1, stem_channels, 3, 1, 1, rng);
    stem_bn_ = BatchNorm<T>(stem_channels);
    std::size_t in = stem_channels;
    for (std::size_t s = 0; s < stage_channels_.size(); ++s) {
        for (std::size_t b = 0; b < blocks_per_stage; ++b) {
            const bool first = b == 0;
            const std::size_t stride = first && (s > 0 || downsample_first_stage) ? 2 : 1;
            blocks_.emplace_back(in, stage_channels_[s], stride, rng);
            in = stage_channels_[s];
        }
    }
    if (in != config_.feature_dim) projection_.emplace(in, config_.feature_dim, rng);
    head_ = Linear<T>(config_.feature_dim, config_.num_classes, rng, output_head_gain);
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& frames, Mode mode) {
    const bool single = frames.rank() == 3;
    const Shape& s = frames.shape();
    const bool ok = (single && s == Shape{1, frame_side, frame_side}) ||
                    (frames.rank() == 4 && s[1] == 1 && s[2] == frame_side && s[3] == frame_side);
    if (!ok) {
        throw dimension_error("backbone: expected [1x32x32] or [Bx1x32x32] frames, got " +
                              shape_to_string(s));
    }
    Tensor<T> x = single ? reshape(frames, Shape{1, 1, frame_side, frame_side}) : frames;
    x = relu(stem_bn_.forward2d(stem_(x), mode));
    for (auto& block : blocks_) x = block.forward(x, mode);
    Tensor<T> features = global_avg_pool(x);
    if (projection_) features = (*projection_)(features);
    return single ? reshape(features, Shape{config_.feature_dim}) : features;
}

template <typename T>
Tensor<T> Backbone<T>::classify(const Tensor<T>& frames, Mode mode) {
    const bool single = frames.rank() == 3;
    Tensor<T> f = forward(frames, mode);
    if (single) f = reshape(f, Shape{1, config_.feature_dim});
    Tensor<T> logits = head_(f);
    return single ? reshape(logits, Shape{config_.num_classes}) : logits;
}

template <typename T>
void Backbone<T>::collect(ParamList<T>& params) const {
    stem_.collect(params, "backbone.stem", "backbone");
    stem_bn_.collect(params, "backbone.stem_bn", "backbone");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect(params, "backbone.block" + std::to_string(i));
    if (projection_) projection_->collect(params, "backbone.projection", "backbone");
    head_.collect(params, "backbone.head", "backbone_head");
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

} // namespace tvgcn
