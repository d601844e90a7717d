#pragma once

#include "tvgcn/nn.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tvgcn {

inline constexpr std::size_t frame_side = 32;
inline constexpr std::size_t frame_cells = frame_side * frame_side;

/// Init gain applied to classification output layers so untrained logits
/// start close to uniform.
inline constexpr double output_head_gain = 0.01;

enum class BackbonePreset { resnet18, tiny };

std::string to_string(BackbonePreset preset);
BackbonePreset parse_backbone_preset(std::string_view name);

struct BackboneConfig {
    BackbonePreset preset = BackbonePreset::tiny;
    std::size_t feature_dim = 64;
    std::size_t num_classes = 26;

    /// Preset defaults: resnet18 -> D = 512, tiny -> D = 64.
    static BackboneConfig for_preset(BackbonePreset preset, std::size_t num_classes);

    void validate() const;
};

/// Two 3x3 conv + batch-norm stages with a ReLU between, added to the
/// (optionally projected) input and passed through a final ReLU.
template <typename T>
class ResidualBlock {
public:
    ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, Mode mode);
    void collect(ParamList<T>& params, const std::string& prefix) const;
    bool has_projection() const { return projection_.has_value(); }

private:
    Conv2d<T> conv1_, conv2_;
    BatchNorm<T> bn1_, bn2_;
    std::optional<Conv2d<T>> projection_;
    std::optional<BatchNorm<T>> projection_bn_;
};

/// Residual CNN mapping 1x32x32 tactile frames to D-dimensional features.
///
/// resnet18: 3x3 stride-1 stem with 64 channels (no max-pool), four stages
/// of two blocks with 64/128/256/512 channels, global average pooling.
/// tiny: 3x3 stem with 16 channels, two stages of one block (16/32
/// channels, each downsampling by 2), global average pooling and a linear
/// projection to D = 64.
template <typename T>
class Backbone {
public:
    Backbone(const BackboneConfig& config, Rng& rng);

    /// frames [B x 1 x 32 x 32] -> [B x D], or a single [1 x 32 x 32] -> [D].
    Tensor<T> forward(const Tensor<T>& frames, Mode mode);

    /// Linear head over forward(); used for single-frame pretraining.
    Tensor<T> classify(const Tensor<T>& frames, Mode mode);

    /// Trainable tensors land in group "backbone", the pretraining head in
    /// "backbone_head".
    void collect(ParamList<T>& params) const;

    const BackboneConfig& config() const { return config_; }
    std::size_t block_count() const { return blocks_.size(); }
    std::vector<std::size_t> stage_channels() const { return stage_channels_; }

private:
    BackboneConfig config_;
    Conv2d<T> stem_;
    BatchNorm<T> stem_bn_;
    std::vector<ResidualBlock<T>> blocks_;
    std::vector<std::size_t> stage_channels_;
    std::optional<Linear<T>> projection_;
    Linear<T> head_;
};

extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class Backbone<float>;
extern template class Backbone<double>;

} // namespace tvgcn
