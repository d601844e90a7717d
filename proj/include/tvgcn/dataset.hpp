#pragma once

#include "tvgcn/backbone.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvgcn {

using Pressure = std::array<float, frame_cells>;

struct TactileFrame {
    Pressure pressure{}; // row-major 32x32, values in [0, 1]
    int label = 0;
    int cluster_id = -1;
    std::size_t source_index = 0;
};

struct DatasetManifest {
    int version = 1;
    std::size_t num_frames = 0;
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;
    double calib_min = 0.0;
    double calib_max = 1.0;
    std::string split = "train";
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<TactileFrame> frames;
    std::optional<Pressure> empty_hand;
};

class dataset_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// Wrong magic bytes or unsupported version.
class format_error : public dataset_error {
public:
    using dataset_error::dataset_error;
};
/// Manifest, header and payload disagree on the number of frames.
class count_mismatch_error : public dataset_error {
public:
    using dataset_error::dataset_error;
};
class non_finite_error : public dataset_error {
public:
    using dataset_error::dataset_error;
};

/// Writes manifest.json, frames.bin, labels.bin and (if present)
/// empty_hand.bin into dir. Frame values are stored as given, in
/// calibration units.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Reads a dataset directory and maps frames to [0, 1] with the manifest
/// calibration range.
Dataset load_dataset(const std::filesystem::path& dir);

/// clamp((x - calib_min) / (calib_max - calib_min), 0, 1)
float normalize_pressure(double raw, double calib_min, double calib_max);

/// max(frame - empty_hand, 0) / (calib_max - calib_min), clipped to [0, 1].
Pressure baseline_subtract(std::span<const float> frame_raw, std::span<const float> empty_hand_raw,
                           double calib_min, double calib_max);

/// Keeps frames with at least min_active cells above active_threshold.
std::vector<TactileFrame> filter_informative(const std::vector<TactileFrame>& frames,
                                             std::size_t min_active = 10, double active_threshold = 0.05);

/// Synthetic stand-in for glove recordings: every class is a fixed layout
/// of 2-4 Gaussian pressure blobs; frames jitter blob positions by up to 2
/// cells and amplitudes by 20% and add N(0, 0.02^2) noise. Templates depend
/// only on (num_classes, seed), so splits generated with the same seed
/// share them.
Dataset synth_generate(std::size_t num_classes, std::size_t frames_per_class, std::uint64_t seed,
                       const std::string& split = "train");

/// Indices of the frames with the given label, in dataset order.
std::vector<std::size_t> frames_of_class(const Dataset& dataset, int label);

} // namespace tvgcn
