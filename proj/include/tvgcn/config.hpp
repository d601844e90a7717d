#pragma once

#include "tvgcn/backbone.hpp"
#include "tvgcn/view_gcn.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvgcn {

class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every hyperparameter of a run. JSON keys and command-line flags use the
/// field names below.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string views = "cube8";         // cube8 | circular12
    bool normalize_views = false;        // scale viewpoints onto the unit sphere
    std::string backbone = "resnet18";   // resnet18 | tiny
    std::string aggregator = "gcn";      // gcn | maxpool
    std::size_t feature_dim = 0;         // 0: preset default
    std::size_t selector_hidden = 64;
    std::size_t n_neighbors = 0;         // 0: 3 for cube8, 2 for circular12
    std::size_t levels = 3;
    double slope = 0.01;
    double view_loss_weight = 1.0;
    std::size_t batch_size = 32;

    std::size_t backbone_epochs = 30;
    double backbone_lr = 5e-3;           // stage 1
    std::size_t lr_step_epochs = 10;
    std::size_t epochs = 15;
    double finetune_backbone_lr = 1e-4;  // stage 2
    double gcn_lr = 5e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t sets_per_class = 0;      // 0: ceil(frames in class / views)

    std::string dataset;
    std::string out = "run";
    std::string backbone_checkpoint;     // empty: <out>/backbone.tvgc
    std::string checkpoint;              // empty: <out>/model.tvgc
    std::string resume;

    std::size_t classes = 4;             // synth only
    std::size_t frames_per_class = 200;
    std::size_t test_frames_per_class = 100;

    std::size_t trials = 1;
    std::string confusion;               // empty: <out>/confusion.csv

    void validate() const;

    std::vector<Vec3> viewpoints() const;
    std::size_t view_count() const;
    std::size_t effective_neighbors() const;
    BackboneConfig backbone_config(std::size_t num_classes) const;
    GcnConfig gcn_config(std::size_t num_classes) const;

    std::filesystem::path backbone_checkpoint_path() const;
    std::filesystem::path checkpoint_path() const;
    std::filesystem::path confusion_path() const;
};

/// Field names in declaration order.
std::vector<std::string> config_keys();

std::string config_to_json(const RunConfig& config);

/// Missing keys keep their defaults; unknown keys and wrong types raise
/// config_error naming the key.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Sets one field from its command-line spelling.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

} // namespace tvgcn
