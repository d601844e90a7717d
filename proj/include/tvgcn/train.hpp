#pragma once

#include "tvgcn/cluster.hpp"
#include "tvgcn/config.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace tvgcn {

struct MetricsRow {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr_backbone = 0.0;
    double lr_gcn = 0.0;
    double wall_seconds = 0.0;
};

inline constexpr const char* metrics_header = "epoch,split,loss,accuracy,lr_backbone,lr_gcn,wall_seconds";

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

/// <root>/<split> when it holds a dataset, otherwise root itself.
std::filesystem::path split_dir(const std::filesystem::path& root, const std::string& split);

/// Writes <out>/train and <out>/test synthetic splits sharing class templates.
void run_synth(const RunConfig& config, std::ostream* log = nullptr);

/// Clusters every class of the training split into view_count() groups and
/// writes clusters.json / centroids.bin next to it.
ClusterAssignment run_cluster(const RunConfig& config, std::ostream* log = nullptr);

struct TrainResult {
    std::vector<MetricsRow> rows;
    std::filesystem::path checkpoint;
    double final_train_accuracy = 0.0;
    double final_test_accuracy = -1.0; // -1 without a test split
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Stage 1: single-frame classification with the backbone head.
/// Writes <out>/backbone.tvgc and <out>/backbone_metrics.csv.
TrainResult run_train_backbone(const RunConfig& config, std::ostream* log = nullptr);

/// Stage 2: joint training on clustered view sets, starting from the stage-1
/// checkpoint or resuming a stage-2 checkpoint. Writes the model checkpoint
/// after every epoch and <out>/metrics.csv.
TrainResult run_train(const RunConfig& config, std::ostream* log = nullptr);

struct EvalResult {
    std::vector<double> trial_accuracy;
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted], summed over trials
};

/// Classifies view sets of the test split. Trial t re-clusters the split
/// with seed + t. Writes the summed confusion matrix as CSV.
EvalResult run_eval(const RunConfig& config, std::ostream* log = nullptr);

void write_confusion_csv(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& confusion,
                         const std::vector<std::string>& class_names);

} // namespace tvgcn
