#pragma once

#include "tvgcn/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tvgcn {

struct KMeansResult {
    std::size_t k = 0;
    std::size_t dim = 0;
    std::vector<double> centroids;       // k x dim
    std::vector<std::size_t> assignment; // point -> cluster
    std::vector<double> objective;       // per Lloyd iteration, after assignment
    std::size_t iterations = 0;
};

/// k-means with k-means++ seeding. Lloyd iterations stop once the largest
/// centroid shift drops below tolerance or after max_iterations. Points are
/// only reassigned on a strict improvement; a cluster that loses all its
/// points keeps its previous centroid.
KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k, std::uint64_t seed,
                    std::size_t max_iterations = 100, double tolerance = 1e-4);

struct ClassClusters {
    int label = 0;
    std::vector<std::size_t> frames;          // dataset indices of this class
    std::vector<std::size_t> frame_cluster;   // parallel to frames
    std::vector<std::size_t> cluster_to_view; // cluster id -> viewpoint index
    std::vector<float> centroids;             // k x 1024
    std::vector<double> objective;

    std::size_t k() const { return cluster_to_view.size(); }
    /// Dataset indices per viewpoint, in dataset order.
    std::vector<std::vector<std::size_t>> members_by_view() const;
};

struct ClusterAssignment {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::size_t num_frames = 0;
    std::vector<ClassClusters> classes; // indexed by label
};

class cluster_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Clusters the given frames of one class into k pseudo-viewpoints. Clusters
/// are mapped to viewpoint indices 0..k-1 by descending size (ties: lower
/// cluster id first).
ClassClusters cluster_frames(const Dataset& dataset, std::span<const std::size_t> frame_indices,
                             std::size_t k, std::uint64_t seed, int label = 0);

/// Runs cluster_frames for every class; class c uses seed + c.
ClusterAssignment cluster_dataset(const Dataset& dataset, std::size_t k, std::uint64_t seed);

/// One uniformly drawn frame per cluster, ordered by viewpoint index.
std::vector<std::size_t> sample_view_set(const ClassClusters& clusters, Rng& rng);

/// Writes clusters.json and centroids.bin into dir.
void save_clusters(const std::filesystem::path& dir, const ClusterAssignment& assignment);
ClusterAssignment load_clusters(const std::filesystem::path& dir);

} // namespace tvgcn
