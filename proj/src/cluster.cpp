#include "tvgcn/cluster.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace tvgcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k, std::uint64_t seed,
                    std::size_t max_iterations, double tolerance) {
    if (dim == 0 || points.size() % dim != 0)
        throw std::invalid_argument("kmeans: point buffer is not a multiple of dim");
    const std::size_t n = points.size() / dim;
    if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
    if (n < k) throw cluster_error("kmeans: " + std::to_string(n) + " points for k = " + std::to_string(k));

    KMeansResult r;
    r.k = k;
    r.dim = dim;
    r.centroids.assign(k * dim, 0.0);
    const double* p = points.data();

    // k-means++ seeding
    Rng rng(seed);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::copy_n(p + first * dim, dim, r.centroids.begin());
    for (std::size_t c = 1; c < k; ++c) {
        const double* prev = r.centroids.data() + (c - 1) * dim;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist(p + i * dim, prev, dim));
            total += nearest[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest[i];
                if (nearest[i] > 0.0 && u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
        std::copy_n(p + pick * dim, dim, r.centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    }

    r.assignment.assign(n, 0);
    std::vector<bool> assigned(n, false);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        double objective = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = r.assignment[i];
            double best_d = assigned[i] ? sq_dist(p + i * dim, r.centroids.data() + best * dim, dim)
                                        : std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist(p + i * dim, r.centroids.data() + c * dim, dim);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            r.assignment[i] = best;
            assigned[i] = true;
            objective += best_d;
        }
        r.objective.push_back(objective);
        ++r.iterations;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = r.assignment[i];
            ++counts[c];
            for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += p[i * dim + j];
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            double s = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double m = sums[c * dim + j] / static_cast<double>(counts[c]);
                const double d = m - r.centroids[c * dim + j];
                s += d * d;
                r.centroids[c * dim + j] = m;
            }
            shift = std::max(shift, std::sqrt(s));
        }
        if (shift < tolerance) break;
    }
    return r;
}

std::vector<std::vector<std::size_t>> ClassClusters::members_by_view() const {
    std::vector<std::vector<std::size_t>> out(k());
    for (std::size_t i = 0; i < frames.size(); ++i) out[cluster_to_view.at(frame_cluster[i])].push_back(frames[i]);
    return out;
}

ClassClusters cluster_frames(const Dataset& dataset, std::span<const std::size_t> frame_indices, std::size_t k,
                             std::uint64_t seed, int label) {
    if (frame_indices.size() < k) {
        throw cluster_error("cluster_frames: class " + std::to_string(label) + " has " +
                            std::to_string(frame_indices.size()) + " frames, fewer than k = " + std::to_string(k));
    }
    std::vector<double> points;
    points.reserve(frame_indices.size() * frame_cells);
    for (auto idx : frame_indices) {
        const auto& f = dataset.frames.at(idx).pressure;
        points.insert(points.end(), f.begin(), f.end());
    }
    const auto km = kmeans(points, frame_cells, k, seed);

    ClassClusters out;
    out.label = label;
    out.frames.assign(frame_indices.begin(), frame_indices.end());
    out.frame_cluster = km.assignment;
    out.objective = km.objective;
    out.centroids.assign(km.centroids.begin(), km.centroids.end());

    std::vector<std::size_t> sizes(k, 0);
    for (auto c : km.assignment) ++sizes[c];
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
    out.cluster_to_view.assign(k, 0);
    for (std::size_t v = 0; v < k; ++v) out.cluster_to_view[order[v]] = v;
    return out;
}

ClusterAssignment cluster_dataset(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    ClusterAssignment a;
    a.k = k;
    a.seed = seed;
    a.num_frames = dataset.frames.size();
    for (std::size_t c = 0; c < dataset.manifest.num_classes; ++c) {
        const auto idx = frames_of_class(dataset, static_cast<int>(c));
        if (idx.size() < k && c < dataset.manifest.class_names.size()) {
            throw cluster_error("cluster: class " + std::to_string(c) + " (" + dataset.manifest.class_names[c] + ") has " +
                                std::to_string(idx.size()) + " frames, fewer than k = " + std::to_string(k));
        }
        a.classes.push_back(cluster_frames(dataset, idx, k, seed + c, static_cast<int>(c)));
    }
    return a;
}

std::vector<std::size_t> sample_view_set(const ClassClusters& clusters, Rng& rng) {
    const auto members = clusters.members_by_view();
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < members.size(); ++v) {
        if (members[v].empty()) {
            throw cluster_error("sample_view_set: class " + std::to_string(clusters.label) + " has an empty cluster at viewpoint " +
                                std::to_string(v));
        }
        out.push_back(members[v][std::uniform_int_distribution<std::size_t>(0, members[v].size() - 1)(rng)]);
    }
    return out;
}

void save_clusters(const fs::path& dir, const ClusterAssignment& a) {
    fs::create_directories(dir);
    std::ofstream bin(dir / "centroids.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw cluster_error("clusters: cannot write centroids.bin in " + dir.string());
    io::write_magic(bin, "TVGK");
    io::write_u32(bin, 1);
    io::write_u32(bin, static_cast<std::uint32_t>(a.classes.size()));
    io::write_u32(bin, static_cast<std::uint32_t>(a.k));
    io::write_u32(bin, static_cast<std::uint32_t>(frame_cells));
    std::size_t offset = 20;

    json classes = json::array();
    for (const auto& c : a.classes) {
        io::write_f32s(bin, c.centroids);
        classes.push_back({{"label", c.label},
                           {"centroid_offset", offset},
                           {"frames", c.frames},
                           {"frame_cluster", c.frame_cluster},
                           {"cluster_to_view", c.cluster_to_view}});
        offset += c.centroids.size() * 4;
    }
    json doc = {{"version", 1},
                {"k", a.k},
                {"seed", a.seed},
                {"num_frames", a.num_frames},
                {"centroids", "centroids.bin"},
                {"classes", classes}};
    std::ofstream out(dir / "clusters.json", std::ios::trunc);
    if (!out) throw cluster_error("clusters: cannot write clusters.json in " + dir.string());
    out << doc.dump(1) << '\n';
}

ClusterAssignment load_clusters(const fs::path& dir) {
    std::ifstream in(dir / "clusters.json");
    if (!in) throw cluster_error("clusters: no clusters.json in " + dir.string() + "; run the cluster command first");
    ClusterAssignment a;
    std::ifstream bin;
    try {
        json doc;
        in >> doc;
        if (doc.at("version").get<int>() != 1) throw cluster_error("clusters: unsupported clusters.json version");
        a.k = doc.at("k").get<std::size_t>();
        a.seed = doc.at("seed").get<std::uint64_t>();
        a.num_frames = doc.at("num_frames").get<std::size_t>();
        bin.open(dir / doc.at("centroids").get<std::string>(), std::ios::binary);
        if (!bin || !io::read_magic(bin, "TVGK")) throw cluster_error("clusters: centroids.bin missing or corrupt");
        for (const auto& jc : doc.at("classes")) {
            ClassClusters c;
            c.label = jc.at("label").get<int>();
            c.frames = jc.at("frames").get<std::vector<std::size_t>>();
            c.frame_cluster = jc.at("frame_cluster").get<std::vector<std::size_t>>();
            c.cluster_to_view = jc.at("cluster_to_view").get<std::vector<std::size_t>>();
            if (c.frames.size() != c.frame_cluster.size() || c.cluster_to_view.size() != a.k)
                throw cluster_error("clusters: inconsistent entry for class " + std::to_string(c.label));
            for (auto cl : c.frame_cluster)
                if (cl >= a.k) throw cluster_error("clusters: cluster id out of range in class " + std::to_string(c.label));
            c.centroids.resize(a.k * frame_cells);
            bin.seekg(static_cast<std::streamoff>(jc.at("centroid_offset").get<std::size_t>()));
            if (!io::read_f32s(bin, c.centroids))
                throw cluster_error("clusters: centroids.bin truncated for class " + std::to_string(c.label));
            a.classes.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw cluster_error("clusters: malformed clusters.json: " + std::string(e.what()));
    }
    return a;
}

} // namespace tvgcn
