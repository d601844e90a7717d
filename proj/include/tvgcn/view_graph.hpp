#pragma once

#include "tvgcn/nn.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

namespace tvgcn {

using Vec3 = std::array<double, 3>;

/// Cube vertices (+-1, +-1, +-1). Vertex index = 4*bx + 2*by + bz where a
/// bit of 0 maps to -1 and 1 maps to +1.
std::vector<Vec3> cube_viewpoints();

/// `count` points on a unit-radius ring at the given elevation: azimuth
/// k*360/count degrees, z = sin(elevation), xy radius = cos(elevation).
std::vector<Vec3> circular_viewpoints(std::size_t count, double elevation_deg = 30.0);

/// Scales every viewpoint onto the unit sphere.
std::vector<Vec3> normalize_viewpoints(std::span<const Vec3> viewpoints);

double squared_distance(const Vec3& a, const Vec3& b);

/// g_ij = [v_i, v_j, v_i - v_j, |v_i - v_j|^2]
std::array<double, 10> relation_vector(const Vec3& vi, const Vec3& vj);

/// For every viewpoint i, the `n` closest other viewpoints ordered by
/// (distance, index). Equal distances resolve to the lower index.
std::vector<std::vector<std::size_t>> nearest_neighbors(std::span<const Vec3> viewpoints, std::size_t n);

/// Row-major N x N mask keeping the diagonal and each row's n nearest
/// neighbours. n = 0 keeps only the diagonal.
std::vector<unsigned char> knn_mask(std::span<const Vec3> viewpoints, std::size_t n);

/// Relation vectors of every ordered pair, row i*N + j holds g_ij.
template <typename T>
Tensor<T> relation_inputs(std::span<const Vec3> viewpoints);

/// Scores S_ij from g_ij: 10 -> 10 -> 10 -> 1 with LeakyReLU between layers.
template <typename T>
class RelationMlp {
public:
    RelationMlp() = default;
    RelationMlp(Rng& rng, T slope = T(0.01));

    /// g[R x 10] -> [R x 1]
    Tensor<T> operator()(const Tensor<T>& g) const;

    void collect(ParamList<T>& params, const std::string& prefix) const;

    Linear<T> layer1, layer2, layer3;
    T slope = T(0.01);
};

/// S (N x N) with S_ij = mlp(g_ij) over all ordered pairs, diagonal included.
template <typename T>
Tensor<T> learned_adjacency(std::span<const Vec3> viewpoints, const RelationMlp<T>& mlp);

/// Keeps the diagonal plus each row's n nearest viewpoints and applies a
/// softmax over the kept entries of every row. Requires 1 <= n <= N - 1.
template <typename T>
Tensor<T> knn_sparsify(const Tensor<T>& scores, std::span<const Vec3> viewpoints, std::size_t n_neighbors);

template <typename T>
struct ViewGraph {
    std::vector<Vec3> viewpoints;
    Tensor<T> scores;
    Tensor<T> adjacency;
    std::size_t n_neighbors = 0;
};

template <typename T>
ViewGraph<T> build_view_graph(std::span<const Vec3> viewpoints, const RelationMlp<T>& mlp,
                              std::size_t n_neighbors);

/// CSV with header "index,x,y,z".
void write_viewpoints_csv(std::ostream& out, std::span<const Vec3> viewpoints);
std::vector<Vec3> read_viewpoints_csv(std::istream& in);

extern template class RelationMlp<float>;
extern template class RelationMlp<double>;

} // namespace tvgcn
