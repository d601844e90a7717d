#include "tvgcn/view_graph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace tvgcn {

std::vector<Vec3> cube_viewpoints() {
    std::vector<Vec3> v;
    for (int idx = 0; idx < 8; ++idx) {
        const auto sign = [](int bit) { return bit ? 1.0 : -1.0; };
        v.push_back({sign((idx >> 2) & 1), sign((idx >> 1) & 1), sign(idx & 1)});
    }
    return v;
}

std::vector<Vec3> circular_viewpoints(std::size_t count, double elevation_deg) {
    if (count < 3) throw std::invalid_argument("circular_viewpoints: need at least 3 views");
    const double elev = elevation_deg * std::numbers::pi / 180.0;
    const double radius = std::cos(elev), z = std::sin(elev);
    std::vector<Vec3> v;
    for (std::size_t k = 0; k < count; ++k) {
        const double az = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(count);
        v.push_back({radius * std::cos(az), radius * std::sin(az), z});
    }
    return v;
}

std::vector<Vec3> normalize_viewpoints(std::span<const Vec3> viewpoints) {
    std::vector<Vec3> out;
    for (const auto& p : viewpoints) {
        const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (n == 0.0) throw std::invalid_argument("normalize_viewpoints: zero-length viewpoint");
        out.push_back({p[0] / n, p[1] / n, p[2] / n});
    }
    return out;
}

double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

std::array<double, 10> relation_vector(const Vec3& vi, const Vec3& vj) {
    return {vi[0], vi[1], vi[2], vj[0], vj[1], vj[2],
            vi[0] - vj[0], vi[1] - vj[1], vi[2] - vj[2], squared_distance(vi, vj)};
}

std::vector<std::vector<std::size_t>> nearest_neighbors(std::span<const Vec3> viewpoints, std::size_t n) {
    const std::size_t count = viewpoints.size();
    if (count > 0 && n > count - 1) {
        throw std::invalid_argument("nearest_neighbors: n = " + std::to_string(n) + " exceeds N - 1 = " +
                                    std::to_string(count - 1));
    }
    std::vector<std::vector<std::size_t>> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < count; ++j)
            if (j != i) others.push_back(j);
        std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
            return squared_distance(viewpoints[i], viewpoints[a]) <
                   squared_distance(viewpoints[i], viewpoints[b]);
        });
        others.resize(n);
        out[i] = std::move(others);
    }
    return out;
}

std::vector<unsigned char> knn_mask(std::span<const Vec3> viewpoints, std::size_t n) {
    const std::size_t count = viewpoints.size();
    std::vector<unsigned char> mask(count * count, 0);
    const auto nn = nearest_neighbors(viewpoints, n);
    for (std::size_t i = 0; i < count; ++i) {
        mask[i * count + i] = 1;
        for (auto j : nn[i]) mask[i * count + j] = 1;
    }
    return mask;
}

template <typename T>
Tensor<T> relation_inputs(std::span<const Vec3> viewpoints) {
    const std::size_t n = viewpoints.size();
    Tensor<T> g(Shape{n * n, 10});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const auto r = relation_vector(viewpoints[i], viewpoints[j]);
            for (std::size_t c = 0; c < 10; ++c) g[(i * n + j) * 10 + c] = static_cast<T>(r[c]);
        }
    return g;
}

template <typename T>
RelationMlp<T>::RelationMlp(Rng& rng, T slope_)
    : layer1(10, 10, rng), layer2(10, 10, rng), layer3(10, 1, rng), slope(slope_) {}

template <typename T>
Tensor<T> RelationMlp<T>::operator()(const Tensor<T>& g) const {
    if (g.rank() != 2 || g.dim(1) != 10)
        throw dimension_error("relation mlp: expected [R x 10] input, got " + shape_to_string(g.shape()));
    Tensor<T> h = leaky_relu(layer1(g), slope);
    h = leaky_relu(layer2(h), slope);
    return layer3(h);
}

template <typename T>
void RelationMlp<T>::collect(ParamList<T>& params, const std::string& prefix) const {
    layer1.collect(params, prefix + ".layer1", "theta_s");
    layer2.collect(params, prefix + ".layer2", "theta_s");
    layer3.collect(params, prefix + ".layer3", "theta_s");
}

template <typename T>
Tensor<T> learned_adjacency(std::span<const Vec3> viewpoints, const RelationMlp<T>& mlp) {
    const std::size_t n = viewpoints.size();
    if (n < 2) throw std::invalid_argument("learned_adjacency: need at least 2 viewpoints");
    return reshape(mlp(relation_inputs<T>(viewpoints)), Shape{n, n});
}

template <typename T>
Tensor<T> knn_sparsify(const Tensor<T>& scores, std::span<const Vec3> viewpoints, std::size_t n_neighbors) {
    const std::size_t n = viewpoints.size();
    if (scores.shape() != Shape{n, n})
        throw dimension_error("knn_sparsify: scores " + shape_to_string(scores.shape()) + " for " +
                              std::to_string(n) + " viewpoints");
    if (n_neighbors < 1 || n_neighbors > n - 1) {
        throw std::invalid_argument("knn_sparsify: n_neighbors = " + std::to_string(n_neighbors) +
                                    " outside [1, " + std::to_string(n - 1) + "]");
    }
    const auto mask = knn_mask(viewpoints, n_neighbors);
    return masked_softmax_rows(scores, mask);
}

template <typename T>
ViewGraph<T> build_view_graph(std::span<const Vec3> viewpoints, const RelationMlp<T>& mlp,
                              std::size_t n_neighbors) {
    ViewGraph<T> g;
    g.viewpoints.assign(viewpoints.begin(), viewpoints.end());
    g.scores = learned_adjacency(viewpoints, mlp);
    g.adjacency = knn_sparsify(g.scores, viewpoints, n_neighbors);
    g.n_neighbors = n_neighbors;
    return g;
}

void write_viewpoints_csv(std::ostream& out, std::span<const Vec3> viewpoints) {
    out << "index,x,y,z\n" << std::setprecision(17);
    for (std::size_t i = 0; i < viewpoints.size(); ++i)
        out << i << ',' << viewpoints[i][0] << ',' << viewpoints[i][1] << ',' << viewpoints[i][2] << '\n';
}

std::vector<Vec3> read_viewpoints_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("index,x,y,z", 0) != 0)
        throw std::runtime_error("viewpoints csv: missing header 'index,x,y,z'");
    std::vector<Vec3> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) throw std::runtime_error("viewpoints csv: malformed row '" + line + "'");
        if (std::stoul(cells[0]) != out.size())
            throw std::runtime_error("viewpoints csv: indices must be consecutive from 0");
        out.push_back({std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])});
    }
    return out;
}

template class RelationMlp<float>;
template class RelationMlp<double>;
template Tensor<float> relation_inputs(std::span<const Vec3>);
template Tensor<double> relation_inputs(std::span<const Vec3>);
template Tensor<float> learned_adjacency(std::span<const Vec3>, const RelationMlp<float>&);
template Tensor<double> learned_adjacency(std::span<const Vec3>, const RelationMlp<double>&);
template Tensor<float> knn_sparsify(const Tensor<float>&, std::span<const Vec3>, std::size_t);
template Tensor<double> knn_sparsify(const Tensor<double>&, std::span<const Vec3>, std::size_t);
template ViewGraph<float> build_view_graph(std::span<const Vec3>, const RelationMlp<float>&, std::size_t);
template ViewGraph<double> build_view_graph(std::span<const Vec3>, const RelationMlp<double>&, std::size_t);

} // namespace tvgcn
