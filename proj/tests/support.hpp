#pragma once

// Reference implementations used as test oracles. Nothing here calls into
// the library code it is compared against.

#include "tvgcn/ops.hpp"
#include "tvgcn/tensor.hpp"
#include "tvgcn/view_graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace tvgcn::test {

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of loss() with respect to every element of `inputs`.
inline double fd_max_error(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                           double h = 1e-4) {
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        const auto l = loss();
        tape.backward(l);
    }
    double worst = 0.0;
    for (auto& x : inputs) {
        const std::vector<double> analytic(x.grad().begin(), x.grad().end());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + h;
            const double up = loss().item();
            x[i] = keep - h;
            const double down = loss().item();
            x[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            worst = std::max(worst, rel_err(a, numeric));
        }
    }
    return worst;
}

/// Greedy max-min selection that re-derives each step from scratch: every
/// unselected candidate's distance to the selected set is recomputed over
/// all selected points; the largest wins, lowest index on ties.
inline std::vector<std::size_t> brute_force_fps(const std::vector<Vec3>& pts, std::size_t m, std::size_t seed) {
    auto d2 = [](const Vec3& a, const Vec3& b) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        return s;
    };
    std::vector<std::size_t> chosen{seed};
    while (chosen.size() < m) {
        double best_score = -1.0;
        std::size_t best = pts.size();
        for (std::size_t c = 0; c < pts.size(); ++c) {
            if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
            double score = std::numeric_limits<double>::infinity();
            for (auto s : chosen) score = std::min(score, d2(pts[c], pts[s]));
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

/// Off-diagonal neighbours of row i by full sort on (distance, index).
inline std::vector<std::size_t> brute_force_neighbors(const std::vector<Vec3>& pts, std::size_t i, std::size_t n) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        if (j == i) continue;
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
        all.emplace_back(std::sqrt(s), j);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(all[k].second);
    return out;
}

/// -log softmax(row)[label] in long double.
inline double reference_ce(std::span<const double> row, int label) {
    long double mx = row[0];
    for (double v : row) mx = std::max<long double>(mx, v);
    long double s = 0.0L;
    for (double v : row) s += std::exp(static_cast<long double>(v) - mx);
    return static_cast<double>(std::log(s) + mx - static_cast<long double>(row[static_cast<std::size_t>(label)]));
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("tvgcn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace tvgcn::test
