#include "support.hpp"

#include "tvgcn/cluster.hpp"
#include "tvgcn/dataset.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>

using namespace tvgcn;
using namespace tvgcn::test;
namespace fs = std::filesystem;

namespace {

// Smallest distance between class means over the mean distance of a frame to its class mean.
double separation_ratio(const Dataset& ds) {
    const std::size_t k = ds.manifest.num_classes;
    std::vector<std::vector<double>> mean(k, std::vector<double>(1024, 0.0));
    std::vector<double> count(k, 0.0);
    for (const auto& f : ds.frames) {
        for (std::size_t i = 0; i < 1024; ++i) mean[f.label][i] += f.pressure[i];
        count[f.label] += 1;
    }
    for (std::size_t c = 0; c < k; ++c)
        for (auto& v : mean[c]) v /= count[c];
    double within = 0.0;
    for (const auto& f : ds.frames) {
        double d = 0.0;
        for (std::size_t i = 0; i < 1024; ++i) d += (f.pressure[i] - mean[f.label][i]) * (f.pressure[i] - mean[f.label][i]);
        within += std::sqrt(d) / static_cast<double>(ds.frames.size());
    }
    double closest = 1e300;
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = p + 1; q < k; ++q) {
            double d = 0.0;
            for (std::size_t i = 0; i < 1024; ++i) d += (mean[p][i] - mean[q][i]) * (mean[p][i] - mean[q][i]);
            closest = std::min(closest, std::sqrt(d));
        }
    return closest / within;
}

void patch(const fs::path& file, std::size_t offset, const void* bytes, std::size_t n) {
    std::fstream io(file, std::ios::binary | std::ios::in | std::ios::out);
    io.seekp(static_cast<std::streamoff>(offset));
    io.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
}

bool same_frames(const Dataset& a, const Dataset& b) {
    if (a.frames.size() != b.frames.size()) return false;
    for (std::size_t i = 0; i < a.frames.size(); ++i)
        if (a.frames[i].pressure != b.frames[i].pressure || a.frames[i].label != b.frames[i].label) return false;
    return true;
}

// k groups of point-mass frames: group g lights a distinct 4x4 patch.
Dataset separated_groups(std::size_t k, std::size_t per_group, std::vector<std::size_t>& truth, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.01);
    Dataset ds;
    for (std::size_t g = 0; g < k; ++g)
        for (std::size_t i = 0; i < per_group; ++i) {
            TactileFrame f;
            for (std::size_t r = 0; r < 4; ++r)
                for (std::size_t c = 0; c < 4; ++c) f.pressure[(4 * (g / 8) + r) * 32 + 4 * (g % 8) + c] = 1.0f;
            for (auto& v : f.pressure) v = std::clamp(v + static_cast<float>(noise(rng)), 0.0f, 1.0f);
            f.source_index = ds.frames.size();
            ds.frames.push_back(f);
            truth.push_back(g);
        }
    // Interleave so group membership is not contiguous.
    std::vector<std::size_t> order(ds.frames.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    Dataset shuffled;
    std::vector<std::size_t> t2;
    for (auto o : order) {
        shuffled.frames.push_back(ds.frames[o]);
        t2.push_back(truth[o]);
    }
    truth = t2;
    shuffled.manifest.num_frames = shuffled.frames.size();
    shuffled.manifest.num_classes = 1;
    shuffled.manifest.class_names = {"only"};
    return shuffled;
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::map<std::size_t, std::size_t> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (ab.count(a[i]) && ab[a[i]] != b[i]) return false;
        if (ba.count(b[i]) && ba[b[i]] != a[i]) return false;
        ab[a[i]] = b[i];
        ba[b[i]] = a[i];
    }
    return true;
}

} // namespace

TEST_CASE("dataset round trip") {
    TempDir dir("ds");
    auto ds = synth_generate(4, 25, 3);
    ds.frames[0].pressure[0] = 0.0f;
    Pressure empty{};
    empty[5] = 0.25f;
    ds.empty_hand = empty;
    save_dataset(dir.path(), ds);
    const auto back = load_dataset(dir.path());
    CHECK(back.manifest.num_frames == 100);
    CHECK(back.manifest.class_names == ds.manifest.class_names);
    CHECK(same_frames(ds, back));
    REQUIRE(back.empty_hand.has_value());
    CHECK(*back.empty_hand == empty);
    CHECK(read_file(dir / "frames.bin").substr(0, 4) == "TVGF");
    CHECK(read_file(dir / "labels.bin").substr(0, 4) == "TVGL");
    CHECK(read_file(dir / "empty_hand.bin").substr(0, 4) == "TVGE");
}

TEST_CASE("dataset corruption") {
    TempDir dir("bad");
    const auto ds = synth_generate(2, 10, 4);
    auto fresh = [&] {
        fs::remove_all(dir.path());
        save_dataset(dir.path(), ds);
    };

    fresh();
    fs::resize_file(dir / "frames.bin", fs::file_size(dir / "frames.bin") - 100);
    CHECK_THROWS_AS(load_dataset(dir.path()), count_mismatch_error);

    fresh();
    {
        std::ofstream out(dir / "frames.bin", std::ios::binary | std::ios::app);
        out << "xxxx";
    }
    CHECK_THROWS_AS(load_dataset(dir.path()), count_mismatch_error);

    fresh();
    patch(dir / "frames.bin", 0, "TVGX", 4);
    CHECK_THROWS_AS(load_dataset(dir.path()), format_error);

    fresh();
    const std::uint32_t v2 = 2;
    patch(dir / "labels.bin", 4, &v2, 4);
    CHECK_THROWS_AS(load_dataset(dir.path()), format_error);

    fresh();
    const float nan = std::nanf("");
    patch(dir / "frames.bin", 12 + 4 * 37, &nan, 4);
    CHECK_THROWS_AS(load_dataset(dir.path()), non_finite_error);

    fresh();
    const std::uint16_t bad_label = 9;
    patch(dir / "labels.bin", 12, &bad_label, 2);
    CHECK_THROWS_AS(load_dataset(dir.path()), dataset_error);

    fresh();
    fs::remove(dir / "labels.bin");
    CHECK_THROWS_AS(load_dataset(dir.path()), dataset_error);
}

TEST_CASE("calibration") {
    CHECK(normalize_pressure(50.0, 0.0, 200.0) == 0.25f);
    CHECK(normalize_pressure(-3.0, 0.0, 200.0) == 0.0f);
    CHECK(normalize_pressure(500.0, 0.0, 200.0) == 1.0f);

    TempDir dir("calib");
    auto ds = synth_generate(2, 5, 5);
    ds.manifest.calib_min = 0.0;
    ds.manifest.calib_max = 2.0;
    save_dataset(dir.path(), ds);
    const auto back = load_dataset(dir.path());
    CHECK(back.frames[3].pressure[100] == ds.frames[3].pressure[100] / 2.0f);
}

TEST_CASE("baseline subtraction") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> u(-50.0f, 600.0f);
    std::vector<float> frame(1024), empty(1024);
    for (auto& v : frame) v = u(rng);
    for (auto& v : empty) v = u(rng);

    const auto none = baseline_subtract(frame, frame, 0.0, 512.0);
    for (float v : none) CHECK(v == 0.0f);

    const std::vector<float> zero(1024, 0.0f);
    const auto plain = baseline_subtract(frame, zero, 0.0, 512.0);
    for (std::size_t i = 0; i < 1024; ++i) CHECK(plain[i] == normalize_pressure(std::max(frame[i], 0.0f), 0.0, 512.0));

    const auto mixed = baseline_subtract(frame, empty, 0.0, 512.0);
    for (float v : mixed) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_THROWS_AS(baseline_subtract(std::vector<float>(1000), zero, 0.0, 1.0), dimension_error);
}

TEST_CASE("informative frame filter") {
    TactileFrame blank;
    TactileFrame noise;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> low(0.0f, 0.049f);
    for (auto& v : noise.pressure) v = low(rng);
    TactileFrame blob;
    for (int r = 10; r < 15; ++r)
        for (int c = 10; c < 15; ++c) blob.pressure[r * 32 + c] = 0.6f;

    CHECK(filter_informative({blank}, 1, 0.05).empty());
    CHECK(filter_informative({blank, noise}, 0, 0.05).size() == 2);
    const auto kept = filter_informative({blank, noise, blob});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].pressure == blob.pressure);
    CHECK(filter_informative(kept).size() == 1);
}

TEST_CASE("synthetic generator") {
    const auto a = synth_generate(4, 200, 0);
    const auto b = synth_generate(4, 200, 0);
    CHECK(a.manifest.num_frames == 800);
    CHECK(a.manifest.num_classes == 4);
    CHECK(a.manifest.class_names.size() == 4);
    CHECK(same_frames(a, b));
    for (const auto& f : a.frames)
        for (float v : f.pressure) REQUIRE((v >= 0.0f && v <= 1.0f));

    // Class means against the spread of frames around them.
    std::vector<std::vector<double>> mean(4, std::vector<double>(1024, 0.0));
    std::vector<double> count(4, 0.0);
    for (const auto& f : a.frames) {
        for (std::size_t i = 0; i < 1024; ++i) mean[f.label][i] += f.pressure[i];
        count[f.label] += 1;
    }
    for (int c = 0; c < 4; ++c)
        for (auto& v : mean[c]) v /= count[c];
    double within = 0.0;
    for (const auto& f : a.frames) {
        double d = 0.0;
        for (std::size_t i = 0; i < 1024; ++i) d += (f.pressure[i] - mean[f.label][i]) * (f.pressure[i] - mean[f.label][i]);
        within += std::sqrt(d) / 800.0;
    }
    for (int p = 0; p < 4; ++p)
        for (int q = p + 1; q < 4; ++q) {
            double d = 0.0;
            for (std::size_t i = 0; i < 1024; ++i) d += (mean[p][i] - mean[q][i]) * (mean[p][i] - mean[q][i]);
            CHECK(std::sqrt(d) > 5.0 * within);
        }
    for (std::uint64_t seed = 1; seed < 6; ++seed) CHECK(separation_ratio(synth_generate(4, 200, seed)) > 5.0);

    const auto test = synth_generate(4, 50, 0, "test");
    CHECK(test.manifest.split == "test");
    CHECK(test.frames[0].pressure != a.frames[0].pressure);
}

TEST_CASE("k-means") {
    SUBCASE("well separated groups are recovered") {
        for (std::size_t k : {2, 5, 8}) {
            std::vector<std::size_t> truth;
            const auto ds = separated_groups(k, 12, truth, 40 + k);
            std::vector<std::size_t> idx(ds.frames.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            const auto cc = cluster_frames(ds, idx, k, 1);
            CHECK(same_partition(cc.frame_cluster, truth));
            for (std::size_t i = 1; i < cc.objective.size(); ++i) CHECK(cc.objective[i] <= cc.objective[i - 1]);
        }
    }
    SUBCASE("objective never increases on overlapping data") {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> n(0, 1);
        std::vector<double> pts(300 * 5);
        for (auto& v : pts) v = n(rng);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto r = kmeans(pts, 5, 6, seed);
            REQUIRE(r.objective.size() >= 2);
            for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1]);
            // Recomputed objective of the returned assignment.
            double obj = 0.0;
            for (std::size_t p = 0; p < 300; ++p)
                for (std::size_t d = 0; d < 5; ++d) {
                    const double diff = pts[p * 5 + d] - r.centroids[r.assignment[p] * 5 + d];
                    obj += diff * diff;
                }
            CHECK(obj <= r.objective.back() + 1e-9);
        }
    }
    SUBCASE("k = 1 gives the mean frame") {
        const auto ds = synth_generate(2, 20, 9);
        const auto idx = frames_of_class(ds, 1);
        const auto cc = cluster_frames(ds, idx, 1, 0, 1);
        for (auto c : cc.frame_cluster) CHECK(c == 0);
        for (std::size_t i = 0; i < 1024; i += 37) {
            double m = 0.0;
            for (auto f : idx) m += ds.frames[f].pressure[i];
            CHECK(cc.centroids[i] == doctest::Approx(m / idx.size()).epsilon(1e-5));
        }
    }
    SUBCASE("deterministic and size-ordered") {
        const auto ds = synth_generate(2, 60, 10);
        const auto idx = frames_of_class(ds, 0);
        const auto a = cluster_frames(ds, idx, 8, 3);
        const auto b = cluster_frames(ds, idx, 8, 3);
        CHECK(a.frame_cluster == b.frame_cluster);
        std::set<std::size_t> views(a.cluster_to_view.begin(), a.cluster_to_view.end());
        CHECK(views.size() == 8);
        const auto members = a.members_by_view();
        for (std::size_t v = 1; v < 8; ++v) CHECK(members[v].size() <= members[v - 1].size());
    }
    SUBCASE("too few frames names the class") {
        const auto ds = synth_generate(3, 5, 11);
        try {
            cluster_dataset(ds, 8, 0);
            FAIL("expected cluster_error");
        } catch (const cluster_error& e) {
            CHECK(std::string(e.what()).find(ds.manifest.class_names[0]) != std::string::npos);
        }
    }
}

TEST_CASE("view set sampling") {
    ClassClusters cc;
    cc.frames = {10, 11, 12};
    cc.frame_cluster = {0, 1, 2};
    cc.cluster_to_view = {2, 0, 1};
    Rng rng(12);
    CHECK(sample_view_set(cc, rng) == std::vector<std::size_t>{11, 12, 10});

    ClassClusters pair;
    pair.frames = {0, 1, 2};
    pair.frame_cluster = {0, 0, 1};
    pair.cluster_to_view = {0, 1};
    std::size_t first = 0;
    for (int t = 0; t < 1000; ++t) {
        const auto s = sample_view_set(pair, rng);
        REQUIRE(s.size() == 2);
        CHECK(s[1] == 2);
        if (s[0] == 0) ++first;
    }
    CHECK(std::abs(first / 1000.0 - 0.5) <= 0.05);

    ClassClusters hole = pair;
    hole.cluster_to_view = {0, 1, 2};
    CHECK_THROWS_AS(sample_view_set(hole, rng), cluster_error);
}

TEST_CASE("cluster files round trip") {
    TempDir dir("clusters");
    const auto ds = synth_generate(3, 30, 13);
    const auto a = cluster_dataset(ds, 8, 5);
    save_clusters(dir.path(), a);
    const auto b = load_clusters(dir.path());
    CHECK(b.k == 8);
    CHECK(b.seed == 5);
    REQUIRE(b.classes.size() == 3);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(b.classes[c].frames == a.classes[c].frames);
        CHECK(b.classes[c].frame_cluster == a.classes[c].frame_cluster);
        CHECK(b.classes[c].cluster_to_view == a.classes[c].cluster_to_view);
        CHECK(b.classes[c].centroids == a.classes[c].centroids);
    }
    const auto json1 = read_file(dir / "clusters.json");
    save_clusters(dir.path(), cluster_dataset(ds, 8, 5));
    CHECK(read_file(dir / "clusters.json") == json1);

    TempDir empty("noclusters");
    try {
        load_clusters(empty.path());
        FAIL("expected cluster_error");
    } catch (const cluster_error& e) {
        CHECK(std::string(e.what()).find("cluster") != std::string::npos);
    }
}
