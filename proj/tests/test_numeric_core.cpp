#include "support.hpp"

#include "tvgcn/checkpoint.hpp"
#include "tvgcn/nn.hpp"
#include "tvgcn/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace tvgcn;
using namespace tvgcn::test;

namespace {

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
    return Tensor<double>(Shape{r, c}, std::move(v), grad);
}

// Sum of x weighted by fixed random coefficients, so every output element
// gets a distinct upstream gradient.
Tensor<double> project(const Tensor<double>& x, const Tensor<double>& w) {
    return sum(matmul(reshape(x, Shape{1, x.size()}), w));
}

} // namespace

TEST_CASE("tensor shape must match value count") {
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), dimension_error);
    Tensor<double> t(Shape{2, 3});
    CHECK(t.size() == 6);
    t[4] = std::nan("");
    CHECK_THROWS_AS(t.check_finite("t"), numeric_error);
}

TEST_CASE("matmul") {
    std::mt19937_64 rng(1);
    const auto m = random_tensor(Shape{3, 3}, rng, -1, 1, false);
    const auto eye = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto out = matmul(eye, m);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out[i] == m[i]);

    const auto c = matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 2, {1, 0, 0, 1}));
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3, 4});

    try {
        matmul(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{4, 5}));
        FAIL("expected dimension_error");
    } catch (const dimension_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }

    auto a = random_tensor(Shape{4, 3}, rng);
    auto b = random_tensor(Shape{3, 5}, rng);
    CHECK(fd_max_error([&] { return sum(matmul(a, b)); }, {a, b}) < 1e-4);
}

TEST_CASE("conv2d") {
    std::mt19937_64 rng(2);
    SUBCASE("identity kernel") {
        const auto x = random_tensor(Shape{1, 3, 3}, rng, 0, 1, false);
        const Tensor<double> k(Shape{1, 1, 1, 1}, std::vector<double>{1.0});
        const auto y = conv2d(x, k, 1, 0);
        REQUIRE(y.shape() == Shape{1, 3, 3});
        for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == x[i]);
    }
    SUBCASE("zero input") {
        const Tensor<double> x(Shape{2, 5, 5});
        const auto k = random_tensor(Shape{3, 2, 3, 3}, rng, -1, 1, false);
        const auto y = conv2d(x, k, 1, 1);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("non-integral output size") {
        const Tensor<double> x(Shape{1, 8, 8});
        const Tensor<double> k(Shape{1, 1, 3, 3});
        CHECK_THROWS_AS(conv2d(x, k, 2, 1), std::invalid_argument);
    }
    SUBCASE("cross-correlation against a direct loop") {
        const auto x = random_tensor(Shape{2, 6, 7}, rng, -1, 1, false);
        const auto k = random_tensor(Shape{3, 2, 3, 3}, rng, -1, 1, false);
        const auto y = conv2d(x, k, 1, 1);
        REQUIRE(y.shape() == Shape{3, 6, 7});
        double worst = 0.0;
        for (int o = 0; o < 3; ++o)
            for (int r = 0; r < 6; ++r)
                for (int c = 0; c < 7; ++c) {
                    double s = 0.0;
                    for (int ci = 0; ci < 2; ++ci)
                        for (int dr = 0; dr < 3; ++dr)
                            for (int dc = 0; dc < 3; ++dc) {
                                const int rr = r + dr - 1, cc = c + dc - 1;
                                if (rr < 0 || rr >= 6 || cc < 0 || cc >= 7) continue;
                                s += x[(ci * 6 + rr) * 7 + cc] * k[((o * 2 + ci) * 3 + dr) * 3 + dc];
                            }
                    worst = std::max(worst, std::abs(s - y[(o * 6 + r) * 7 + c]));
                }
        CHECK(worst < 1e-12);
    }
    SUBCASE("floor-mode layer drops the trailing window") {
        Rng init(3);
        Conv2d<double> layer(1, 2, 3, 2, 1, init);
        const auto x = random_tensor(Shape{1, 1, 8, 8}, rng, -1, 1, false);
        const auto y = layer(x);
        REQUIRE(y.shape() == Shape{1, 2, 4, 4});
        // Output (r, c) covers input rows 2r-1 .. 2r+1.
        double worst = 0.0;
        for (int o = 0; o < 2; ++o)
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) {
                    double s = 0.0;
                    for (int dr = 0; dr < 3; ++dr)
                        for (int dc = 0; dc < 3; ++dc) {
                            const int rr = 2 * r + dr - 1, cc = 2 * c + dc - 1;
                            if (rr < 0 || rr >= 8 || cc < 0 || cc >= 8) continue;
                            s += x[rr * 8 + cc] * layer.weight[(o * 3 + dr) * 3 + dc];
                        }
                    worst = std::max(worst, std::abs(s - y[(o * 4 + r) * 4 + c]));
                }
        CHECK(worst < 1e-12);
    }
    SUBCASE("gradient") {
        auto x = random_tensor(Shape{1, 8, 8}, rng);
        auto k = random_tensor(Shape{4, 1, 3, 3}, rng);
        const auto w = random_tensor(Shape{4 * 8 * 8, 1}, rng, -1, 1, false);
        CHECK(fd_max_error([&] { return project(conv2d(x, k, 1, 1), w); }, {x, k}) < 1e-4);
    }
}

TEST_CASE("batch_norm") {
    std::mt19937_64 rng(4);
    Tensor<double> gamma(Shape{2}, {1.0, 1.0}, true), beta(Shape{2}, true);
    Tensor<double> rm(Shape{2}), rv(Shape{2}, {1.0, 1.0});

    SUBCASE("already normalized input passes through") {
        const auto x = mat(4, 2, {1, -1, -1, 1, 1, 1, -1, -1});
        const auto y = batch_norm(x, gamma, beta, rm, rv, Mode::train);
        for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(y[i] - x[i]) < 1e-5);
    }
    SUBCASE("gamma zero yields beta") {
        Tensor<double> g0(Shape{2}), b(Shape{2}, {0.5, -2.0});
        const auto x = random_tensor(Shape{5, 2}, rng, -3, 3, false);
        const auto y = batch_norm(x, g0, b, rm, rv, Mode::train);
        for (std::size_t r = 0; r < 5; ++r) {
            CHECK(y[r * 2] == 0.5);
            CHECK(y[r * 2 + 1] == -2.0);
        }
    }
    SUBCASE("train output has zero mean and unit variance") {
        const auto x = random_tensor(Shape{16, 2}, rng, -5, 9, false);
        const auto y = batch_norm(x, gamma, beta, rm, rv, Mode::train);
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0, var = 0.0;
            for (std::size_t r = 0; r < 16; ++r) mean += y[r * 2 + c] / 16.0;
            for (std::size_t r = 0; r < 16; ++r) var += (y[r * 2 + c] - mean) * (y[r * 2 + c] - mean) / 16.0;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-5);
        }
    }
    SUBCASE("running statistics and eval mode") {
        const auto x = mat(2, 2, {0, 2, 4, 2});
        batch_norm(x, gamma, beta, rm, rv, Mode::train);
        CHECK(rm[0] == doctest::Approx(0.2));
        CHECK(rm[1] == doctest::Approx(0.2));
        const auto y = batch_norm(mat(1, 2, {1, 1}), gamma, beta, rm, rv, Mode::eval);
        CHECK(y[0] == doctest::Approx((1 - rm[0]) / std::sqrt(rv[0] + 1e-5)));
    }
    SUBCASE("single row in train mode is rejected") {
        CHECK_THROWS(batch_norm(mat(1, 2, {1, 2}), gamma, beta, rm, rv, Mode::train));
    }
    SUBCASE("gradient") {
        auto x = random_tensor(Shape{6, 3}, rng);
        auto g = random_tensor(Shape{3}, rng, 0.5, 1.5);
        auto b = random_tensor(Shape{3}, rng);
        Tensor<double> m(Shape{3}), v(Shape{3}, {1, 1, 1});
        const auto w = random_tensor(Shape{18, 1}, rng, -1, 1, false);
        CHECK(fd_max_error([&] { return project(batch_norm(x, g, b, m, v, Mode::train), w); }, {x, g, b}) < 1e-3);
    }
}

TEST_CASE("leaky_relu") {
    const Tensor<double> x(Shape{2}, {2.0, -2.0});
    const auto y = leaky_relu(x, 0.01);
    CHECK(y[0] == 2.0);
    CHECK(y[1] == doctest::Approx(-0.02));
    const auto r = relu(x);
    CHECK(r[0] == 2.0);
    CHECK(r[1] == 0.0);

    std::mt19937_64 rng(5);
    auto z = random_tensor(Shape{20}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < z.size(); i += 2) z[i] = -z[i];
    const auto w = random_tensor(Shape{20, 1}, rng, -1, 1, false);
    CHECK(fd_max_error([&] { return project(leaky_relu(z, 0.2), w); }, {z}) < 1e-6);
}

TEST_CASE("max_pool_rows") {
    const auto one = mat(1, 3, {4, -1, 2});
    const auto p1 = max_pool_rows(one);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p1[i] == one[i]);

    const auto p = max_pool_rows(mat(2, 2, {1, 5, 3, 2}));
    CHECK(p[0] == 3.0);
    CHECK(p[1] == 5.0);

    std::mt19937_64 rng(6);
    const auto x = random_tensor(Shape{7, 4}, rng, -1, 1, false);
    const auto ref = max_pool_rows(x);
    std::vector<std::size_t> order(7);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int t = 0; t < 20; ++t) {
        std::shuffle(order.begin(), order.end(), rng);
        const auto q = max_pool_rows(gather_rows(x, order));
        for (std::size_t i = 0; i < 4; ++i) CHECK(q[i] == ref[i]);
    }
    CHECK_THROWS(max_pool_rows(Tensor<double>(Shape{0, 3})));
}

TEST_CASE("softmax_cross_entropy") {
    const std::vector<int> label{3};
    const auto uniform = softmax_cross_entropy(Tensor<double>(Shape{1, 26}), label);
    CHECK(uniform.item() == doctest::Approx(std::log(26.0)).epsilon(1e-12));

    Tensor<double> peaked(Shape{1, 26});
    peaked[3] = 1000.0;
    CHECK(softmax_cross_entropy(peaked, label).item() < 1e-12);

    CHECK_THROWS_AS(softmax_cross_entropy(Tensor<double>(Shape{1, 4}), std::vector<int>{4}), std::out_of_range);

    std::mt19937_64 rng(7);
    auto logits = random_tensor(Shape{3, 5}, rng, -2, 2);
    const std::vector<int> labels{0, 4, 2};
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(softmax_cross_entropy(logits, labels));
    }
    for (std::size_t r = 0; r < 3; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits[r * 5 + c]);
        for (std::size_t c = 0; c < 5; ++c) {
            const double expected = (std::exp(logits[r * 5 + c]) / z - (static_cast<int>(c) == labels[r])) / 3.0;
            CHECK(logits.grad()[r * 5 + c] == doctest::Approx(expected).epsilon(1e-10));
        }
    }
    logits.zero_grad();
    CHECK(fd_max_error([&] { return softmax_cross_entropy(logits, labels); }, {logits}) < 1e-4);

    auto shifted = logits.detach();
    for (std::size_t c = 0; c < 5; ++c) shifted[5 + c] += 37.5;
    CHECK(std::abs(softmax_cross_entropy(shifted, labels).item() - softmax_cross_entropy(logits.detach(), labels).item()) <
          1e-6);
}

TEST_CASE("backward") {
    std::mt19937_64 rng(8);
    SUBCASE("sum gives all ones") {
        auto x = random_tensor(Shape{2, 3}, rng);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        tape.backward(sum(x));
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SUBCASE("fan-out accumulates") {
        auto x = random_tensor(Shape{4}, rng);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        tape.backward(sum(add(x, x)));
        for (double g : x.grad()) CHECK(g == 2.0);
    }
    SUBCASE("non-scalar loss") {
        auto x = random_tensor(Shape{4}, rng);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), dimension_error);
    }
    SUBCASE("non-finite gradient names the op") {
        auto x = random_tensor(Shape{1, 2}, rng);
        auto w = random_tensor(Shape{2, 1}, rng);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        const auto loss = sum(leaky_relu(matmul(x, w), 0.2));
        set_backward_fault("matmul", std::numeric_limits<double>::infinity());
        try {
            tape.backward(loss);
            FAIL("expected numeric_error");
        } catch (const numeric_error& e) {
            CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        }
        clear_backward_fault();
    }
    SUBCASE("repeated backward is bit-identical") {
        auto a = random_tensor(Shape{5, 4}, rng);
        auto b = random_tensor(Shape{4, 3}, rng);
        std::vector<double> first;
        for (int run = 0; run < 2; ++run) {
            a.zero_grad();
            b.zero_grad();
            Tape<double> tape;
            TapeScope<double> scope(tape);
            tape.backward(sum(leaky_relu(matmul(a, b), 0.01)));
            std::vector<double> g(a.grad().begin(), a.grad().end());
            g.insert(g.end(), b.grad().begin(), b.grad().end());
            if (run == 0) first = g;
            else CHECK(g == first);
        }
    }
}

TEST_CASE("sgd_momentum_step") {
    SUBCASE("plain gradient step") {
        std::vector<double> p{1.0, -2.0}, g{0.25, 0.5}, v{0.0, 0.0};
        sgd_momentum_step<double>(p, g, v, SgdOptions{1.0, 0.0, 0.0});
        CHECK(p[0] == 0.75);
        CHECK(p[1] == -2.5);
    }
    SUBCASE("zero gradient and zero velocity") {
        std::vector<double> p{3.0}, g{0.0}, v{0.0};
        sgd_momentum_step<double>(p, g, v, SgdOptions{0.1, 0.9, 0.0});
        CHECK(p[0] == 3.0);
    }
    SUBCASE("two steps with momentum") {
        std::vector<double> p{1.0}, g{0.5}, v{0.0};
        const SgdOptions o{0.1, 0.9, 0.01};
        sgd_momentum_step<double>(p, g, v, o);
        // v1 = 0.5 + 0.01 = 0.51, p1 = 1 - 0.051 = 0.949
        CHECK(v[0] == doctest::Approx(0.51));
        CHECK(p[0] == doctest::Approx(0.949));
        sgd_momentum_step<double>(p, g, v, o);
        // v2 = 0.9*0.51 + 0.5 + 0.00949 = 0.96849, p2 = 0.949 - 0.096849
        CHECK(v[0] == doctest::Approx(0.96849));
        CHECK(p[0] == doctest::Approx(0.852151));
    }
    SUBCASE("zero learning rate leaves parameters bit-identical") {
        std::vector<float> p{0.123f, -4.5f}, g{1.0f, 2.0f}, v{0.3f, 0.1f};
        const auto before = p;
        sgd_momentum_step<float>(p, g, v, SgdOptions{0.0, 0.9, 1e-4});
        CHECK(p == before);
    }
    SUBCASE("shape mismatch") {
        std::vector<double> p{1.0, 2.0}, g{1.0}, v{0.0, 0.0};
        CHECK_THROWS_AS(sgd_momentum_step<double>(p, g, v, SgdOptions{}), dimension_error);
    }
    SUBCASE("option ranges") {
        CHECK_THROWS(SgdOptions{0.1, 1.0, 0.0}.validate());
        CHECK_THROWS(SgdOptions{0.1, 0.5, -1.0}.validate());
    }
}

TEST_CASE("lr_at_epoch") {
    CHECK(lr_at_epoch(5e-3, 0) == 5e-3);
    CHECK(lr_at_epoch(5e-3, 10) == 2.5e-3);
    CHECK(lr_at_epoch(5e-3, 29) == 1.25e-3);
    CHECK(lr_at_epoch(5e-3, 9) == 5e-3);
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("ckpt");
    Rng rng(9);
    Linear<float> layer(3, 2, rng);
    ParamList<float> params;
    layer.collect(params, "fc", "g");
    const auto path = dir / "m.tvgc";
    write_checkpoint(path, to_entries(params));

    Rng other(10);
    Linear<float> restored(3, 2, other);
    ParamList<float> target;
    restored.collect(target, "fc", "g");
    load_entries(target, read_checkpoint(path));
    for (std::size_t i = 0; i < 6; ++i) CHECK(restored.weight[i] == layer.weight[i]);

    const auto bytes = read_file(path);
    CHECK(bytes.substr(0, 4) == "TVGC");
    CHECK(sidecar_path(path).filename() == "m.json");

    std::string broken = bytes;
    broken[0] = 'X';
    {
        std::ofstream out(dir / "bad.tvgc", std::ios::binary);
        out << broken;
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "bad.tvgc"), checkpoint_error);

    Rng third(11);
    Linear<float> wrong(4, 2, third);
    ParamList<float> mismatched;
    wrong.collect(mismatched, "fc", "g");
    try {
        load_entries(mismatched, read_checkpoint(path));
        FAIL("expected checkpoint_error");
    } catch (const checkpoint_error& e) {
        CHECK(std::string(e.what()).find("fc.weight") != std::string::npos);
    }
}
