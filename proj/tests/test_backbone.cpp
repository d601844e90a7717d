#include "support.hpp"

#include "tvgcn/backbone.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace tvgcn;
using namespace tvgcn::test;

namespace {

Tensor<double> random_frames(std::size_t b, std::mt19937_64& rng) {
    return random_tensor(Shape{b, 1, frame_side, frame_side}, rng, 0, 1, false);
}

} // namespace

TEST_CASE("backbone config") {
    CHECK(BackboneConfig::for_preset(BackbonePreset::resnet18, 26).feature_dim == 512);
    CHECK(BackboneConfig::for_preset(BackbonePreset::tiny, 26).feature_dim == 64);
    CHECK(parse_backbone_preset("tiny") == BackbonePreset::tiny);
    CHECK_THROWS(parse_backbone_preset("vgg"));
    BackboneConfig bad{BackbonePreset::tiny, 32, 4};
    CHECK_THROWS(bad.validate());
    BackboneConfig one_class{BackbonePreset::tiny, 64, 1};
    CHECK_THROWS(one_class.validate());
}

TEST_CASE("tiny backbone shapes and determinism") {
    Rng init(1);
    Backbone<double> net(BackboneConfig::for_preset(BackbonePreset::tiny, 26), init);
    std::mt19937_64 rng(2);
    const auto frames = random_frames(3, rng);

    const auto f = net.forward(frames, Mode::eval);
    CHECK(f.shape() == Shape{3, 64});
    const auto logits = net.classify(frames, Mode::eval);
    CHECK(logits.shape() == Shape{3, 26});

    const auto single = net.forward(Tensor<double>(Shape{1, 32, 32}, std::vector<double>(frames.data().begin(),
                                                                                          frames.data().begin() + 1024)),
                                    Mode::eval);
    CHECK(single.shape() == Shape{64});
    for (std::size_t i = 0; i < 64; ++i) CHECK(single[i] == f[i]);

    const auto again = net.forward(frames, Mode::eval);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(again[i] == f[i]);

    CHECK_THROWS_AS(net.forward(Tensor<double>(Shape{2, 1, 16, 16}), Mode::eval), dimension_error);
}

TEST_CASE("untrained head gives near-uniform loss") {
    Rng init(3);
    Backbone<double> net(BackboneConfig::for_preset(BackbonePreset::tiny, 26), init);
    std::mt19937_64 rng(4);
    const auto frames = random_frames(8, rng);
    std::vector<int> labels{0, 3, 7, 11, 13, 19, 22, 25};
    const double loss = softmax_cross_entropy(net.classify(frames, Mode::train), labels).item();
    CHECK(std::abs(loss - std::log(26.0)) < 0.1 * std::log(26.0));
}

TEST_CASE("resnet18 layout") {
    Rng init(5);
    Backbone<float> net(BackboneConfig::for_preset(BackbonePreset::resnet18, 26), init);
    CHECK(net.block_count() == 8);
    CHECK(net.stage_channels() == std::vector<std::size_t>{64, 128, 256, 512});
    ParamList<float> params;
    net.collect(params);
    const auto& stem = params.items().front();
    CHECK(stem.tensor.shape() == Shape{64, 1, 3, 3});
    std::set<std::string> groups;
    for (const auto& p : params.items()) groups.insert(p.group);
    CHECK(groups == std::set<std::string>{"backbone", "backbone_head"});
}

TEST_CASE("input gradient matches finite differences") {
    Rng init(6);
    Backbone<double> net(BackboneConfig::for_preset(BackbonePreset::tiny, 4), init);
    std::mt19937_64 rng(7);
    auto x = random_tensor(Shape{1, 1, 32, 32}, rng, 0, 1);

    auto mean_logit = [&] { return scale(sum(net.classify(x, Mode::eval)), 0.25); };
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(mean_logit());
    }
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    for (double g : analytic) REQUIRE(std::isfinite(g));

    std::mt19937_64 pick(8);
    std::uniform_int_distribution<std::size_t> cell(0, 1023);
    std::size_t checked = 0;
    double worst = 0.0;
    for (int t = 0; t < 200 && checked < 20; ++t) {
        const std::size_t i = cell(pick);
        const double keep = x[i], h = 1e-4;
        std::uint64_t base_hash, up_hash, down_hash;
        {
            BranchTrace trace;
            mean_logit();
            base_hash = trace.hash();
        }
        x[i] = keep + h;
        double up;
        {
            BranchTrace trace;
            up = mean_logit().item();
            up_hash = trace.hash();
        }
        x[i] = keep - h;
        double down;
        {
            BranchTrace trace;
            down = mean_logit().item();
            down_hash = trace.hash();
        }
        x[i] = keep;
        if (up_hash != base_hash || down_hash != base_hash) continue;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * h)));
        ++checked;
    }
    CHECK(checked >= 10);
    CHECK(worst < 1e-3);
}
