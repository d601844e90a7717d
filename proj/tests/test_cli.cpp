#include "support.hpp"

#include "tvgcn/checkpoint.hpp"
#include "tvgcn/config.hpp"
#include "tvgcn/gradcheck.hpp"
#include "tvgcn/train.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

using namespace tvgcn;
using namespace tvgcn::test;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(const fs::path& root) {
    RunConfig c;
    c.backbone = "tiny";
    c.out = root.string();
    c.dataset = root.string();
    c.frames_per_class = 24;
    c.test_frames_per_class = 16;
    c.classes = 3;
    c.backbone_epochs = 2;
    c.epochs = 2;
    c.batch_size = 8;
    return c;
}

std::size_t line_count(const fs::path& p) {
    std::istringstream in(read_file(p));
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

struct Shell {
    int code;
    std::string err;
};

Shell run_cli(const std::string& args, const TempDir& dir) {
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(TVGCN_BIN) + " " + args + " > /dev/null 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(err)};
}

} // namespace

TEST_CASE("config defaults follow the training schedule") {
    const RunConfig c;
    CHECK(c.backbone_epochs == 30);
    CHECK(c.backbone_lr == 5e-3);
    CHECK(c.weight_decay == 1e-4);
    CHECK(c.momentum == 0.9);
    CHECK(c.epochs == 15);
    CHECK(c.finetune_backbone_lr == 1e-4);
    CHECK(c.gcn_lr == 5e-4);
    CHECK(c.batch_size == 32);
    CHECK(c.view_count() == 8);
    CHECK(c.effective_neighbors() == 3);
    RunConfig ring;
    ring.views = "circular12";
    CHECK(ring.view_count() == 12);
    CHECK(ring.effective_neighbors() == 2);
}

TEST_CASE("config json") {
    RunConfig c;
    c.seed = 42;
    c.views = "circular12";
    c.gcn_lr = 0.125;
    c.normalize_views = true;
    const auto back = config_from_json(config_to_json(c));
    CHECK(back.seed == 42);
    CHECK(back.views == "circular12");
    CHECK(back.gcn_lr == 0.125);
    CHECK(back.normalize_views);
    CHECK(config_from_json("{}").epochs == 15);

    auto message = [](const std::string& text) {
        try {
            config_from_json(text);
        } catch (const config_error& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message(R"({"epochz": 3})").find("epochz") != std::string::npos);
    CHECK(message(R"({"epochs": "three"})").find("epochs") != std::string::npos);
    CHECK(message(R"({"views": "cube6"})").find("views") != std::string::npos);
    CHECK(message("[1, 2]").find("object") != std::string::npos);
    CHECK_FALSE(message("{not json").empty());

    RunConfig o;
    apply_override(o, "gcn_lr", "0.25");
    apply_override(o, "epochs", "3");
    apply_override(o, "normalize_views", "true");
    CHECK(o.gcn_lr == 0.25);
    CHECK(o.epochs == 3);
    CHECK(o.normalize_views);
    CHECK_THROWS_AS(apply_override(o, "epochs", "-1"), config_error);
    CHECK_THROWS_AS(apply_override(o, "epochs", "2x"), config_error);
    CHECK_THROWS_AS(apply_override(o, "nope", "1"), config_error);
}

TEST_CASE("pipeline outputs, row counts and resume") {
    TempDir dir("pipe");
    auto cfg = small_run(dir.path());
    run_synth(cfg);
    CHECK(fs::exists(dir / "train" / "manifest.json"));
    CHECK(fs::exists(dir / "test" / "manifest.json"));
    CHECK(load_dataset(dir / "train").manifest.num_frames == 72);

    // Stage 2 refuses to run without clusters.
    try {
        run_train(cfg);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("cluster") != std::string::npos);
    }

    const auto clusters = run_cluster(cfg);
    CHECK(clusters.k == 8);
    CHECK(fs::exists(dir / "train" / "clusters.json"));

    const auto stage1 = run_train_backbone(cfg);
    CHECK(line_count(dir / "backbone_metrics.csv") == 1 + cfg.backbone_epochs + 1);
    CHECK(read_file(dir / "backbone_metrics.csv").rfind(std::string(metrics_header) + "\n", 0) == 0);
    CHECK(fs::exists(dir / "backbone.tvgc"));
    CHECK(fs::exists(dir / "backbone.json"));

    const auto stage2 = run_train(cfg);
    CHECK(stage2.rows.size() == 2 * (cfg.epochs + 1));
    CHECK(line_count(dir / "metrics.csv") == 1 + 2 * (cfg.epochs + 1));
    for (const auto& r : stage2.rows) {
        CHECK(r.loss >= 0.0);
        CHECK(r.accuracy >= 0.0);
        CHECK(r.accuracy <= 1.0);
        CHECK(r.lr_backbone == 1e-4);
        CHECK(r.lr_gcn == 5e-4);
    }
    const auto full = read_file(dir / "model.tvgc");

    // One epoch, then resume for the second.
    TempDir half("half");
    auto first = cfg;
    first.out = half.path().string();
    first.backbone_checkpoint = (dir / "backbone.tvgc").string();
    first.epochs = 1;
    run_train(first);
    auto second = first;
    second.epochs = 2;
    second.resume = (half / "model.tvgc").string();
    const auto resumed = run_train(second);
    CHECK(resumed.rows.front().epoch == 1);
    CHECK(read_file(half / "model.tvgc") == full);

    auto ev = cfg;
    ev.trials = 2;
    const auto result = run_eval(ev);
    REQUIRE(result.confusion.size() == 3);
    std::size_t total = 0, diag = 0;
    const std::size_t per_class = (16 + 7) / 8;
    for (std::size_t t = 0; t < 3; ++t) {
        std::size_t row = 0;
        for (std::size_t p = 0; p < 3; ++p) row += result.confusion[t][p];
        CHECK(row == 2 * per_class);
        total += row;
        diag += result.confusion[t][t];
    }
    CHECK(std::abs(static_cast<double>(diag) / static_cast<double>(total) - result.accuracy) < 1e-6);
    CHECK(result.trial_accuracy.size() == 2);
    CHECK(line_count(dir / "confusion.csv") == 4);

    auto mismatch = cfg;
    mismatch.levels = 2;
    try {
        run_eval(mismatch);
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("levels") != std::string::npos);
    }
}

TEST_CASE("command line errors name the stage") {
    TempDir dir("cli");
    auto r = run_cli("train-backbone --dataset " + (dir / "missing").string() + " --out " + dir.path().string(), dir);
    CHECK(r.code != 0);
    CHECK(r.err.find("error: train-backbone:") != std::string::npos);

    r = run_cli("train --epochs banana", dir);
    CHECK(r.code != 0);
    CHECK(r.err.find("epochs") != std::string::npos);

    r = run_cli("cluster --views hexagon", dir);
    CHECK(r.code != 0);
    CHECK(r.err.find("views") != std::string::npos);

    r = run_cli("synth --classes 3 --frames_per_class 5 --test_frames_per_class 8 --out " + dir.path().string(), dir);
    CHECK(r.code == 0);
    r = run_cli("cluster --dataset " + dir.path().string(), dir);
    CHECK(r.code != 0);
    CHECK(r.err.find("error: cluster:") != std::string::npos);
    CHECK(r.err.find("synthetic_0") != std::string::npos);
}

TEST_CASE("gradcheck reports every group and catches a broken backward rule") {
    GradcheckOptions o;
    o.samples_per_tensor = 3;
    o.backbone_samples_per_tensor = 1;
    const auto good = run_gradcheck(o);
    CHECK(good.pass());
    CHECK(good.groups.size() >= 7);

    set_backward_fault("sum_senders", 1.5);
    const auto bad = run_gradcheck(o);
    clear_backward_fault();
    CHECK_FALSE(bad.pass());
    const auto failures = bad.failures();
    CHECK(std::find(failures.begin(), failures.end(), "op sum_senders") != failures.end());
}
