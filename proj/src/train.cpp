#include "tvgcn/train.hpp"

#include "tvgcn/checkpoint.hpp"
#include "tvgcn/model.hpp"
#include "tvgcn/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>

namespace tvgcn {

namespace fs = std::filesystem;
using nlohmann::json;
using F = float;

namespace {

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1) + 0xBF58476D1CE4E5B9ull * index;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

enum Stream : std::uint64_t { shuffle_stream = 1, view_set_stream = 2, train_probe_stream = 3, test_stream = 4 };

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

struct Sample {
    std::vector<std::size_t> frames; // one per viewpoint
    int label = 0;
};

Tensor<F> stack_frames(const Dataset& ds, std::span<const std::size_t> indices) {
    Tensor<F> t(Shape{indices.size(), 1, frame_side, frame_side});
    auto dst = t.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& p = ds.frames.at(indices[i]).pressure;
        std::copy(p.begin(), p.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * frame_cells));
    }
    return t;
}

std::size_t argmax_row(const Tensor<F>& logits, std::size_t row) {
    const std::size_t c = logits.dim(1);
    const auto d = logits.data().subspan(row * c, c);
    return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

std::size_t sets_for(const RunConfig& cfg, std::size_t class_frames) {
    if (cfg.sets_per_class != 0) return cfg.sets_per_class;
    const std::size_t k = cfg.view_count();
    return (class_frames + k - 1) / k;
}

std::vector<Sample> draw_view_sets(const RunConfig& cfg, const ClusterAssignment& clusters, Rng& rng) {
    std::vector<Sample> out;
    for (const auto& c : clusters.classes) {
        const std::size_t count = sets_for(cfg, c.frames.size());
        for (std::size_t s = 0; s < count; ++s) out.push_back({sample_view_set(c, rng), c.label});
    }
    return out;
}

std::vector<std::vector<std::size_t>> batches_of(std::size_t total, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < total; start += batch_size) {
        std::vector<std::size_t> b;
        for (std::size_t i = start; i < std::min(total, start + batch_size); ++i) b.push_back(i);
        out.push_back(std::move(b));
    }
    return out;
}

void log_line(std::ostream* log, const std::string& line) {
    if (log) *log << line << std::endl;
}

void save_model(const fs::path& path, const ParamList<F>& params, const std::vector<CheckpointEntry>& extra,
                const json& meta) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    auto entries = to_entries(params);
    entries.insert(entries.end(), extra.begin(), extra.end());
    write_checkpoint(path, entries);
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    if (!side) throw checkpoint_error("checkpoint: cannot write " + sidecar_path(path).string());
    side << meta.dump(2) << '\n';
}

json read_sidecar(const fs::path& checkpoint) {
    std::ifstream in(sidecar_path(checkpoint));
    if (!in) throw checkpoint_error("checkpoint: missing metadata " + sidecar_path(checkpoint).string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw checkpoint_error("checkpoint: malformed metadata: " + std::string(e.what()));
    }
}

json model_meta(const RunConfig& cfg, std::size_t num_classes, const std::string& stage) {
    json m;
    m["stage"] = stage;
    m["backbone"] = cfg.backbone;
    m["feature_dim"] = cfg.backbone_config(num_classes).feature_dim;
    m["num_classes"] = num_classes;
    if (stage != "backbone") {
        m["aggregator"] = cfg.aggregator;
        m["views"] = cfg.views;
        m["normalize_views"] = cfg.normalize_views;
        m["selector_hidden"] = cfg.selector_hidden;
        m["n_neighbors"] = cfg.effective_neighbors();
        m["levels"] = cfg.levels;
    }
    return m;
}

/// Throws naming the first field where the checkpoint disagrees with cfg.
void check_compatible(const json& meta, const json& expected, const fs::path& checkpoint) {
    for (const auto& [key, value] : expected.items()) {
        if (key == "stage") continue;
        if (!meta.contains(key) || meta.at(key) != value) {
            throw config_error("checkpoint " + checkpoint.string() + " mismatch in field '" + key +
                               "': checkpoint has " + (meta.contains(key) ? meta.at(key).dump() : "nothing") +
                               ", config has " + value.dump());
        }
    }
}

// The view-set classifier of stage 2, either variant.
struct Net {
    std::optional<TactileViewGcn<F>> gcn;
    std::optional<MaxPoolBaseline<F>> pool;
    GcnConfig gcn_config;
    std::vector<Vec3> views;

    Net(const RunConfig& cfg, std::size_t num_classes, Rng& rng)
        : gcn_config(cfg.gcn_config(num_classes)), views(cfg.viewpoints()) {
        if (cfg.aggregator == "gcn")
            gcn.emplace(cfg.backbone_config(num_classes), gcn_config, rng);
        else
            pool.emplace(cfg.backbone_config(num_classes), views.size(), rng);
    }

    Backbone<F>& backbone() { return gcn ? gcn->backbone() : pool->backbone(); }

    void collect(ParamList<F>& params) const {
        if (gcn)
            gcn->collect(params);
        else
            pool->collect(params);
    }

    Tensor<F> loss(const Tensor<F>& frames, std::size_t batch, std::span<const int> labels, Mode mode,
                   Tensor<F>& logits) {
        if (gcn) {
            auto out = gcn->forward(frames, views, batch, mode);
            logits = out.logits;
            return total_loss(out, labels, gcn_config);
        }
        logits = pool->forward(frames, batch, mode);
        return softmax_cross_entropy(logits, labels);
    }
};

struct Score {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
};

Score score_view_sets(Net& net, const Dataset& ds, const std::vector<Sample>& samples, std::size_t batch_size) {
    Score s;
    std::size_t correct = 0;
    for (const auto& b : batches_of(samples.size(), batch_size)) {
        std::vector<std::size_t> idx;
        std::vector<int> labels;
        for (auto i : b) {
            idx.insert(idx.end(), samples[i].frames.begin(), samples[i].frames.end());
            labels.push_back(samples[i].label);
        }
        Tensor<F> logits;
        const double l = net.loss(stack_frames(ds, idx), b.size(), labels, Mode::eval, logits).item();
        s.loss += l * static_cast<double>(b.size());
        for (std::size_t r = 0; r < b.size(); ++r) {
            const auto pred = argmax_row(logits, r);
            s.predictions.push_back(pred);
            if (static_cast<int>(pred) == labels[r]) ++correct;
        }
    }
    if (!samples.empty()) {
        s.loss /= static_cast<double>(samples.size());
        s.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    }
    return s;
}

Score score_frames(Backbone<F>& backbone, const Dataset& ds, std::size_t batch_size) {
    Score s;
    std::size_t correct = 0;
    for (const auto& b : batches_of(ds.frames.size(), batch_size)) {
        std::vector<int> labels;
        for (auto i : b) labels.push_back(ds.frames[i].label);
        const Tensor<F> logits = backbone.classify(stack_frames(ds, b), Mode::eval);
        s.loss += softmax_cross_entropy(logits, labels).item() * static_cast<double>(b.size());
        for (std::size_t r = 0; r < b.size(); ++r)
            if (static_cast<int>(argmax_row(logits, r)) == labels[r]) ++correct;
    }
    s.loss /= static_cast<double>(ds.frames.size());
    s.accuracy = static_cast<double>(correct) / static_cast<double>(ds.frames.size());
    return s;
}

Dataset load_split(const RunConfig& cfg, const std::string& split) {
    if (cfg.dataset.empty()) throw config_error("config: field 'dataset' is required");
    return load_dataset(split_dir(cfg.dataset, split));
}

std::optional<Dataset> load_optional_split(const RunConfig& cfg, const std::string& split) {
    const fs::path dir = fs::path(cfg.dataset) / split;
    if (!fs::exists(dir / "manifest.json")) return std::nullopt;
    return load_dataset(dir);
}

} // namespace

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("metrics: cannot write " + path.string());
    out << metrics_header << '\n';
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.split << ',' << format_number(r.loss) << ',' << format_number(r.accuracy) << ','
            << format_number(r.lr_backbone) << ',' << format_number(r.lr_gcn) << ',' << format_number(r.wall_seconds)
            << '\n';
    }
}

fs::path split_dir(const fs::path& root, const std::string& split) {
    if (fs::exists(root / split / "manifest.json")) return root / split;
    return root;
}

void run_synth(const RunConfig& cfg, std::ostream* log) {
    const fs::path out(cfg.out);
    auto train = synth_generate(cfg.classes, cfg.frames_per_class, cfg.seed, "train");
    save_dataset(out / "train", train);
    auto test = synth_generate(cfg.classes, cfg.test_frames_per_class, cfg.seed, "test");
    save_dataset(out / "test", test);
    log_line(log, "synth: wrote " + std::to_string(train.frames.size()) + " train and " +
                      std::to_string(test.frames.size()) + " test frames (" + std::to_string(cfg.classes) +
                      " classes) to " + out.string());
}

ClusterAssignment run_cluster(const RunConfig& cfg, std::ostream* log) {
    const fs::path dir = split_dir(cfg.dataset, "train");
    const Dataset ds = load_dataset(dir);
    auto assignment = cluster_dataset(ds, cfg.view_count(), cfg.seed);
    save_clusters(dir, assignment);
    for (const auto& c : assignment.classes) {
        std::string sizes;
        for (const auto& m : c.members_by_view()) sizes += ' ' + std::to_string(m.size());
        log_line(log, "cluster: class " + std::to_string(c.label) + " view sizes" + sizes);
    }
    log_line(log, "cluster: wrote " + (dir / "clusters.json").string() + " (k = " + std::to_string(cfg.view_count()) + ")");
    return assignment;
}

TrainResult run_train_backbone(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    const Clock clock;
    const Dataset ds = load_split(cfg, "train");
    const std::size_t classes = ds.manifest.num_classes;
    Rng init(cfg.seed);
    Backbone<F> backbone(cfg.backbone_config(classes), init);
    ParamList<F> params;
    backbone.collect(params);
    SgdOptions opt{cfg.backbone_lr, cfg.momentum, cfg.weight_decay};
    SgdMomentum<F> sgd(params.trainable(), opt);

    TrainResult result;
    const auto record = [&](std::size_t epoch, double lr) {
        const Score s = score_frames(backbone, ds, cfg.batch_size);
        result.rows.push_back({epoch, "train", s.loss, s.accuracy, lr, 0.0, clock.seconds()});
        log_line(log, "train-backbone: epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.backbone_epochs) +
                          " loss " + format_number(s.loss) + " accuracy " + format_number(s.accuracy));
    };
    record(0, lr_at_epoch(cfg.backbone_lr, 0, static_cast<int>(cfg.lr_step_epochs)));

    std::vector<std::size_t> order(ds.frames.size());
    for (std::size_t e = 0; e < cfg.backbone_epochs; ++e) {
        const double lr = lr_at_epoch(cfg.backbone_lr, static_cast<int>(e), static_cast<int>(cfg.lr_step_epochs));
        sgd.set_learning_rate(lr);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(stream_seed(cfg.seed, shuffle_stream, e));
        std::shuffle(order.begin(), order.end(), rng);
        for (const auto& b : batches_of(order.size(), cfg.batch_size)) {
            if (b.size() < 2) continue;
            std::vector<std::size_t> idx;
            std::vector<int> labels;
            for (auto i : b) {
                idx.push_back(order[i]);
                labels.push_back(ds.frames[order[i]].label);
            }
            params.zero_grad();
            Tape<F> tape;
            TapeScope<F> scope(tape);
            const Tensor<F> loss = softmax_cross_entropy(backbone.classify(stack_frames(ds, idx), Mode::train), labels);
            loss.check_finite("stage-1 loss");
            tape.backward(loss);
            sgd.step();
        }
        record(e + 1, lr);
    }

    result.checkpoint = cfg.backbone_checkpoint_path();
    json meta = model_meta(cfg, classes, "backbone");
    meta["epoch"] = cfg.backbone_epochs;
    meta["seed"] = cfg.seed;
    save_model(result.checkpoint, params, {}, meta);
    write_metrics_csv(fs::path(cfg.out) / "backbone_metrics.csv", result.rows);
    result.final_train_accuracy = result.rows.back().accuracy;
    result.first_loss = result.rows.front().loss;
    result.last_loss = result.rows.back().loss;
    return result;
}

TrainResult run_train(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    const Clock clock;
    const fs::path train_dir = split_dir(cfg.dataset, "train");
    const Dataset ds = load_split(cfg, "train");
    const std::size_t classes = ds.manifest.num_classes;
    if (!fs::exists(train_dir / "clusters.json"))
        throw config_error("train: no clusters.json in " + train_dir.string() + "; run the cluster command first");
    const ClusterAssignment clusters = load_clusters(train_dir);
    if (clusters.k != cfg.view_count() || clusters.num_frames != ds.frames.size() ||
        clusters.classes.size() != classes) {
        throw config_error("train: clusters.json does not match the dataset and views '" + cfg.views +
                           "'; rerun the cluster command");
    }
    const auto test = load_optional_split(cfg, "test");
    std::optional<ClusterAssignment> test_clusters;
    if (test) test_clusters = cluster_dataset(*test, cfg.view_count(), cfg.seed);

    Rng init(cfg.seed);
    Net net(cfg, classes, init);
    ParamList<F> params;
    net.collect(params);

    std::vector<Tensor<F>> backbone_params, head_params;
    std::vector<std::string> backbone_names, head_names;
    for (const auto& p : params.items()) {
        if (!p.trainable || p.group == "backbone_head") continue;
        if (p.group == "backbone") {
            backbone_params.push_back(p.tensor);
            backbone_names.push_back("velocity/" + p.name);
        } else {
            head_params.push_back(p.tensor);
            head_names.push_back("velocity/" + p.name);
        }
    }
    SgdMomentum<F> sgd_backbone(backbone_params, {cfg.finetune_backbone_lr, cfg.momentum, cfg.weight_decay});
    SgdMomentum<F> sgd_head(head_params, {cfg.gcn_lr, cfg.momentum, cfg.weight_decay});

    const json expected = model_meta(cfg, classes, "model");
    std::size_t start_epoch = 0;
    if (!cfg.resume.empty()) {
        const json meta = read_sidecar(cfg.resume);
        check_compatible(meta, expected, cfg.resume);
        const auto entries = read_checkpoint(cfg.resume);
        load_entries(params, entries);
        const auto restore = [&](std::vector<Tensor<F>>& vel, const std::vector<std::string>& names) {
            for (std::size_t i = 0; i < vel.size(); ++i) {
                const auto* e = find_entry(entries, names[i]);
                if (!e) throw checkpoint_error("checkpoint: missing optimizer state '" + names[i] + "'");
                if (e->shape != vel[i].shape())
                    throw checkpoint_error("checkpoint: optimizer state '" + names[i] + "' has the wrong shape");
                std::copy(e->values.begin(), e->values.end(), vel[i].data().begin());
            }
        };
        restore(sgd_backbone.velocities(), backbone_names);
        restore(sgd_head.velocities(), head_names);
        start_epoch = meta.at("epoch").get<std::size_t>();
        log_line(log, "train: resumed from " + cfg.resume + " at epoch " + std::to_string(start_epoch));
    } else {
        const fs::path stage1 = cfg.backbone_checkpoint_path();
        if (!fs::exists(stage1))
            throw config_error("train: stage-1 checkpoint " + stage1.string() + " not found; run train-backbone first");
        check_compatible(read_sidecar(stage1), model_meta(cfg, classes, "backbone"), stage1);
        ParamList<F> backbone_list;
        net.backbone().collect(backbone_list);
        load_entries(backbone_list, read_checkpoint(stage1));
    }

    Rng probe_rng(stream_seed(cfg.seed, train_probe_stream));
    const auto train_probe = draw_view_sets(cfg, clusters, probe_rng);
    std::vector<Sample> test_sets;
    if (test) {
        Rng test_rng(stream_seed(cfg.seed, test_stream));
        test_sets = draw_view_sets(cfg, *test_clusters, test_rng);
    }

    TrainResult result;
    const auto record = [&](std::size_t epoch) {
        const Score tr = score_view_sets(net, ds, train_probe, cfg.batch_size);
        result.rows.push_back({epoch, "train", tr.loss, tr.accuracy, cfg.finetune_backbone_lr, cfg.gcn_lr, clock.seconds()});
        std::string line = "train: epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) + " loss " +
                           format_number(tr.loss) + " accuracy " + format_number(tr.accuracy);
        if (test) {
            const Score te = score_view_sets(net, *test, test_sets, cfg.batch_size);
            result.rows.push_back({epoch, "test", te.loss, te.accuracy, cfg.finetune_backbone_lr, cfg.gcn_lr, clock.seconds()});
            line += " test_loss " + format_number(te.loss) + " test_accuracy " + format_number(te.accuracy);
            result.final_test_accuracy = te.accuracy;
        }
        result.final_train_accuracy = tr.accuracy;
        log_line(log, line);
    };
    record(start_epoch);
    result.first_loss = result.rows.front().loss;

    result.checkpoint = cfg.checkpoint_path();
    for (std::size_t e = start_epoch; e < cfg.epochs; ++e) {
        Rng rng(stream_seed(cfg.seed, view_set_stream, e));
        auto samples = draw_view_sets(cfg, clusters, rng);
        std::shuffle(samples.begin(), samples.end(), rng);
        for (const auto& b : batches_of(samples.size(), cfg.batch_size)) {
            if (b.size() < 2) continue;
            std::vector<std::size_t> idx;
            std::vector<int> labels;
            for (auto i : b) {
                idx.insert(idx.end(), samples[i].frames.begin(), samples[i].frames.end());
                labels.push_back(samples[i].label);
            }
            params.zero_grad();
            Tape<F> tape;
            TapeScope<F> scope(tape);
            Tensor<F> logits;
            const Tensor<F> loss = net.loss(stack_frames(ds, idx), b.size(), labels, Mode::train, logits);
            loss.check_finite("stage-2 loss");
            tape.backward(loss);
            sgd_backbone.step();
            sgd_head.step();
        }
        record(e + 1);

        json meta = expected;
        meta["epoch"] = e + 1;
        meta["seed"] = cfg.seed;
        auto extra = to_entries(sgd_backbone.velocities(), backbone_names);
        const auto head_extra = to_entries(sgd_head.velocities(), head_names);
        extra.insert(extra.end(), head_extra.begin(), head_extra.end());
        save_model(result.checkpoint, params, extra, meta);
    }
    result.last_loss = result.rows[result.rows.size() - (test ? 2 : 1)].loss;
    write_metrics_csv(fs::path(cfg.out) / "metrics.csv", result.rows);
    return result;
}

EvalResult run_eval(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    const Dataset test = load_split(cfg, "test");
    const std::size_t classes = test.manifest.num_classes;
    const fs::path ckpt = cfg.checkpoint_path();
    if (!fs::exists(ckpt)) throw config_error("eval: checkpoint " + ckpt.string() + " not found");
    check_compatible(read_sidecar(ckpt), model_meta(cfg, classes, "model"), ckpt);

    Rng init(cfg.seed);
    Net net(cfg, classes, init);
    ParamList<F> params;
    net.collect(params);
    load_entries(params, read_checkpoint(ckpt));

    EvalResult result;
    result.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    std::size_t correct = 0, total = 0;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        const auto clusters = cluster_dataset(test, cfg.view_count(), cfg.seed + t);
        Rng rng(stream_seed(cfg.seed + t, test_stream));
        const auto samples = draw_view_sets(cfg, clusters, rng);
        const Score s = score_view_sets(net, test, samples, cfg.batch_size);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            ++result.confusion[static_cast<std::size_t>(samples[i].label)][s.predictions[i]];
            if (static_cast<int>(s.predictions[i]) == samples[i].label) ++correct;
        }
        total += samples.size();
        result.trial_accuracy.push_back(s.accuracy);
        log_line(log, "eval: trial " + std::to_string(t) + " accuracy " + format_number(s.accuracy) + " over " +
                          std::to_string(samples.size()) + " view sets");
    }
    result.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    write_confusion_csv(cfg.confusion_path(), result.confusion, test.manifest.class_names);
    return result;
}

void write_confusion_csv(const fs::path& path, const std::vector<std::vector<std::size_t>>& confusion,
                         const std::vector<std::string>& class_names) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("confusion: cannot write " + path.string());
    const auto name = [&](std::size_t c) { return c < class_names.size() ? class_names[c] : std::to_string(c); };
    out << "true\\predicted";
    for (std::size_t c = 0; c < confusion.size(); ++c) out << ',' << name(c);
    out << '\n';
    for (std::size_t r = 0; r < confusion.size(); ++r) {
        out << name(r);
        for (auto v : confusion[r]) out << ',' << v;
        out << '\n';
    }
}

} // namespace tvgcn
