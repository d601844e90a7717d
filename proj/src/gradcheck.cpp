#include "tvgcn/gradcheck.hpp"

#include "tvgcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>

namespace tvgcn {

using D = double;

// Coordinates drawn per tensor at most, as a multiple of the probe budget.
constexpr std::size_t max_draw_factor = 5;

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

bool GradcheckReport::pass() const { return failures().empty(); }

std::vector<std::string> GradcheckReport::failures() const {
    std::vector<std::string> out;
    for (const auto& l : ops)
        if (!l.pass) out.push_back("op " + l.name);
    for (const auto& l : groups)
        if (!l.pass) out.push_back("group " + l.name);
    return out;
}

namespace {

Tensor<D> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double away_from_zero = 0.0) {
    Tensor<D> t(std::move(shape), requires_grad);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : t.data()) {
        const double x = n(rng);
        v = away_from_zero > 0 ? std::copysign(away_from_zero + std::abs(x), x) : x;
    }
    return t;
}

std::vector<std::size_t> sample_indices(std::size_t size, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    if (size <= count) return idx;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, size - 1)(rng);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

void record(CheckLine& line, double analytic, double numeric, const std::string& where, double tol) {
    const double rel = relative_error(analytic, numeric);
    ++line.checked;
    if (rel >= line.worst) {
        line.worst = rel;
        line.where = where;
    }
    if (!(rel < tol)) line.pass = false;
}

// Checks d/dx <R, op(inputs)> for every input with a random projection R.
CheckLine check_op(const std::string& name, std::vector<Tensor<D>> inputs,
                   const std::function<Tensor<D>(const std::vector<Tensor<D>>&)>& op,
                   const GradcheckOptions& opt, Rng& rng) {
    CheckLine line;
    line.name = name;
    Tensor<D> probe = op(inputs);
    const Tensor<D> weights = random_tensor(Shape{probe.size(), 1}, rng, false);
    const auto objective = [&]() {
        return sum(matmul(reshape(op(inputs), Shape{1, probe.size()}), weights));
    };
    {
        Tape<D> tape;
        TapeScope<D> scope(tape);
        tape.backward(objective());
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& x = inputs[k];
        if (!x.requires_grad()) continue;
        const std::vector<D> grad(x.grad().begin(), x.grad().end());
        for (auto i : sample_indices(x.size(), opt.samples_per_tensor, rng)) {
            const D saved = x[i];
            x[i] = saved + opt.step;
            const D plus = objective().item();
            x[i] = saved - opt.step;
            const D minus = objective().item();
            x[i] = saved;
            const D numeric = (plus - minus) / (2 * opt.step);
            const D analytic = grad.empty() ? 0.0 : grad[i];
            record(line, analytic, numeric, "input" + std::to_string(k) + "[" + std::to_string(i) + "]", opt.tolerance);
        }
    }
    return line;
}

std::vector<CheckLine> check_primitives(const GradcheckOptions& opt, Rng& rng) {
    std::vector<CheckLine> out;
    const auto add_check = [&](const std::string& name, std::vector<Tensor<D>> inputs, auto op) {
        out.push_back(check_op(name, std::move(inputs), op, opt, rng));
    };
    using V = std::vector<Tensor<D>>;
    add_check("add", V{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
              [](const V& x) { return add(x[0], x[1]); });
    add_check("add_bias", V{random_tensor({3, 4}, rng), random_tensor({4}, rng)},
              [](const V& x) { return add_bias(x[0], x[1]); });
    add_check("scale", V{random_tensor({3, 4}, rng)}, [](const V& x) { return scale(x[0], 0.7); });
    add_check("sum", V{random_tensor({3, 4}, rng)}, [](const V& x) { return sum(x[0]); });
    add_check("matmul", V{random_tensor({3, 5}, rng), random_tensor({5, 2}, rng)},
              [](const V& x) { return matmul(x[0], x[1]); });
    add_check("leaky_relu", V{random_tensor({4, 5}, rng, true, 0.05)},
              [](const V& x) { return leaky_relu(x[0], 0.01); });
    add_check("relu", V{random_tensor({4, 5}, rng, true, 0.05)}, [](const V& x) { return relu(x[0]); });
    add_check("conv2d", V{random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)},
              [](const V& x) { return conv2d(x[0], x[1], 1, 1); });
    add_check("conv2d_strided", V{random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)},
              [](const V& x) { return conv2d(x[0], x[1], 2, 1, 0); });
    {
        auto rm = Tensor<D>(Shape{3}), rv = Tensor<D>(Shape{3}, std::vector<D>(3, 1.0));
        add_check("batch_norm", V{random_tensor({5, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
                  [rm, rv](const V& x) mutable { return batch_norm(x[0], x[1], x[2], rm, rv, Mode::train); });
        auto em = random_tensor({3}, rng, false), ev = Tensor<D>(Shape{3}, std::vector<D>{0.5, 1.5, 2.0});
        add_check("batch_norm_eval",
                  V{random_tensor({5, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
                  [em, ev](const V& x) mutable { return batch_norm(x[0], x[1], x[2], em, ev, Mode::eval); });
        auto rm2 = Tensor<D>(Shape{3}), rv2 = Tensor<D>(Shape{3}, std::vector<D>(3, 1.0));
        add_check("batch_norm2d",
                  V{random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
                  [rm2, rv2](const V& x) mutable {
                      return batch_norm2d(x[0], x[1], x[2], rm2, rv2, Mode::train);
                  });
    }
    add_check("global_avg_pool", V{random_tensor({2, 3, 4, 4}, rng)},
              [](const V& x) { return global_avg_pool(x[0]); });
    add_check("max_pool_rows", V{random_tensor({5, 4}, rng)}, [](const V& x) { return max_pool_rows(x[0]); });
    add_check("segment_max_rows", V{random_tensor({6, 4}, rng)},
              [](const V& x) { return segment_max_rows(x[0], 3); });
    add_check("softmax_cross_entropy", V{random_tensor({4, 5}, rng)}, [](const V& x) {
        const std::vector<int> labels{0, 3, 4, 1};
        return softmax_cross_entropy(x[0], labels);
    });
    add_check("concat_cols", V{random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)},
              [](const V& x) { return concat_cols(x); });
    add_check("concat_rows", V{random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)},
              [](const V& x) { return concat_rows(x); });
    add_check("gather_rows", V{random_tensor({5, 3}, rng)}, [](const V& x) {
        const std::vector<std::size_t> rows{4, 0, 4, 2};
        return gather_rows(x[0], rows);
    });
    add_check("reshape", V{random_tensor({3, 4}, rng)}, [](const V& x) { return reshape(x[0], Shape{2, 6}); });
    add_check("masked_softmax_rows", V{random_tensor({3, 4}, rng)}, [](const V& x) {
        const std::vector<unsigned char> mask{1, 1, 0, 1, 0, 1, 0, 0, 1, 1, 1, 1};
        return masked_softmax_rows(x[0], mask);
    });
    add_check("block_matmul", V{random_tensor({6, 3}, rng), random_tensor({6, 4}, rng)},
              [](const V& x) { return block_matmul(x[0], x[1]); });
    add_check("pair_concat", V{random_tensor({6, 2}, rng)}, [](const V& x) { return pair_concat(x[0], 3); });
    add_check("sum_senders", V{random_tensor({18, 2}, rng)}, [](const V& x) { return sum_senders(x[0], 3); });
    return out;
}

struct ModelFixture {
    GcnConfig gcn;
    std::vector<Vec3> views = cube_viewpoints();
    Tensor<D> frames;
    std::vector<int> labels;
};

} // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
    GradcheckReport report;
    report.tolerance = opt.tolerance;
    Rng rng(opt.seed);
    report.ops = check_primitives(opt, rng);

    ModelFixture fx;
    fx.gcn.num_classes = opt.num_classes;
    const auto bcfg = BackboneConfig::for_preset(BackbonePreset::tiny, opt.num_classes);
    fx.gcn.feature_dim = bcfg.feature_dim;
    const std::size_t views = fx.gcn.num_views;
    TactileViewGcn<D> model(bcfg, fx.gcn, rng);
    fx.frames = Tensor<D>(Shape{opt.batch * views, 1, frame_side, frame_side});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& v : fx.frames.data()) v = unit(rng);
    for (std::size_t b = 0; b < opt.batch; ++b)
        fx.labels.push_back(static_cast<int>(std::uniform_int_distribution<std::size_t>(0, opt.num_classes - 1)(rng)));

    ParamList<D> params;
    model.collect(params);

    // Analytic gradients of the joint objective.
    const auto selections = [](const GcnOutput<D>& out) {
        std::vector<std::vector<std::vector<std::size_t>>> s;
        for (const auto& l : out.levels) s.push_back(l.selected);
        return s;
    };
    params.zero_grad();
    decltype(selections(std::declval<GcnOutput<D>>())) base_selection;
    Tensor<D> features;
    {
        Tape<D> tape;
        TapeScope<D> scope(tape);
        features = model.backbone().forward(fx.frames, Mode::train);
        auto out = model.gcn().forward(features, fx.views, opt.batch, Mode::train);
        base_selection = selections(out);
        tape.backward(total_loss(out, fx.labels, fx.gcn));
    }
    const Tensor<D> cached = features.detach();
    std::uint64_t base_full_hash = 0, base_gcn_hash = 0;
    {
        BranchTrace trace;
        model.gcn().forward(model.backbone().forward(fx.frames, Mode::train), fx.views, opt.batch, Mode::train);
        base_full_hash = trace.hash();
    }
    {
        BranchTrace trace;
        model.gcn().forward(cached, fx.views, opt.batch, Mode::train);
        base_gcn_hash = trace.hash();
    }
    std::map<std::string, std::vector<D>> analytic;
    for (const auto& p : params.items())
        if (p.trainable) analytic[p.name].assign(p.tensor.grad().begin(), p.tensor.grad().end());

    std::map<std::string, CheckLine> lines;
    for (auto& p : params.items()) {
        if (!p.trainable || p.group == "backbone_head") continue;
        auto& line = lines[p.group];
        line.name = p.group;
        const bool in_backbone = p.group == "backbone";
        const std::size_t budget = in_backbone ? opt.backbone_samples_per_tensor : opt.samples_per_tensor;
        auto t = p.tensor;
        std::size_t smooth = 0;
        const auto order = sample_indices(t.size(), std::min(t.size(), budget * max_draw_factor), rng);
        for (auto i : order) {
            if (smooth == budget) break;
            const auto evaluate = [&](bool& same_piece) {
                BranchTrace trace;
                const Tensor<D> f = in_backbone ? model.backbone().forward(fx.frames, Mode::train) : cached;
                auto out = model.gcn().forward(f, fx.views, opt.batch, Mode::train);
                same_piece = selections(out) == base_selection &&
                             trace.hash() == (in_backbone ? base_full_hash : base_gcn_hash);
                return total_loss(out, fx.labels, fx.gcn).item();
            };
            const D saved = t[i];
            bool same_plus = true, same_minus = true;
            // Probes that cross a kink or flip a view selection measure a
            // different linear piece and are skipped.
            t[i] = saved + opt.step;
            const D plus = evaluate(same_plus);
            t[i] = saved - opt.step;
            const D minus = evaluate(same_minus);
            t[i] = saved;
            if (!same_plus || !same_minus) {
                ++line.skipped;
                continue;
            }
            ++smooth;
            const auto& g = analytic[p.name];
            record(line, g.empty() ? 0.0 : g[i], (plus - minus) / (2 * opt.step),
                   p.name + "[" + std::to_string(i) + "]", opt.tolerance);
        }
    }
    // The pretraining head only sees the single-frame objective.
    std::vector<int> frame_labels;
    for (auto y : fx.labels) frame_labels.insert(frame_labels.end(), views, y);
    const auto head_loss = [&] {
        return softmax_cross_entropy(model.backbone().classify(fx.frames, Mode::train), frame_labels);
    };
    params.zero_grad();
    {
        Tape<D> tape;
        TapeScope<D> scope(tape);
        tape.backward(head_loss());
    }
    for (auto& p : params.items()) {
        if (p.group != "backbone_head") continue;
        auto& line = lines[p.group];
        line.name = p.group;
        const std::vector<D> g(p.tensor.grad().begin(), p.tensor.grad().end());
        auto t = p.tensor;
        for (auto i : sample_indices(t.size(), opt.samples_per_tensor, rng)) {
            const D saved = t[i];
            t[i] = saved + opt.step;
            const D plus = head_loss().item();
            t[i] = saved - opt.step;
            const D minus = head_loss().item();
            t[i] = saved;
            record(line, g.empty() ? 0.0 : g[i], (plus - minus) / (2 * opt.step),
                   p.name + "[" + std::to_string(i) + "]", opt.tolerance);
        }
    }

    for (auto& [name, line] : lines) {
        if (line.checked == 0) {
            line.pass = false;
            line.where = "too few smooth probes";
        }
    }

    for (const char* group :
         {"theta_s", "W", "theta_c", "theta_m", "theta_f", "theta_v", "classifier", "backbone", "backbone_head"}) {
        auto it = lines.find(group);
        if (it == lines.end()) {
            CheckLine missing;
            missing.name = group;
            missing.pass = false;
            missing.where = "no parameters";
            report.groups.push_back(missing);
        } else {
            report.groups.push_back(it->second);
        }
    }
    return report;
}

void print_report(std::ostream& out, const GradcheckReport& report) {
    const auto row = [&](const char* kind, const CheckLine& l) {
        out << (l.pass ? "PASS " : "FAIL ") << kind << ' ' << std::left << std::setw(22) << l.name
            << " worst_rel=" << std::scientific << std::setprecision(3) << l.worst << std::defaultfloat
            << " checked=" << l.checked;
        if (l.skipped) out << " skipped=" << l.skipped;
        if (!l.where.empty()) out << " at " << l.where;
        out << '\n';
    };
    for (const auto& l : report.ops) row("op   ", l);
    for (const auto& l : report.groups) row("group", l);
    out << (report.pass() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << report.tolerance << ")\n";
}

} // namespace tvgcn
