#include "tvgcn/dataset.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace tvgcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t payload_version = 1;

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw dataset_error("dataset: cannot write " + p.string());
    return out;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw dataset_error("dataset: cannot open " + p.string());
    return in;
}

void read_header(std::istream& in, const char* magic, const fs::path& p, std::uint32_t& count) {
    if (!io::read_magic(in, magic)) throw format_error("dataset: bad magic in " + p.string());
    std::uint32_t version = 0;
    if (!io::read_u32(in, version) || version != payload_version)
        throw format_error("dataset: unsupported version in " + p.string());
    if (!io::read_u32(in, count)) throw count_mismatch_error("dataset: missing count in " + p.string());
}

} // namespace

void save_dataset(const fs::path& dir, const Dataset& dataset) {
    fs::create_directories(dir);
    const auto& m = dataset.manifest;
    json manifest = {{"version", m.version},         {"num_frames", dataset.frames.size()},
                     {"num_classes", m.num_classes}, {"class_names", m.class_names},
                     {"calib_min", m.calib_min},     {"calib_max", m.calib_max},
                     {"split", m.split}};
    {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        if (!out) throw dataset_error("dataset: cannot write manifest in " + dir.string());
        out << manifest.dump(2) << '\n';
    }
    auto frames = open_out(dir / "frames.bin");
    io::write_magic(frames, "TVGF");
    io::write_u32(frames, payload_version);
    io::write_u32(frames, static_cast<std::uint32_t>(dataset.frames.size()));
    for (const auto& f : dataset.frames) io::write_f32s(frames, f.pressure);

    auto labels = open_out(dir / "labels.bin");
    io::write_magic(labels, "TVGL");
    io::write_u32(labels, payload_version);
    io::write_u32(labels, static_cast<std::uint32_t>(dataset.frames.size()));
    std::vector<std::uint16_t> ids;
    for (const auto& f : dataset.frames) ids.push_back(static_cast<std::uint16_t>(f.label));
    io::write_u16s(labels, ids);

    if (dataset.empty_hand) {
        auto empty = open_out(dir / "empty_hand.bin");
        io::write_magic(empty, "TVGE");
        io::write_f32s(empty, *dataset.empty_hand);
    } else {
        fs::remove(dir / "empty_hand.bin");
    }
}

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    json manifest;
    {
        std::ifstream in(dir / "manifest.json");
        if (!in) throw dataset_error("dataset: no manifest.json in " + dir.string());
        try {
            in >> manifest;
        } catch (const json::exception& e) {
            throw format_error("dataset: malformed manifest.json: " + std::string(e.what()));
        }
    }
    auto& m = ds.manifest;
    try {
        m.version = manifest.at("version").get<int>();
        m.num_frames = manifest.at("num_frames").get<std::size_t>();
        m.num_classes = manifest.at("num_classes").get<std::size_t>();
        m.class_names = manifest.at("class_names").get<std::vector<std::string>>();
        m.calib_min = manifest.at("calib_min").get<double>();
        m.calib_max = manifest.at("calib_max").get<double>();
        m.split = manifest.at("split").get<std::string>();
    } catch (const json::exception& e) {
        throw format_error("dataset: manifest.json field error: " + std::string(e.what()));
    }
    if (m.version != 1) throw format_error("dataset: unsupported manifest version " + std::to_string(m.version));
    if (!(m.calib_max > m.calib_min)) throw dataset_error("dataset: calib_max must exceed calib_min");
    if (m.num_classes >= 65536) throw dataset_error("dataset: too many classes for u16 labels");

    const auto frames_path = dir / "frames.bin";
    auto frames = open_in(frames_path);
    std::uint32_t count = 0;
    read_header(frames, "TVGF", frames_path, count);
    if (count != m.num_frames) {
        throw count_mismatch_error("dataset: manifest lists " + std::to_string(m.num_frames) +
                                   " frames, frames.bin header " + std::to_string(count));
    }
    ds.frames.resize(count);
    std::array<float, frame_cells> raw{};
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!io::read_f32s(frames, raw)) {
            throw count_mismatch_error("dataset: frames.bin holds fewer than " + std::to_string(count) +
                                       " frames (truncated at frame " + std::to_string(i) + ")");
        }
        for (std::size_t c = 0; c < frame_cells; ++c) {
            if (!std::isfinite(raw[c]))
                throw non_finite_error("dataset: non-finite value in frame " + std::to_string(i));
            ds.frames[i].pressure[c] = normalize_pressure(raw[c], m.calib_min, m.calib_max);
        }
        ds.frames[i].source_index = i;
    }
    if (frames.peek() != std::char_traits<char>::eof())
        throw count_mismatch_error("dataset: frames.bin has trailing data beyond " + std::to_string(count) + " frames");

    const auto labels_path = dir / "labels.bin";
    auto labels = open_in(labels_path);
    std::uint32_t label_count = 0;
    read_header(labels, "TVGL", labels_path, label_count);
    if (label_count != count) {
        throw count_mismatch_error("dataset: labels.bin has " + std::to_string(label_count) + " labels for " +
                                   std::to_string(count) + " frames");
    }
    std::vector<std::uint16_t> ids(count);
    if (!io::read_u16s(labels, ids)) throw count_mismatch_error("dataset: labels.bin is truncated");
    for (std::uint32_t i = 0; i < count; ++i) {
        if (ids[i] >= m.num_classes)
            throw dataset_error("dataset: label " + std::to_string(ids[i]) + " out of range in frame " + std::to_string(i));
        ds.frames[i].label = ids[i];
    }

    const auto empty_path = dir / "empty_hand.bin";
    if (fs::exists(empty_path)) {
        auto in = open_in(empty_path);
        if (!io::read_magic(in, "TVGE")) throw format_error("dataset: bad magic in " + empty_path.string());
        Pressure e{};
        if (!io::read_f32s(in, e)) throw count_mismatch_error("dataset: empty_hand.bin is truncated");
        ds.empty_hand = e;
    }
    return ds;
}

float normalize_pressure(double raw, double calib_min, double calib_max) {
    const double v = (raw - calib_min) / (calib_max - calib_min);
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

Pressure baseline_subtract(std::span<const float> frame_raw, std::span<const float> empty_hand_raw,
                           double calib_min, double calib_max) {
    if (frame_raw.size() != frame_cells || empty_hand_raw.size() != frame_cells) {
        throw dimension_error("baseline_subtract: expected two 32x32 frames, got " +
                              std::to_string(frame_raw.size()) + " and " + std::to_string(empty_hand_raw.size()) +
                              " values");
    }
    if (!(calib_max > calib_min)) throw std::invalid_argument("baseline_subtract: empty calibration range");
    Pressure out{};
    const double range = calib_max - calib_min;
    for (std::size_t i = 0; i < frame_cells; ++i) {
        const double contact = std::max(static_cast<double>(frame_raw[i]) - empty_hand_raw[i], 0.0);
        out[i] = static_cast<float>(std::clamp(contact / range, 0.0, 1.0));
    }
    return out;
}

std::vector<TactileFrame> filter_informative(const std::vector<TactileFrame>& frames, std::size_t min_active,
                                             double active_threshold) {
    if (active_threshold < 0.0) throw std::invalid_argument("filter_informative: negative threshold");
    std::vector<TactileFrame> kept;
    for (const auto& f : frames) {
        const auto active = static_cast<std::size_t>(std::count_if(
            f.pressure.begin(), f.pressure.end(), [&](float v) { return v > active_threshold; }));
        if (active >= min_active) kept.push_back(f);
    }
    return kept;
}

namespace {

struct Blob {
    double row, col, sigma, amplitude;
};

void render(const std::vector<Blob>& blobs, std::array<double, frame_cells>& out) {
    out.fill(0.0);
    for (const auto& b : blobs) {
        const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for (std::size_t r = 0; r < frame_side; ++r)
            for (std::size_t c = 0; c < frame_side; ++c) {
                const double dr = static_cast<double>(r) - b.row, dc = static_cast<double>(c) - b.col;
                out[r * frame_side + c] += b.amplitude * std::exp(-(dr * dr + dc * dc) * inv);
            }
    }
}

// One frame of a class: blobs moved up to 2 cells, gain within 20%, sensor noise, clamped.
void jittered_frame(const std::vector<Blob>& base, Rng& rng, std::array<double, frame_cells>& out) {
    std::uniform_real_distribution<double> jitter(-2.0, 2.0), gain(0.8, 1.2);
    std::normal_distribution<double> noise(0.0, 0.02);
    std::vector<Blob> blobs = base;
    for (auto& b : blobs) {
        b.row += jitter(rng);
        b.col += jitter(rng);
        b.amplitude *= gain(rng);
    }
    render(blobs, out);
    for (auto& v : out) v = std::clamp(v + noise(rng), 0.0, 1.0);
}

double squared_distance(const std::array<double, frame_cells>& a, const std::array<double, frame_cells>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < frame_cells; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

std::uint64_t split_stream(const std::string& split) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : split) h = (h ^ ch) * 1099511628211ull;
    return h;
}

} // namespace

Dataset synth_generate(std::size_t num_classes, std::size_t frames_per_class, std::uint64_t seed,
                       const std::string& split) {
    if (num_classes < 2) throw std::invalid_argument("synth_generate: need at least 2 classes");
    if (num_classes >= 65536) throw std::invalid_argument("synth_generate: too many classes");

    // Class templates: rejection-sample layouts, keeping one only if its mean
    // frame sits well apart from every earlier class relative to the jitter
    // spread of both. The bar drops slowly when the grid gets crowded.
    Rng template_rng(seed);
    Rng probe_rng(seed ^ split_stream("templates"));
    std::uniform_int_distribution<int> blob_count(2, 4);
    std::uniform_real_distribution<double> position(6.0, 25.0), sigma(5.0, 6.0), amplitude(0.7, 1.0);
    std::vector<std::vector<Blob>> templates;
    std::vector<std::array<double, frame_cells>> means;
    std::vector<double> spreads;
    constexpr std::size_t probes = 32;
    double margin = 6.5;
    std::size_t rejected = 0;
    std::vector<std::array<double, frame_cells>> samples(probes);
    while (templates.size() < num_classes) {
        std::vector<Blob> blobs(static_cast<std::size_t>(blob_count(template_rng)));
        for (auto& b : blobs) b = {position(template_rng), position(template_rng), sigma(template_rng), amplitude(template_rng)};
        std::array<double, frame_cells> mean{};
        for (auto& f : samples) {
            jittered_frame(blobs, probe_rng, f);
            for (std::size_t i = 0; i < frame_cells; ++i) mean[i] += f[i] / static_cast<double>(probes);
        }
        double spread = 0.0;
        for (const auto& f : samples) spread += std::sqrt(squared_distance(f, mean)) / static_cast<double>(probes);
        bool far = true;
        for (std::size_t o = 0; o < means.size() && far; ++o)
            far = std::sqrt(squared_distance(mean, means[o])) > margin * std::max(spread, spreads[o]);
        if (!far) {
            if (++rejected == 2000) {
                margin *= 0.9;
                rejected = 0;
            }
            continue;
        }
        rejected = 0;
        templates.push_back(std::move(blobs));
        means.push_back(mean);
        spreads.push_back(spread);
    }

    Dataset ds;
    ds.manifest.num_classes = num_classes;
    ds.manifest.split = split;
    for (std::size_t c = 0; c < num_classes; ++c) ds.manifest.class_names.push_back("synthetic_" + std::to_string(c));

    Rng rng(seed ^ split_stream(split));
    std::array<double, frame_cells> img{};
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t k = 0; k < frames_per_class; ++k) {
            jittered_frame(templates[c], rng, img);
            TactileFrame f;
            for (std::size_t i = 0; i < frame_cells; ++i) f.pressure[i] = static_cast<float>(img[i]);
            f.label = static_cast<int>(c);
            f.source_index = ds.frames.size();
            ds.frames.push_back(f);
        }
    }
    ds.manifest.num_frames = ds.frames.size();
    return ds;
}

std::vector<std::size_t> frames_of_class(const Dataset& dataset, int label) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dataset.frames.size(); ++i)
        if (dataset.frames[i].label == label) out.push_back(i);
    return out;
}

} // namespace tvgcn
