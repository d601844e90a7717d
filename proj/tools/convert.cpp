#include "convert.hpp"

#include "binary_io.hpp"
#include "tvgcn/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <vector>

namespace tvgcn {

namespace fs = std::filesystem;

namespace {

std::ifstream open_raw(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw dataset_error("convert: cannot open " + p.string());
    return in;
}

} // namespace

void convert_raw_stag(const fs::path& raw, const fs::path& out, std::ostream* log) {
    nlohmann::json meta;
    {
        std::ifstream in(raw / "meta.json");
        if (!in) throw dataset_error("convert: no meta.json in " + raw.string());
        meta = nlohmann::json::parse(in);
    }
    const auto count = meta.at("num_frames").get<std::size_t>();
    const auto names = meta.at("class_names").get<std::vector<std::string>>();
    const double calib_min = meta.at("calib_min").get<double>();
    const double calib_max = meta.at("calib_max").get<double>();

    std::optional<std::vector<float>> empty;
    if (fs::exists(raw / "empty_hand.f32")) {
        auto in = open_raw(raw / "empty_hand.f32");
        std::vector<float> e(frame_cells);
        if (!io::read_f32s(in, e)) throw count_mismatch_error("convert: empty_hand.f32 is truncated");
        empty = std::move(e);
    }

    auto frames = open_raw(raw / "frames.f32");
    auto labels = open_raw(raw / "labels.u16");
    auto splits = open_raw(raw / "split.u8");
    Dataset train, test;
    for (auto* ds : {&train, &test}) {
        ds->manifest.num_classes = names.size();
        ds->manifest.class_names = names;
    }
    train.manifest.split = "train";
    test.manifest.split = "test";

    std::vector<float> f(frame_cells);
    std::vector<std::uint16_t> label(1);
    for (std::size_t i = 0; i < count; ++i) {
        char split = 0;
        if (!io::read_f32s(frames, f) || !io::read_u16s(labels, label) || !splits.get(split))
            throw count_mismatch_error("convert: raw payload ends at frame " + std::to_string(i) + " of " +
                                       std::to_string(count));
        if (label[0] >= names.size()) throw dataset_error("convert: label out of range at frame " + std::to_string(i));
        TactileFrame t;
        if (empty) {
            t.pressure = baseline_subtract(f, *empty, calib_min, calib_max);
        } else {
            for (std::size_t c = 0; c < frame_cells; ++c) t.pressure[c] = normalize_pressure(f[c], calib_min, calib_max);
        }
        t.label = label[0];
        t.source_index = i;
        (split == 0 ? train : test).frames.push_back(t);
    }
    for (auto* ds : {&train, &test}) {
        const std::size_t before = ds->frames.size();
        ds->frames = filter_informative(ds->frames);
        ds->manifest.num_frames = ds->frames.size();
        save_dataset(out / ds->manifest.split, *ds);
        if (log)
            *log << "convert: " << ds->manifest.split << " kept " << ds->frames.size() << " of " << before
                 << " frames\n";
    }
}

} // namespace tvgcn
