#include "tvgcn/checkpoint.hpp"

#include "binary_io.hpp"

#include <fstream>

namespace tvgcn {

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("checkpoint: cannot open " + path.string() + " for writing");
    io::write_magic(out, "TVGC");
    io::write_u32(out, checkpoint_version);
    for (const auto& e : entries) {
        if (shape_numel(e.shape) != e.values.size())
            throw checkpoint_error("checkpoint: entry '" + e.name + "' has inconsistent shape");
        io::write_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        io::write_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) io::write_u32(out, static_cast<std::uint32_t>(d));
        io::write_f32s(out, e.values);
    }
    if (!out) throw checkpoint_error("checkpoint: write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw checkpoint_error("checkpoint: cannot open " + path.string());
    if (!io::read_magic(in, "TVGC")) throw checkpoint_error("checkpoint: bad magic in " + path.string());
    std::uint32_t version = 0;
    if (!io::read_u32(in, version) || version != checkpoint_version)
        throw checkpoint_error("checkpoint: unsupported version in " + path.string());
    std::vector<CheckpointEntry> entries;
    std::uint32_t name_len = 0;
    while (io::read_u32(in, name_len)) {
        CheckpointEntry e;
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        std::uint32_t rank = 0;
        if (!in || !io::read_u32(in, rank)) throw checkpoint_error("checkpoint: truncated entry header");
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::uint32_t d = 0;
            if (!io::read_u32(in, d)) throw checkpoint_error("checkpoint: truncated shape of '" + e.name + "'");
            e.shape.push_back(d);
        }
        e.values.resize(shape_numel(e.shape));
        if (!io::read_f32s(in, e.values))
            throw checkpoint_error("checkpoint: truncated payload of '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

template <typename T>
std::vector<CheckpointEntry> to_entries(const ParamList<T>& params, const std::string& prefix) {
    std::vector<CheckpointEntry> out;
    for (const auto& p : params.items()) {
        CheckpointEntry e{prefix + p.name, p.tensor.shape(), {}};
        e.values.assign(p.tensor.data().begin(), p.tensor.data().end());
        out.push_back(std::move(e));
    }
    return out;
}

template <typename T>
std::vector<CheckpointEntry> to_entries(const std::vector<Tensor<T>>& tensors,
                                        const std::vector<std::string>& names) {
    std::vector<CheckpointEntry> out;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        CheckpointEntry e{names.at(i), tensors[i].shape(), {}};
        e.values.assign(tensors[i].data().begin(), tensors[i].data().end());
        out.push_back(std::move(e));
    }
    return out;
}

const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

template <typename T>
void load_entries(ParamList<T>& params, const std::vector<CheckpointEntry>& entries,
                  const std::string& prefix) {
    for (auto& p : params.items()) {
        const auto* e = find_entry(entries, prefix + p.name);
        if (e == nullptr) throw checkpoint_error("checkpoint: missing tensor '" + prefix + p.name + "'");
        if (e->shape != p.tensor.shape()) {
            throw checkpoint_error("checkpoint: tensor '" + e->name + "' has shape " +
                                   shape_to_string(e->shape) + ", model expects " +
                                   shape_to_string(p.tensor.shape()));
        }
        auto dst = p.tensor.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
    }
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p.replace_extension(".json");
    return p;
}

template std::vector<CheckpointEntry> to_entries(const ParamList<float>&, const std::string&);
template std::vector<CheckpointEntry> to_entries(const ParamList<double>&, const std::string&);
template std::vector<CheckpointEntry> to_entries(const std::vector<Tensor<float>>&,
                                                 const std::vector<std::string>&);
template std::vector<CheckpointEntry> to_entries(const std::vector<Tensor<double>>&,
                                                 const std::vector<std::string>&);
template void load_entries(ParamList<float>&, const std::vector<CheckpointEntry>&, const std::string&);
template void load_entries(ParamList<double>&, const std::vector<CheckpointEntry>&, const std::string&);

} // namespace tvgcn
