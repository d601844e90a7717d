#pragma once

#include "tvgcn/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvgcn {

class checkpoint_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

inline constexpr std::uint32_t checkpoint_version = 1;

/// Binary layout: "TVGC", u32 version, then until end of file a sequence of
/// (u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 payload),
/// all little-endian.
void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<CheckpointEntry> to_entries(const ParamList<T>& params, const std::string& prefix = {});

template <typename T>
std::vector<CheckpointEntry> to_entries(const std::vector<Tensor<T>>& tensors,
                                        const std::vector<std::string>& names);

/// Copies entries into matching parameters. Every parameter must be present
/// with the same shape; the error names the first offending tensor.
template <typename T>
void load_entries(ParamList<T>& params, const std::vector<CheckpointEntry>& entries,
                  const std::string& prefix = {});

const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);

/// Checkpoint path -> sidecar metadata path (same stem, .json).
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

} // namespace tvgcn
