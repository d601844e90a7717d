#pragma once

#include <filesystem>
#include <ostream>

namespace tvgcn {

/// Reads the raw export of tools/stag_to_raw.py (meta.json, frames.f32,
/// labels.u16, split.u8 and optionally empty_hand.f32), subtracts the
/// empty-hand baseline, normalizes, drops uninformative frames and writes
/// <out>/train and <out>/test.
void convert_raw_stag(const std::filesystem::path& raw, const std::filesystem::path& out, std::ostream* log);

} // namespace tvgcn
