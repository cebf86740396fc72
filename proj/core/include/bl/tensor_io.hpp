#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bl/tensor.hpp"

// BLT0 container: "BLT0", u32 rank, rank x u32 dims, then f32 values, all
// little-endian. Values are narrowed to f32 on write and widened on read.
namespace bl {

std::string encode_blt0(const Tensor& t);
Tensor decode_blt0(const std::string& bytes, const std::string& source = "<memory>");

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Values after a save/load cycle.
Tensor quantize_f32(const Tensor& t);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr const char* kArchiveManifest = "manifest.txt";

/// Directory of BLT0 files plus manifest.txt with "name<TAB>filename" lines.
void save_archive(const std::filesystem::path& dir, const NamedTensors& tensors);
NamedTensors load_archive(const std::filesystem::path& dir);

/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace bl
