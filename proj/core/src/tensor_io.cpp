#include "bl/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bl/error.hpp"

namespace bl {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

[[noreturn]] void corrupt(const std::string& source, const std::string& why) {
  throw Error(ErrorCode::CorruptTensorFile, source + ": " + why);
}

}  // namespace

std::string encode_blt0(const Tensor& t) {
  std::string out = "BLT0";
  const Shape& shape = t.shape();
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.numel());
  for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_blt0(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "BLT0") != 0) corrupt(source, "bad magic");
  const std::uint32_t rank = get_u32(bytes, 4);
  if (rank > 16) corrupt(source, "implausible rank " + std::to_string(rank));
  std::size_t offset = 8;
  if (bytes.size() < offset + 4ull * rank) corrupt(source, "truncated header");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i, offset += 4) {
    shape[i] = get_u32(bytes, offset);
    if (shape[i] == 0) corrupt(source, "zero dimension");
    count *= shape[i];
  }
  if (bytes.size() != offset + 4 * count) {
    corrupt(source, "expected " + std::to_string(count) + " values, file has " +
                        std::to_string((bytes.size() - offset) / 4));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i, offset += 4) {
    const float f = std::bit_cast<float>(get_u32(bytes, offset));
    if (!std::isfinite(f)) corrupt(source, "non-finite value");
    values[i] = f;
  }
  return Tensor::create(std::move(shape), std::move(values));
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_tensor(const fs::path& path, const Tensor& t) { write_file_atomic(path, encode_blt0(t)); }

Tensor load_tensor(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::CorruptTensorFile, path.string() + ": missing tensor file");
  return decode_blt0(read_file(path), path.string());
}

Tensor quantize_f32(const Tensor& t) {
  std::vector<double> values(t.data().begin(), t.data().end());
  for (double& v : values) v = static_cast<float>(v);
  return Tensor::create(t.shape(), std::move(values));
}

void save_archive(const fs::path& dir, const NamedTensors& tensors) {
  fs::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    if (name.empty() || name.find_first_of("\t\n") != std::string::npos) {
      throw Error(ErrorCode::IoError, "unusable tensor name '" + name + "'");
    }
    const std::string file = "t" + std::to_string(i) + ".blt0";
    save_tensor(dir / file, t);
    manifest += name + "\t" + file + "\n";
  }
  write_file_atomic(dir / kArchiveManifest, manifest);
}

NamedTensors load_archive(const fs::path& dir) {
  const fs::path manifest = dir / kArchiveManifest;
  if (!fs::exists(manifest)) throw Error(ErrorCode::ManifestMissing, manifest.string());
  std::istringstream lines(read_file(manifest));
  NamedTensors out;
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) corrupt(manifest.string(), "malformed line '" + line + "'");
    out.emplace_back(line.substr(0, tab), load_tensor(dir / line.substr(tab + 1)));
  }
  return out;
}

}  // namespace bl
