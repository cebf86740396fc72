#include "bl/pgm.hpp"

#include <sstream>

#include "bl/error.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != image.h * image.w) throw Error(ErrorCode::ShapeMismatch, "pgm pixel count");
  std::string bytes = "P5\n" + std::to_string(image.w) + " " + std::to_string(image.h) + "\n255\n";
  bytes.append(image.pixels.begin(), image.pixels.end());
  write_file_atomic(path, bytes);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  auto skip_comments = [&in] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  GrayImage img;
  int maxval = 0;
  skip_comments();
  in >> img.w;
  skip_comments();
  in >> img.h;
  skip_comments();
  in >> maxval;
  if (magic != "P5" || !in || maxval <= 0 || maxval > 255) {
    throw Error(ErrorCode::IoError, path.string() + ": not an 8-bit binary PGM");
  }
  in.get();  // single whitespace before the raster
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() != offset + img.h * img.w) throw Error(ErrorCode::IoError, path.string() + ": truncated raster");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return img;
}

}  // namespace bl
