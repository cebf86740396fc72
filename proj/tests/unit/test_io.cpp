#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "bl/error.hpp"
#include "bl/pgm.hpp"
#include "bl/rng.hpp"
#include "bl/tensor_io.hpp"
#include "gradcheck.hpp"

using namespace bl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bl_io_" + name);
  fs::remove_all(p);
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(s, bits);
}

ErrorCode decode_code(const std::string& bytes) {
  try {
    (void)decode_blt0(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST(Blt0, ByteLayoutMatchesHandEncoding) {
  std::string want = "BLT0";
  put_u32(want, 2);
  put_u32(want, 2);
  put_u32(want, 3);
  const std::vector<float> vals{1.5f, -2.0f, 0.1f, 3.0f, 1e-3f, -7.25f};
  for (float f : vals) put_f32(want, f);
  const Tensor t = Tensor::create({2, 3}, {1.5, -2.0, 0.1, 3.0, 1e-3, -7.25});
  EXPECT_EQ(encode_blt0(t), want);
  const Tensor back = decode_blt0(want);
  ASSERT_EQ(back.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(vals[i]));
}

TEST(Blt0, RoundTripIsExactAtF32) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor t = bltest::random_tensor(rng, {1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(3)}, -5, 5, false);
    const Tensor q = quantize_f32(t);
    const Tensor back = decode_blt0(encode_blt0(t));
    ASSERT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(t[i])));
      EXPECT_EQ(back[i], q[i]);
    }
    // Stable after the first quantization.
    EXPECT_EQ(encode_blt0(back), encode_blt0(t));
  }
}

TEST(Blt0, CorruptInputsAreRejected) {
  const std::string good = encode_blt0(Tensor::create({2}, {1, 2}));
  EXPECT_EQ(decode_code("XLT0" + good.substr(4)), ErrorCode::CorruptTensorFile);
  EXPECT_EQ(decode_code(good.substr(0, good.size() - 1)), ErrorCode::CorruptTensorFile);
  EXPECT_EQ(decode_code(good + "xx"), ErrorCode::CorruptTensorFile);
  EXPECT_EQ(decode_code("BL"), ErrorCode::CorruptTensorFile);
  std::string zero_dim = "BLT0";
  put_u32(zero_dim, 1);
  put_u32(zero_dim, 0);
  EXPECT_EQ(decode_code(zero_dim), ErrorCode::CorruptTensorFile);
  std::string nan = "BLT0";
  put_u32(nan, 1);
  put_u32(nan, 1);
  put_f32(nan, std::numeric_limits<float>::quiet_NaN());
  EXPECT_EQ(decode_code(nan), ErrorCode::CorruptTensorFile);
}

TEST(Blt0, ArchiveRoundTripAndMissingManifest) {
  const fs::path dir = scratch("archive");
  const NamedTensors in{{"a.w", Tensor::create({2, 2}, {1, 2, 3, 4})}, {"b", Tensor::scalar(0.5)}};
  save_archive(dir, in);
  const NamedTensors out = load_archive(dir);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].first, "a.w");
  EXPECT_EQ(out[1].first, "b");
  EXPECT_EQ(out[0].second[3], 4.0);
  fs::remove(dir / kArchiveManifest);
  try {
    (void)load_archive(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ManifestMissing);
  }
  try {
    (void)load_tensor(dir / "nope.blt0");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CorruptTensorFile);
  }
}

TEST(Pgm, RoundTrip) {
  const fs::path dir = scratch("pgm");
  fs::create_directories(dir);
  GrayImage img{3, 5, {}};
  for (std::size_t i = 0; i < 15; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_pgm(dir / "x.pgm", img);
  const std::string raw = read_file(dir / "x.pgm");
  EXPECT_EQ(raw.substr(0, 2), "P5");
  const GrayImage back = read_pgm(dir / "x.pgm");
  EXPECT_EQ(back.h, 3u);
  EXPECT_EQ(back.w, 5u);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(AtomicWrite, ReplacesContent) {
  const fs::path dir = scratch("atomic");
  fs::create_directories(dir);
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  EXPECT_EQ(read_file(dir / "f.txt"), "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);
}
