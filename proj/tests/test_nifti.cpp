#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "meshvox/nifti.hpp"

using namespace meshvox;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("meshvox_nifti_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Volume random_volume(Shape3 shape, unsigned seed, float lo, float hi, bool integral) {
  Volume v(shape, {1.5, 1.0, 2.0});
  v.affine(0, 0) = 1.5;
  v.affine(1, 1) = 1.0;
  v.affine(2, 2) = 2.0;
  v.affine(0, 3) = -30.0;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& x : v.data) x = integral ? std::floor(dist(rng)) : dist(rng);
  return v;
}

}  // namespace

TEST_CASE("round trip is bitwise for all datatypes, gzipped or not") {
  TempDir tmp;
  int n = 0;
  for (DtypeTag tag : {DtypeTag::u8, DtypeTag::i16, DtypeTag::f32}) {
    for (bool gz : {false, true}) {
      const float hi = tag == DtypeTag::u8 ? 255.0f : 1000.0f;
      const bool integral = tag != DtypeTag::f32;
      const Volume v = random_volume({7, 9, 11}, 100 + n, 0.0f, hi, integral);
      const std::string path = tmp.file("rt" + std::to_string(n++) + (gz ? ".nii.gz" : ".nii"));
      nifti::write_volume(v, path, tag, gz);
      const Volume back = nifti::read_volume(path);
      REQUIRE(back.shape == v.shape);
      CHECK(back.dtype_tag == tag);
      for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(back.data[i] == v.data[i]);
      CHECK(back.affine.isApprox(v.affine, 1e-6));
    }
  }
}

TEST_CASE("mask round trip preserves labels exactly") {
  TempDir tmp;
  LabelMask m({6, 5, 4}, {1, 1, 1});
  std::mt19937 rng(3);
  for (auto& x : m.data) x = rng() % 2;
  const std::string path = tmp.file("mask.nii.gz");
  nifti::write_mask(m, path, true);
  const LabelMask back = nifti::read_mask(path);
  REQUIRE(back.shape == m.shape);
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(back.data[i] == m.data[i]);
}

TEST_CASE("scl_slope and scl_inter are applied") {
  TempDir tmp;
  Volume v({2, 2, 2}, {1, 1, 1});
  std::fill(v.data.begin(), v.data.end(), 3.0f);
  const std::string path = tmp.file("scl.nii");
  nifti::write_volume(v, path, DtypeTag::u8, false);
  // patch scl_slope (offset 112) to 2 and scl_inter (offset 116) to 1
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  const float slope = 2.0f, inter = 1.0f;
  f.seekp(112);
  f.write(reinterpret_cast<const char*>(&slope), 4);
  f.seekp(116);
  f.write(reinterpret_cast<const char*>(&inter), 4);
  f.close();
  const Volume back = nifti::read_volume(path);
  for (float x : back.data) CHECK(x == 7.0f);
}

TEST_CASE("wrong magic is rejected with a clear message") {
  TempDir tmp;
  Volume v({2, 2, 2}, {1, 1, 1});
  const std::string path = tmp.file("bad.nii");
  nifti::write_volume(v, path, DtypeTag::f32, false);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(344);
  f.write("XXX", 3);
  f.close();
  CHECK_THROWS_WITH_AS(nifti::read_volume(path),
                       doctest::Contains("not a NIfTI-1 file"), std::runtime_error);
}

TEST_CASE("truncated payload is detected") {
  TempDir tmp;
  const Volume v = random_volume({6, 6, 6}, 4, 0.0f, 1.0f, false);
  const std::string path = tmp.file("trunc.nii");
  nifti::write_volume(v, path, DtypeTag::f32, false);
  fs::resize_file(path, 352 + 100);
  CHECK_THROWS_WITH_AS(nifti::read_volume(path), doctest::Contains("truncated"),
                       std::runtime_error);
}

TEST_CASE("unsupported datatype is rejected") {
  TempDir tmp;
  Volume v({2, 2, 2}, {1, 1, 1});
  const std::string path = tmp.file("dt.nii");
  nifti::write_volume(v, path, DtypeTag::f32, false);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  const std::int16_t dt = 64;  // float64, unsupported
  f.seekp(70);
  f.write(reinterpret_cast<const char*>(&dt), 2);
  f.close();
  CHECK_THROWS_WITH_AS(nifti::read_volume(path), doctest::Contains("datatype"),
                       std::runtime_error);
}

TEST_CASE("uncompressed file size is 352 + payload") {
  TempDir tmp;
  const Volume v = random_volume({64, 64, 64}, 9, 0.0f, 1.0f, false);
  const std::string path = tmp.file("size.nii");
  nifti::write_volume(v, path, DtypeTag::f32, false);
  CHECK(fs::file_size(path) == 348 + 4 + 64ull * 64 * 64 * 4);
}

TEST_CASE("big-endian input is byte-swapped") {
  TempDir tmp;
  const Volume v = random_volume({3, 4, 5}, 12, 0.0f, 200.0f, true);
  const std::string path = tmp.file("be.nii");
  nifti::write_volume(v, path, DtypeTag::i16, false);
  // byte-swap the whole file's shorts/ints/floats to fake a BE writer
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto sw2 = [&](std::size_t o) { std::swap(bytes[o], bytes[o + 1]); };
  auto sw4 = [&](std::size_t o) {
    std::swap(bytes[o], bytes[o + 3]);
    std::swap(bytes[o + 1], bytes[o + 2]);
  };
  sw4(0);                                     // sizeof_hdr
  for (int i = 0; i < 8; ++i) sw2(40 + 2 * i);  // dim
  sw2(70); sw2(72);                           // datatype, bitpix
  for (int i = 0; i < 8; ++i) sw4(76 + 4 * i);  // pixdim
  sw4(108); sw4(112); sw4(116);               // vox_offset, scl
  sw2(252); sw2(254);                         // qform/sform codes
  for (int i = 0; i < 12; ++i) sw4(280 + 4 * i);  // srows
  for (std::size_t o = 352; o + 1 < bytes.size(); o += 2) sw2(o);  // payload
  const std::string bepath = tmp.file("be_sw.nii");
  std::ofstream out(bepath, std::ios::binary);
  out.write(bytes.data(), bytes.size());
  out.close();
  const Volume back = nifti::read_volume(bepath);
  REQUIRE(back.shape == v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(back.data[i] == v.data[i]);
}
