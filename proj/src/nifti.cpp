#include "meshvox/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace meshvox {
namespace nifti {

namespace {

// nifti1.h layout; naturally packed to 348 bytes.
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtU8 = 2;
constexpr std::int16_t kDtI16 = 4;
constexpr std::int16_t kDtF32 = 16;

template <typename T>
void bswap(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

void swap_header(Nifti1Header& h) {
  bswap(h.sizeof_hdr);
  for (auto& d : h.dim) bswap(d);
  bswap(h.intent_p1); bswap(h.intent_p2); bswap(h.intent_p3);
  bswap(h.intent_code); bswap(h.datatype); bswap(h.bitpix); bswap(h.slice_start);
  for (auto& p : h.pixdim) bswap(p);
  bswap(h.vox_offset); bswap(h.scl_slope); bswap(h.scl_inter);
  bswap(h.slice_end);
  bswap(h.cal_max); bswap(h.cal_min); bswap(h.slice_duration); bswap(h.toffset);
  bswap(h.glmax); bswap(h.glmin);
  bswap(h.qform_code); bswap(h.sform_code);
  bswap(h.quatern_b); bswap(h.quatern_c); bswap(h.quatern_d);
  bswap(h.qoffset_x); bswap(h.qoffset_y); bswap(h.qoffset_z);
  for (auto& v : h.srow_x) bswap(v);
  for (auto& v : h.srow_y) bswap(v);
  for (auto& v : h.srow_z) bswap(v);
}

// gzread handles both plain and gzip-compressed streams, so a single read
// path covers .nii and .nii.gz; decompression is streamed into the
// destination buffer.
class GzReader {
 public:
  explicit GzReader(const std::string& path) : f_(gzopen(path.c_str(), "rb")) {
    if (!f_) throw std::runtime_error("cannot open file: " + path);
  }
  ~GzReader() { if (f_) gzclose(f_); }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n, const char* what) {
    auto* p = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(f_, p, chunk);
      if (got <= 0)
        throw std::runtime_error(std::string("truncated NIfTI file while reading ") + what);
      p += got;
      n -= static_cast<std::size_t>(got);
    }
  }

 private:
  gzFile f_;
};

Eigen::Matrix4d affine_from_header(const Nifti1Header& h) {
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  if (h.sform_code > 0) {
    for (int j = 0; j < 4; ++j) {
      a(0, j) = h.srow_x[j];
      a(1, j) = h.srow_y[j];
      a(2, j) = h.srow_z[j];
    }
    return a;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a0sq = std::max(0.0, 1.0 - b * b - c * c - d * d);
    const double qa = std::sqrt(a0sq);
    const double qfac = (h.pixdim[0] < 0.0f) ? -1.0 : 1.0;
    Eigen::Matrix3d r;
    r << qa * qa + b * b - c * c - d * d, 2 * (b * c - qa * d), 2 * (b * d + qa * c),
        2 * (b * c + qa * d), qa * qa + c * c - b * b - d * d, 2 * (c * d - qa * b),
        2 * (b * d - qa * c), 2 * (c * d + qa * b), qa * qa + d * d - c * c - b * b;
    for (int i = 0; i < 3; ++i) {
      a(i, 0) = r(i, 0) * h.pixdim[1];
      a(i, 1) = r(i, 1) * h.pixdim[2];
      a(i, 2) = r(i, 2) * h.pixdim[3] * qfac;
    }
    a(0, 3) = h.qoffset_x;
    a(1, 3) = h.qoffset_y;
    a(2, 3) = h.qoffset_z;
    return a;
  }
  a(0, 0) = h.pixdim[1];
  a(1, 1) = h.pixdim[2];
  a(2, 2) = h.pixdim[3];
  return a;
}

}  // namespace

Volume read_volume(const std::string& path) {
  GzReader in(path);
  Nifti1Header h{};
  in.read_exact(&h, sizeof(h), "header");

  bool swapped = false;
  if (h.dim[0] < 1 || h.dim[0] > 7) {
    swap_header(h);
    swapped = true;
  }
  if (std::memcmp(h.magic, "n+1\0", 4) != 0)
    throw std::runtime_error("not a NIfTI-1 file: " + path);
  if (h.sizeof_hdr != 348)
    throw std::runtime_error("not a NIfTI-1 file (bad header length): " + path);
  if (h.dim[0] < 1 || h.dim[0] > 3) {
    // higher dims allowed only when degenerate
    for (int i = 4; i <= h.dim[0]; ++i)
      if (h.dim[i] > 1)
        throw std::runtime_error("unsupported NIfTI dimensionality (only 3D volumes)");
  }
  DtypeTag tag;
  int bytes_per = 0;
  switch (h.datatype) {
    case kDtU8: tag = DtypeTag::u8; bytes_per = 1; break;
    case kDtI16: tag = DtypeTag::i16; bytes_per = 2; break;
    case kDtF32: tag = DtypeTag::f32; bytes_per = 4; break;
    default:
      throw std::runtime_error("unsupported NIfTI datatype code " +
                               std::to_string(h.datatype));
  }

  const int nx = h.dim[1], ny = h.dim[0] >= 2 ? h.dim[2] : 1,
            nz = h.dim[0] >= 3 ? h.dim[3] : 1;
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::runtime_error("invalid NIfTI dims");

  // Skip from end of header to vox_offset (extensions are not preserved).
  const long skip = static_cast<long>(h.vox_offset) - 348;
  if (skip < 0) throw std::runtime_error("invalid vox_offset");
  if (skip > 0) {
    std::vector<char> junk(static_cast<std::size_t>(skip));
    in.read_exact(junk.data(), junk.size(), "extension");
  }

  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read_exact(raw.data(), raw.size(), "payload");

  Volume v;
  v.shape = {nz, ny, nx};
  v.spacing = {h.pixdim[1] > 0 ? h.pixdim[1] : 1.0,
               h.pixdim[2] > 0 ? h.pixdim[2] : 1.0,
               h.pixdim[3] > 0 ? h.pixdim[3] : 1.0};
  v.affine = affine_from_header(h);
  v.dtype_tag = tag;
  v.data.resize(n);

  const bool apply_scl = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    float val;
    if (tag == DtypeTag::u8) {
      val = raw[i];
    } else if (tag == DtypeTag::i16) {
      std::int16_t s;
      std::memcpy(&s, raw.data() + 2 * i, 2);
      if (swapped) bswap(s);
      val = s;
    } else {
      std::memcpy(&val, raw.data() + 4 * i, 4);
      if (swapped) bswap(val);
    }
    v.data[i] = apply_scl ? h.scl_slope * val + h.scl_inter : val;
  }
  v.validate();
  return v;
}

LabelMask read_mask(const std::string& path) {
  Volume v = read_volume(path);
  LabelMask m;
  m.shape = v.shape;
  m.spacing = v.spacing;
  m.affine = v.affine;
  m.data.resize(v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] == 0.0f)
      m.data[i] = 0;
    else if (v.data[i] == 1.0f)
      m.data[i] = 1;
    else
      throw std::runtime_error("mask contains values outside {0,1}: " + path);
  }
  return m;
}

void write_volume(const Volume& v, const std::string& path, DtypeTag datatype, bool gzip) {
  v.validate();
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(v.shape[2]);
  h.dim[2] = static_cast<std::int16_t>(v.shape[1]);
  h.dim[3] = static_cast<std::int16_t>(v.shape[0]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  switch (datatype) {
    case DtypeTag::u8: h.datatype = kDtU8; h.bitpix = 8; break;
    case DtypeTag::i16: h.datatype = kDtI16; h.bitpix = 16; break;
    case DtypeTag::f32: h.datatype = kDtF32; h.bitpix = 32; break;
  }
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(v.spacing[0]);
  h.pixdim[2] = static_cast<float>(v.spacing[1]);
  h.pixdim[3] = static_cast<float>(v.spacing[2]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.sform_code = 1;
  h.qform_code = 0;
  for (int j = 0; j < 4; ++j) {
    h.srow_x[j] = static_cast<float>(v.affine(0, j));
    h.srow_y[j] = static_cast<float>(v.affine(1, j));
    h.srow_z[j] = static_cast<float>(v.affine(2, j));
  }
  std::memcpy(h.magic, "n+1\0", 4);

  const std::size_t n = v.data.size();
  std::vector<unsigned char> payload;
  if (datatype == DtypeTag::u8) {
    payload.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      payload[i] = static_cast<unsigned char>(
          std::clamp(std::lround(v.data[i]), 0l, 255l));
  } else if (datatype == DtypeTag::i16) {
    payload.resize(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int16_t s = static_cast<std::int16_t>(
          std::clamp(std::lround(v.data[i]), -32768l, 32767l));
      std::memcpy(payload.data() + 2 * i, &s, 2);
    }
  } else {
    payload.resize(n * 4);
    std::memcpy(payload.data(), v.data.data(), n * 4);
  }

  const char pad[4] = {0, 0, 0, 0};
  if (gzip) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
              gzwrite(f, pad, 4) == 4;
    std::size_t off = 0;
    while (ok && off < payload.size()) {
      const unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(payload.size() - off, 1u << 30));
      ok = gzwrite(f, payload.data() + off, chunk) == static_cast<int>(chunk);
      off += chunk;
    }
    if (gzclose(f) != Z_OK || !ok)
      throw std::runtime_error("i/o failure writing " + path);
  } else {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    const bool ok = std::fwrite(&h, 1, sizeof(h), f) == sizeof(h) &&
                    std::fwrite(pad, 1, 4, f) == 4 &&
                    std::fwrite(payload.data(), 1, payload.size(), f) == payload.size();
    if (std::fclose(f) != 0 || !ok)
      throw std::runtime_error("i/o failure writing " + path);
  }
}

void write_mask(const LabelMask& m, const std::string& path, bool gzip) {
  m.validate();
  Volume v;
  v.shape = m.shape;
  v.spacing = m.spacing;
  v.affine = m.affine;
  v.dtype_tag = DtypeTag::u8;
  v.data.assign(m.data.begin(), m.data.end());
  write_volume(v, path, DtypeTag::u8, gzip);
}

}  // namespace nifti
}  // namespace meshvox
