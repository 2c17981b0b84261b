#pragma once

#include <string>

#include "meshvox/volume.hpp"

namespace meshvox {
namespace nifti {

// Reads a NIfTI-1 single file (.nii or .nii.gz, detected by content).
// Supported datatypes: u8(2), i16(4), f32(16). Intensities are scaled by
// scl_slope/scl_inter when present; affine comes from sform if valid, else
// qform, else pixdim. Big-endian files are byte-swapped on read.
Volume read_volume(const std::string& path);

// Reads a binary mask; every voxel must decode to 0 or 1.
LabelMask read_mask(const std::string& path);

// Writes v as little-endian NIfTI-1 (vox_offset 352, scl 1/0, sform set).
void write_volume(const Volume& v, const std::string& path, DtypeTag datatype,
                  bool gzip);

void write_mask(const LabelMask& m, const std::string& path, bool gzip);

}  // namespace nifti
}  // namespace meshvox
