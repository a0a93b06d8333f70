#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "lensnvs/geometry.hpp"

namespace lensnvs::geom {

/// Dense little-endian float64 array in NPY v1.0 layout (C order).
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

/// Reads an NPY v1.0 file; rejects any dtype other than '<f8' and Fortran order.
NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const NpyArray& array);

/// One view of an LLFF poses_bounds table.
struct LlffRecord {
  Camera camera;
  double near = 0.0;
  double far = 0.0;
};

/// Row layout: a row-major 3×5 matrix [down | right | backwards | center | (h, w, f)]
/// followed by near and far. Conversion to the internal right/up/backwards axes
/// happens only here.
LlffRecord llff_from_row(std::span<const double, 17> row);
std::array<double, 17> llff_to_row(const LlffRecord& record);

/// Requires shape N×17. Near-orthonormal rotations (error <= 1e-4, typical of
/// float32 exports) are projected onto SO(3); worse ones are rejected.
std::vector<LlffRecord> read_poses_bounds(const std::filesystem::path& path);
void write_poses_bounds(const std::filesystem::path& path, std::span<const LlffRecord> records);

}  // namespace lensnvs::geom
