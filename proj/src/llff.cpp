#include "lensnvs/llff.hpp"

#include <Eigen/LU>
#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lensnvs::geom {
namespace {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

constexpr char kMagic[] = "\x93NUMPY";

std::runtime_error npy_error(const std::filesystem::path& path, const std::string& what) {
  return std::runtime_error(path.string() + ": " + what);
}

}  // namespace

NpyArray read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw npy_error(path, "cannot open");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) throw npy_error(path, "missing NPY magic");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  if (!in || version[0] != 1 || version[1] != 0) throw npy_error(path, "unsupported NPY version (need 1.0)");
  unsigned char len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  const std::size_t header_len = len_bytes[0] | (static_cast<std::size_t>(len_bytes[1]) << 8);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw npy_error(path, "truncated NPY header");

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')")) || m[1] != "<f8") {
    throw npy_error(path, "dtype must be '<f8'");
  }
  if (!std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*(True|False))")) ||
      m[1] != "False") {
    throw npy_error(path, "fortran_order arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw npy_error(path, "missing shape");
  }
  NpyArray out;
  std::size_t count = 1;
  const std::string dims = m[1];
  const std::regex number(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), number); it != std::sregex_iterator(); ++it) {
    out.shape.push_back(std::stoull(it->str()));
    count *= out.shape.back();
  }
  out.data.resize(count);
  in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw npy_error(path, "truncated NPY data");
  return out;
}

void write_npy(const std::filesystem::path& path, const NpyArray& array) {
  std::size_t count = 1;
  std::ostringstream shape;
  shape << '(';
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    count *= array.shape[i];
    shape << array.shape[i] << (array.shape.size() == 1 || i + 1 < array.shape.size() ? "," : "");
    if (i + 1 < array.shape.size()) shape << ' ';
  }
  shape << ')';
  if (count != array.data.size()) throw std::invalid_argument("write_npy: shape does not match data length");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape.str() + ", }";
  // Pad so magic + version + length + header + '\n' is a multiple of 64.
  const std::size_t unpadded = 6 + 2 + 2 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw npy_error(path, "cannot open for writing");
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const char len_bytes[2] = {static_cast<char>(header.size() & 0xff), static_cast<char>(header.size() >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(array.data.data()),
            static_cast<std::streamsize>(array.data.size() * sizeof(double)));
  if (!out) throw npy_error(path, "write failed");
}

LlffRecord llff_from_row(std::span<const double, 17> row) {
  auto at = [&](int r, int c) { return row[r * 5 + c]; };
  Mat3 r;
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    // [down, right, back] -> [right, up, back]
    r(i, 0) = at(i, 1);
    r(i, 1) = -at(i, 0);
    r(i, 2) = at(i, 2);
    t(i) = at(i, 3);
  }
  const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-4) || r.determinant() < 0.0) {
    throw std::invalid_argument("poses_bounds: rotation is not a proper rotation");
  }
  if (err > 1e-12) r = orthonormalize(r);
  LlffRecord rec;
  const double h = at(0, 4);
  const double w = at(1, 4);
  const double f = at(2, 4);
  if (h < 1 || w < 1 || h != std::floor(h) || w != std::floor(w)) {
    throw std::invalid_argument("poses_bounds: invalid image size column");
  }
  rec.camera.intrinsics = Intrinsics::centered(static_cast<int>(w), static_cast<int>(h), f);
  rec.camera.pose = Pose(r, t);
  rec.near = row[15];
  rec.far = row[16];
  if (!(rec.near > 0.0 && rec.near < rec.far)) throw std::invalid_argument("poses_bounds: need 0 < near < far");
  return rec;
}

std::array<double, 17> llff_to_row(const LlffRecord& record) {
  const auto& k = record.camera.intrinsics;
  if (k.fx != k.fy) throw std::invalid_argument("poses_bounds: LLFF stores one focal length (fx must equal fy)");
  const Mat3& r = record.camera.pose.rotation();
  const Vec3& t = record.camera.pose.translation();
  std::array<double, 17> row{};
  const double hwf[3] = {static_cast<double>(k.height), static_cast<double>(k.width), k.fx};
  for (int i = 0; i < 3; ++i) {
    row[i * 5 + 0] = -r(i, 1);
    row[i * 5 + 1] = r(i, 0);
    row[i * 5 + 2] = r(i, 2);
    row[i * 5 + 3] = t(i);
    row[i * 5 + 4] = hwf[i];
  }
  row[15] = record.near;
  row[16] = record.far;
  return row;
}

std::vector<LlffRecord> read_poses_bounds(const std::filesystem::path& path) {
  const NpyArray array = read_npy(path);
  if (array.shape.size() != 2 || array.shape[1] != 17) {
    throw std::runtime_error(path.string() + ": poses_bounds must have shape (N, 17)");
  }
  std::vector<LlffRecord> out;
  for (std::size_t i = 0; i < array.shape[0]; ++i) {
    out.push_back(llff_from_row(std::span<const double, 17>(array.data.data() + 17 * i, 17)));
  }
  return out;
}

void write_poses_bounds(const std::filesystem::path& path, std::span<const LlffRecord> records) {
  NpyArray array;
  array.shape = {records.size(), 17};
  for (const auto& rec : records) {
    const auto row = llff_to_row(rec);
    array.data.insert(array.data.end(), row.begin(), row.end());
  }
  write_npy(path, array);
}

}  // namespace lensnvs::geom
