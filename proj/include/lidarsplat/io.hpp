#pragma once

#include "lidarsplat/rangeview.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarsplat {

/// Missing files, malformed headers and other on-disk format problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// RVIM: "RVIM", u32 version (1), u32 H, u32 W, then depth, intensity and
// raydrop planes as little-endian float32, row-major.
void write_rvim(const std::filesystem::path& path, const RangeImage& image);
RangeImage read_rvim(const std::filesystem::path& path);

// Auxiliary single-channel plane ("RVAX", u32 version, u32 H, u32 W, float32
// values), used for median depth next to a rendered RVIM.
void write_plane(const std::filesystem::path& path, int height, int width,
                 const std::vector<double>& values);
std::vector<double> read_plane(const std::filesystem::path& path, int* height, int* width);

/// Binary little-endian PLY with float x, y, z, intensity vertex properties.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
/// Accepts any scalar property types; `intensity` defaults to 0 when absent.
PointCloud read_ply(const std::filesystem::path& path);

struct Frame {
  Pose pose;
  std::string scan;  // relative to the manifest directory
};

struct Manifest {
  BeamTable beams;
  std::vector<Frame> frames;
  std::filesystem::path base_dir;

  std::vector<Pose> poses() const;
};

Manifest load_manifest(const std::filesystem::path& path);
/// Beam table from any JSON file with "beams" and "width" (a manifest works).
BeamTable load_beams(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Loads a frame's scan: RVIM directly, PLY through project_points.
RangeImage load_scan(const Manifest& manifest, const Frame& frame);

}  // namespace lidarsplat
