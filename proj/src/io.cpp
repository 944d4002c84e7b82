#include "lidarsplat/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lidarsplat {
namespace {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError(path.string() + ": truncated header");
  }
  return v;
}

void put_floats(std::ostream& out, std::span<const double> values) {
  std::vector<float> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void get_floats(std::istream& in, std::span<double> values, const std::filesystem::path& path) {
  std::vector<float> buf(values.size());
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw IoError(path.string() + ": truncated payload");
  }
  std::copy(buf.begin(), buf.end(), values.begin());
}

void check_magic(std::istream& in, const char* magic, const std::filesystem::path& path) {
  std::array<char, 4> got{};
  if (!in.read(got.data(), 4) || std::memcmp(got.data(), magic, 4) != 0) {
    throw IoError(path.string() + ": bad magic, expected " + std::string(magic, 4));
  }
}

constexpr std::uint32_t kMaxDim = 1u << 16;

}  // namespace

void write_rvim(const std::filesystem::path& path, const RangeImage& image) {
  auto out = open_out(path);
  out.write("RVIM", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(image.height()));
  put_u32(out, static_cast<std::uint32_t>(image.width()));
  put_floats(out, image.depth());
  put_floats(out, image.intensity());
  put_floats(out, image.raydrop());
  if (!out) throw IoError("failed writing " + path.string());
}

RangeImage read_rvim(const std::filesystem::path& path) {
  auto in = open_in(path);
  check_magic(in, "RVIM", path);
  std::uint32_t version = get_u32(in, path);
  if (version != 1) throw IoError(path.string() + ": unsupported RVIM version " + std::to_string(version));
  std::uint32_t h = get_u32(in, path);
  std::uint32_t w = get_u32(in, path);
  if (h > kMaxDim || w > kMaxDim) throw IoError(path.string() + ": implausible dimensions");
  RangeImage image(static_cast<int>(h), static_cast<int>(w));
  get_floats(in, image.depth(), path);
  get_floats(in, image.intensity(), path);
  get_floats(in, image.raydrop(), path);
  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(image.depth()) || !finite(image.intensity()) || !finite(image.raydrop())) {
    throw IoError(path.string() + ": non-finite channel values");
  }
  return image;
}

void write_plane(const std::filesystem::path& path, int height, int width,
                 const std::vector<double>& values) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("plane size does not match dimensions");
  }
  auto out = open_out(path);
  out.write("RVAX", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(height));
  put_u32(out, static_cast<std::uint32_t>(width));
  put_floats(out, values);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<double> read_plane(const std::filesystem::path& path, int* height, int* width) {
  auto in = open_in(path);
  check_magic(in, "RVAX", path);
  if (get_u32(in, path) != 1) throw IoError(path.string() + ": unsupported plane version");
  std::uint32_t h = get_u32(in, path);
  std::uint32_t w = get_u32(in, path);
  if (h > kMaxDim || w > kMaxDim) throw IoError(path.string() + ": implausible dimensions");
  std::vector<double> values(static_cast<std::size_t>(h) * w);
  get_floats(in, values, path);
  if (height) *height = static_cast<int>(h);
  if (width) *width = static_cast<int>(w);
  return values;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float intensity\nend_header\n";
  for (const auto& p : cloud) {
    std::array<float, 4> v{static_cast<float>(p.position.x()), static_cast<float>(p.position.y()),
                           static_cast<float>(p.position.z()), static_cast<float>(p.intensity)};
    out.write(reinterpret_cast<const char*>(v.data()), sizeof v);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

struct PlyProperty {
  std::string name;
  int size = 0;
  char kind = 'f';  // f: float, i: signed, u: unsigned
};

PlyProperty ply_property(const std::string& type, const std::string& name,
                         const std::filesystem::path& path) {
  static const std::array<std::pair<const char*, PlyProperty>, 16> kTypes{{
      {"float", {"", 4, 'f'}},   {"float32", {"", 4, 'f'}}, {"double", {"", 8, 'f'}},
      {"float64", {"", 8, 'f'}}, {"char", {"", 1, 'i'}},    {"int8", {"", 1, 'i'}},
      {"uchar", {"", 1, 'u'}},   {"uint8", {"", 1, 'u'}},   {"short", {"", 2, 'i'}},
      {"int16", {"", 2, 'i'}},   {"ushort", {"", 2, 'u'}},  {"uint16", {"", 2, 'u'}},
      {"int", {"", 4, 'i'}},     {"int32", {"", 4, 'i'}},   {"uint", {"", 4, 'u'}},
      {"uint32", {"", 4, 'u'}},
  }};
  for (const auto& [key, prop] : kTypes) {
    if (type == key) {
      PlyProperty p = prop;
      p.name = name;
      return p;
    }
  }
  throw IoError(path.string() + ": unsupported PLY property type '" + type + "'");
}

double decode_scalar(const char* data, const PlyProperty& p) {
  switch (p.kind) {
    case 'f':
      if (p.size == 4) { float v; std::memcpy(&v, data, 4); return v; }
      else { double v; std::memcpy(&v, data, 8); return v; }
    case 'i':
      if (p.size == 1) { std::int8_t v; std::memcpy(&v, data, 1); return v; }
      if (p.size == 2) { std::int16_t v; std::memcpy(&v, data, 2); return v; }
      { std::int32_t v; std::memcpy(&v, data, 4); return v; }
    default:
      if (p.size == 1) { std::uint8_t v; std::memcpy(&v, data, 1); return v; }
      if (p.size == 2) { std::uint16_t v; std::memcpy(&v, data, 2); return v; }
      { std::uint32_t v; std::memcpy(&v, data, 4); return v; }
  }
}

}  // namespace

PointCloud read_ply(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw IoError(path.string() + ": not a PLY file");
  std::size_t count = 0;
  bool in_vertex = false, have_vertex = false, have_format = false;
  std::vector<PlyProperty> props;
  while (true) {
    if (!std::getline(in, line)) throw IoError(path.string() + ": unterminated PLY header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "end_header") break;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") {
        throw IoError(path.string() + ": only binary_little_endian PLY is supported");
      }
      have_format = true;
    } else if (word == "element") {
      std::string name;
      long long n = -1;
      ss >> name >> n;
      if (have_vertex && !in_vertex) continue;
      if (name == "vertex") {
        if (n < 0) throw IoError(path.string() + ": bad vertex count");
        count = static_cast<std::size_t>(n);
        in_vertex = have_vertex = true;
      } else if (have_vertex) {
        in_vertex = false;
      } else {
        throw IoError(path.string() + ": vertex element must come first");
      }
    } else if (word == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type == "list") throw IoError(path.string() + ": list properties are not supported");
      if (in_vertex) props.push_back(ply_property(type, name, path));
    } else {
      throw IoError(path.string() + ": unexpected PLY header line '" + line + "'");
    }
  }
  if (!have_format || !have_vertex) throw IoError(path.string() + ": incomplete PLY header");

  int ix = -1, iy = -1, iz = -1, ii = -1;
  std::vector<int> offsets;
  int stride = 0;
  for (std::size_t k = 0; k < props.size(); ++k) {
    offsets.push_back(stride);
    stride += props[k].size;
    const auto& n = props[k].name;
    if (n == "x") ix = static_cast<int>(k);
    else if (n == "y") iy = static_cast<int>(k);
    else if (n == "z") iz = static_cast<int>(k);
    else if (n == "intensity") ii = static_cast<int>(k);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw IoError(path.string() + ": PLY lacks x/y/z");

  PointCloud cloud;
  cloud.reserve(count);
  std::vector<char> row(static_cast<std::size_t>(stride));
  for (std::size_t v = 0; v < count; ++v) {
    if (!in.read(row.data(), stride)) throw IoError(path.string() + ": truncated PLY payload");
    LidarPoint p;
    p.position = {decode_scalar(row.data() + offsets[ix], props[ix]),
                  decode_scalar(row.data() + offsets[iy], props[iy]),
                  decode_scalar(row.data() + offsets[iz], props[iz])};
    p.intensity = ii >= 0 ? decode_scalar(row.data() + offsets[ii], props[ii]) : 0.0;
    cloud.push_back(p);
  }
  return cloud;
}

std::vector<Pose> Manifest::poses() const {
  std::vector<Pose> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.pose);
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    m.beams.elevations = j.at("beams").get<std::vector<double>>();
    m.beams.width = j.at("width").get<int>();
    for (const auto& f : j.at("frames")) {
      auto values = f.at("pose").get<std::vector<double>>();
      Frame frame;
      frame.pose = Pose::from_row_major(values, f.value("timestamp", 0.0));
      frame.scan = f.at("scan").get<std::string>();
      m.frames.push_back(std::move(frame));
    }
    m.beams.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return m;
}

BeamTable load_beams(const std::filesystem::path& path) {
  auto in = open_in(path);
  BeamTable beams;
  try {
    nlohmann::json j;
    in >> j;
    beams.elevations = j.at("beams").get<std::vector<double>>();
    beams.width = j.at("width").get<int>();
    beams.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return beams;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  nlohmann::json j;
  j["beams"] = manifest.beams.elevations;
  j["width"] = manifest.beams.width;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : manifest.frames) {
    j["frames"].push_back({{"pose", f.pose.to_row_major()},
                           {"scan", f.scan},
                           {"timestamp", f.pose.timestamp}});
  }
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

RangeImage load_scan(const Manifest& manifest, const Frame& frame) {
  std::filesystem::path p = manifest.base_dir / frame.scan;
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  RangeImage image;
  if (ext == ".ply") {
    image = project_points(read_ply(p), manifest.beams);
  } else {
    image = read_rvim(p);
  }
  if (image.height() != manifest.beams.height() || image.width() != manifest.beams.width) {
    throw IoError(p.string() + ": scan dimensions do not match the manifest beams");
  }
  return image;
}

}  // namespace lidarsplat
