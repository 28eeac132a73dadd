#include "icnet/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>

namespace icnet::io {
namespace {

std::size_t dtype_bytes(Dtype dtype) {
  switch (dtype) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    case Dtype::u16: return 2;
  }
  return 0;
}

Dtype parse_dtype(const std::string& name, const std::filesystem::path& path) {
  if (name == "f32") return Dtype::f32;
  if (name == "f64") return Dtype::f64;
  if (name == "u16") return Dtype::u16;
  throw FormatError(path.string() + ": unknown dtype '" + name + "'");
}

template <typename UInt>
void put_le(std::string& out, UInt bits) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename UInt>
UInt get_le(const unsigned char* p) {
  UInt bits = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bits |= static_cast<UInt>(p[i]) << (8 * i);
  return bits;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

// Reads one '\n'-terminated header line starting at `pos`.
std::string next_line(const std::string& bytes, std::size_t& pos, const std::filesystem::path& path) {
  const auto end = bytes.find('\n', pos);
  if (end == std::string::npos || end - pos > 256) {
    throw FormatError(path.string() + ": malformed ICVOL header");
  }
  std::string line = bytes.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

std::size_t parse_count(const std::string& token, const std::filesystem::path& path) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError(path.string() + ": expected a non-negative integer, got '" + token + "'");
  }
  if (token.size() > 18) throw DimensionError(path.string() + ": dimension " + token + " overflows");
  return static_cast<std::size_t>(std::stoull(token));
}

}  // namespace

const char* dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::f32: return "f32";
    case Dtype::f64: return "f64";
    case Dtype::u16: return "u16";
  }
  return "?";
}

IcvolRecord read_icvol(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  IcvolRecord rec;

  if (next_line(bytes, pos, path) != "ICVOL1") throw FormatError(path.string() + ": missing ICVOL1 magic");

  {
    std::istringstream dims(next_line(bytes, pos, path));
    std::string key, a, b, c, extra;
    dims >> key >> a >> b >> c;
    if (key != "dims" || c.empty() || (dims >> extra)) throw FormatError(path.string() + ": bad dims line");
    rec.dims = {parse_count(a, path), parse_count(b, path), parse_count(c, path)};
  }
  {
    std::istringstream ch(next_line(bytes, pos, path));
    std::string key, value, extra;
    ch >> key >> value;
    if (key != "channels" || value.empty() || (ch >> extra)) throw FormatError(path.string() + ": bad channels line");
    rec.channels = parse_count(value, path);
  }
  {
    std::istringstream dt(next_line(bytes, pos, path));
    std::string key, value, extra;
    dt >> key >> value;
    if (key != "dtype" || value.empty() || (dt >> extra)) throw FormatError(path.string() + ": bad dtype line");
    rec.dtype = parse_dtype(value, path);
  }
  if (next_line(bytes, pos, path) != "data") throw FormatError(path.string() + ": missing data marker");

  std::size_t count = rec.channels;
  if (count == 0) throw DimensionError(path.string() + ": zero channels");
  for (std::size_t d : rec.dims) {
    if (d == 0) throw DimensionError(path.string() + ": zero extent on an axis");
    if (count > kMaxIcvolValues / d) throw DimensionError(path.string() + ": dimensions overflow");
    count *= d;
  }

  const std::size_t width = dtype_bytes(rec.dtype);
  const std::size_t available = bytes.size() - pos;
  if (available < count * width) {
    throw TruncatedError(path.string() + ": payload has " + std::to_string(available / width) + " of " +
                         std::to_string(count) + " values");
  }
  if (available > count * width) throw FormatError(path.string() + ": trailing bytes after payload");

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  rec.values.resize(count);
  for (std::size_t i = 0; i < count; ++i, p += width) {
    switch (rec.dtype) {
      case Dtype::f32: rec.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(p)); break;
      case Dtype::f64: rec.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(p)); break;
      case Dtype::u16: rec.values[i] = get_le<std::uint16_t>(p); break;
    }
  }
  return rec;
}

void write_icvol(const std::filesystem::path& path, const IcvolRecord& rec) {
  std::size_t expected = rec.channels * rec.dims[0] * rec.dims[1] * rec.dims[2];
  if (expected != rec.values.size()) throw ShapeError("ICVOL record length does not match its header");

  std::string out = "ICVOL1\ndims " + std::to_string(rec.dims[0]) + " " + std::to_string(rec.dims[1]) + " " +
                    std::to_string(rec.dims[2]) + "\nchannels " + std::to_string(rec.channels) + "\ndtype " +
                    dtype_name(rec.dtype) + "\ndata\n";
  out.reserve(out.size() + rec.values.size() * dtype_bytes(rec.dtype));
  for (double v : rec.values) {
    switch (rec.dtype) {
      case Dtype::f32: put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case Dtype::f64: put_le(out, std::bit_cast<std::uint64_t>(v)); break;
      case Dtype::u16: put_le(out, static_cast<std::uint16_t>(v)); break;
    }
  }
  write_all(path, out);
}

void save_volume(const Volume& vol, const std::filesystem::path& path, Dtype dtype) {
  if (dtype == Dtype::u16) throw DataError("save_volume: volumes are stored as f32 or f64");
  IcvolRecord rec;
  rec.dims = {vol.shape().dx, vol.shape().dy, vol.shape().dz};
  rec.channels = vol.channels();
  rec.dtype = dtype;
  rec.values = vol.data();
  write_icvol(path, rec);
}

Volume load_volume(const std::filesystem::path& path) {
  IcvolRecord rec = read_icvol(path);
  if (rec.dtype == Dtype::u16) throw FormatError(path.string() + ": expected a real-valued volume, found u16");
  for (double v : rec.values) {
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite value in payload");
  }
  GridShape shape{rec.dims[0], rec.dims[1], rec.dims[2]};
  shape.validate();
  return Volume(shape, rec.channels, std::move(rec.values));
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
  IcvolRecord rec;
  rec.dims = {labels.shape().dx, labels.shape().dy, labels.shape().dz};
  rec.channels = 1;
  rec.dtype = Dtype::u16;
  rec.values.assign(labels.labels().begin(), labels.labels().end());
  write_icvol(path, rec);
}

LabelMap load_labels(const std::filesystem::path& path) {
  IcvolRecord rec = read_icvol(path);
  if (rec.dtype != Dtype::u16) throw FormatError(path.string() + ": label maps must use dtype u16");
  if (rec.channels != 1) throw FormatError(path.string() + ": label maps have one channel");
  GridShape shape{rec.dims[0], rec.dims[1], rec.dims[2]};
  shape.validate();
  std::vector<LabelMap::Label> labels(rec.values.begin(), rec.values.end());
  return LabelMap(shape, std::move(labels));
}

void save_landmarks(const LandmarkSet& points, const std::filesystem::path& path) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  write_all(path, out.str());
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
  std::istringstream in(read_all(path));
  LandmarkSet points;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    Point3 p{};
    std::string extra;
    if (!(fields >> p[0] >> p[1] >> p[2]) || (fields >> extra)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'x y z'");
    }
    for (double v : p) {
      if (!std::isfinite(v)) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-finite");
    }
    points.push_back(p);
  }
  return points;
}

int parse_axis(const std::string& text) {
  if (text == "x" || text == "0") return 0;
  if (text == "y" || text == "1") return 1;
  if (text == "z" || text == "2") return 2;
  throw DataError("axis must be x, y or z, got '" + text + "'");
}

SliceBounds export_slice(const Volume& vol, int axis, std::size_t index, const std::filesystem::path& path) {
  if (axis < 0 || axis > 2) throw DataError("export_slice: axis must be 0, 1 or 2");
  const GridShape& s = vol.shape();
  if (index >= s.extent(axis)) {
    throw DataError("export_slice: index " + std::to_string(index) + " outside axis extent " +
                    std::to_string(s.extent(axis)));
  }
  const bool flow = vol.channels() == 3;
  if (vol.channels() != 1 && !flow) throw ShapeError("export_slice: expected 1 or 3 channels");

  // Image columns follow the lower remaining axis, rows the higher one.
  const int col_axis = axis == 0 ? 1 : 0;
  const int row_axis = axis == 2 ? 1 : 2;
  const std::size_t width = s.extent(col_axis);
  const std::size_t height = s.extent(row_axis);

  auto sample = [&](std::size_t c, std::size_t col, std::size_t row) {
    std::array<std::size_t, 3> p{};
    p[axis] = index;
    p[col_axis] = col;
    p[row_axis] = row;
    return vol.at(c, p[0], p[1], p[2]);
  };

  SliceBounds bounds;
  for (std::size_t c = 0; c < vol.channels(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t row = 0; row < height; ++row) {
      for (std::size_t col = 0; col < width; ++col) {
        lo = std::min(lo, sample(c, col, row));
        hi = std::max(hi, sample(c, col, row));
      }
    }
    if (flow) {
      const double m = std::max(std::abs(lo), std::abs(hi));
      lo = -m;
      hi = m;
    }
    bounds.per_channel.push_back({lo, hi});
  }

  std::string out = std::string(flow ? "P6\n" : "P5\n") + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (std::size_t row = 0; row < height; ++row) {
    for (std::size_t col = 0; col < width; ++col) {
      for (std::size_t c = 0; c < vol.channels(); ++c) {
        const auto [lo, hi] = bounds.per_channel[c];
        int level = 128;
        if (hi > lo) level = static_cast<int>(std::lround(255.0 * (sample(c, col, row) - lo) / (hi - lo)));
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0, 255))));
      }
    }
  }
  write_all(path, out);

  std::ostringstream side;
  side << std::setprecision(std::numeric_limits<double>::max_digits10) << "bounds";
  for (const auto& [lo, hi] : bounds.per_channel) side << ' ' << lo << ' ' << hi;
  side << '\n';
  write_all(std::filesystem::path(path.string() + ".txt"), side.str());
  return bounds;
}

}  // namespace icnet::io
