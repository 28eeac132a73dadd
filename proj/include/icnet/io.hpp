#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "icnet/volume.hpp"

namespace icnet::io {

enum class Dtype { f32, f64, u16 };

const char* dtype_name(Dtype dtype);

/// Contents of one ICVOL container, before any domain invariants are applied.
///
/// On disk: a text header
///   ICVOL1
///   dims <dx> <dy> <dz>
///   channels <c>
///   dtype <f32|f64|u16>
///   data
/// followed by c*dx*dy*dz little-endian values, channel-major then x fastest.
struct IcvolRecord {
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::size_t channels = 1;
  Dtype dtype = Dtype::f32;
  std::vector<double> values;
};

/// Largest payload accepted by the reader, in values.
inline constexpr std::size_t kMaxIcvolValues = std::size_t{1} << 31;

IcvolRecord read_icvol(const std::filesystem::path& path);
void write_icvol(const std::filesystem::path& path, const IcvolRecord& record);

/// Writes `vol` as f32 (rounded to single precision) or f64 (exact).
void save_volume(const Volume& vol, const std::filesystem::path& path, Dtype dtype = Dtype::f32);
Volume load_volume(const std::filesystem::path& path);

void save_labels(const LabelMap& labels, const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);

/// Plain text, one "x y z" triple per line.
void save_landmarks(const LandmarkSet& points, const std::filesystem::path& path);
LandmarkSet load_landmarks(const std::filesystem::path& path);

/// Bounds used to map each channel of a slice onto [0, 255].
struct SliceBounds {
  std::vector<std::array<double, 2>> per_channel;
};

/// Writes one slice orthogonal to `axis` (0 = x, 1 = y, 2 = z).
///
/// A single-channel volume becomes a binary PGM scaled by the slice minimum and
/// maximum. A three-channel flow becomes a binary PPM; each channel is scaled
/// symmetrically over [-m, m] with m its largest magnitude, so zero displacement
/// lands on mid-gray. A degenerate range maps to 128. The bounds are written as
/// one line to `<path>.txt`.
SliceBounds export_slice(const Volume& vol, int axis, std::size_t index, const std::filesystem::path& path);

/// Parses "x", "y", "z" (or "0", "1", "2"). Throws DataError otherwise.
int parse_axis(const std::string& text);

}  // namespace icnet::io
