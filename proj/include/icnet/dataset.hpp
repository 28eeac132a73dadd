#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icnet/synth.hpp"
#include "icnet/volume.hpp"

namespace icnet::data {

/// Parameters that regenerate a synthetic dataset exactly.
struct DatasetSpec {
  std::uint64_t seed = 1;
  GridShape shape{24, 24, 24};
  std::size_t pairs = 20;
  double max_disp = 4.5;
  std::size_t num_blobs = 18;
  synth::WidthRange widths{};
  /// Per-subject jitter of the shared blob template, in voxels.
  double jitter = 2.0;
};

struct NamedPair {
  std::string name;
  synth::SyntheticPair pair;
};

/// Pair k uses seed derive_seed(spec.seed, k + 1); every pair shares one blob
/// template drawn from derive_seed(spec.seed, 0).
std::vector<NamedPair> generate_pairs(const DatasetSpec& spec);

/// Layout:
///   manifest.txt               ICDATA1 header, the spec, one "pair <name>" line per pair
///   <name>/A.icvol, B.icvol    f64 images
///   <name>/A_labels.icvol, B_labels.icvol
///   <name>/A_landmarks.txt, B_landmarks.txt
///   <name>/truth_flow.icvol    f64 flow with B = warp(A, flow)
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const std::vector<NamedPair>& pairs);

struct Dataset {
  DatasetSpec spec;
  std::vector<NamedPair> pairs;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// A then B of every pair, in order.
std::vector<Volume> pair_volumes(const std::vector<NamedPair>& pairs);

/// Training volumes from a dataset directory (manifest present) or from every
/// "*.icvol" file in `dir` that is not a label map or flow, sorted by name.
std::vector<Volume> load_training_volumes(const std::filesystem::path& dir);

/// A labelled atlas: `<name>.icvol` next to `<name>_labels.icvol`, optionally
/// `<name>_landmarks.txt`.
struct Atlas {
  std::string name;
  Volume image;
  LabelMap labels;
  std::optional<LandmarkSet> landmarks;
};

/// Every atlas in `dir`, sorted by name. Throws DataError if there is none.
std::vector<Atlas> load_atlases(const std::filesystem::path& dir);

}  // namespace icnet::data
