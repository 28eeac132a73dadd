#include "icnet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "icnet/io.hpp"

namespace icnet::data {
namespace {

constexpr const char* kMagic = "ICDATA1";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool valid_pair_name(const std::string& name) {
  return !name.empty() && name != "." && name != ".." &&
         std::all_of(name.begin(), name.end(), [](char c) {
           return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                  c == '-' || c == '.';
         });
}

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> entries;
  for (const auto& e : std::filesystem::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  return entries;
}

}  // namespace

std::vector<NamedPair> generate_pairs(const DatasetSpec& spec) {
  spec.shape.validate();
  synth::PairOptions options;
  options.num_blobs = spec.num_blobs;
  options.widths = spec.widths;
  options.template_seed = synth::derive_seed(spec.seed, 0);
  options.jitter = spec.jitter;
  std::vector<NamedPair> pairs;
  for (std::size_t k = 0; k < spec.pairs; ++k) {
    std::ostringstream name;
    name << "pair_" << std::setw(3) << std::setfill('0') << k;
    pairs.push_back({name.str(), synth::make_pair(synth::derive_seed(spec.seed, k + 1), spec.shape, spec.max_disp, options)});
  }
  return pairs;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const std::vector<NamedPair>& pairs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream manifest;
  manifest << std::setprecision(std::numeric_limits<double>::max_digits10);
  manifest << kMagic << '\n'
           << "seed " << spec.seed << '\n'
           << "shape " << spec.shape.dx << ' ' << spec.shape.dy << ' ' << spec.shape.dz << '\n'
           << "pairs " << pairs.size() << '\n'
           << "max_disp " << spec.max_disp << '\n'
           << "num_blobs " << spec.num_blobs << '\n'
           << "blob_sigma " << spec.widths.min << ' ' << spec.widths.max << '\n'
           << "jitter " << spec.jitter << '\n';
  for (const auto& [name, p] : pairs) {
    if (!valid_pair_name(name)) throw DataError("invalid pair name '" + name + "'");
    const auto sub = dir / name;
    std::filesystem::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
    io::save_volume(p.a, sub / "A.icvol", io::Dtype::f64);
    io::save_volume(p.b, sub / "B.icvol", io::Dtype::f64);
    io::save_labels(p.labels_a, sub / "A_labels.icvol");
    io::save_labels(p.labels_b, sub / "B_labels.icvol");
    io::save_landmarks(p.landmarks_a, sub / "A_landmarks.txt");
    io::save_landmarks(p.landmarks_b, sub / "B_landmarks.txt");
    io::save_volume(p.truth, sub / "truth_flow.icvol", io::Dtype::f64);
    manifest << "pair " << name << '\n';
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  out << manifest.str();
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw FormatError(path.string() + ": missing " + kMagic + " header");

  Dataset ds;
  std::size_t declared = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    bool ok = true;
    if (key == "seed") ok = static_cast<bool>(fields >> ds.spec.seed);
    else if (key == "shape") ok = static_cast<bool>(fields >> ds.spec.shape.dx >> ds.spec.shape.dy >> ds.spec.shape.dz);
    else if (key == "pairs") ok = static_cast<bool>(fields >> declared);
    else if (key == "max_disp") ok = static_cast<bool>(fields >> ds.spec.max_disp);
    else if (key == "num_blobs") ok = static_cast<bool>(fields >> ds.spec.num_blobs);
    else if (key == "blob_sigma") ok = static_cast<bool>(fields >> ds.spec.widths.min >> ds.spec.widths.max);
    else if (key == "jitter") ok = static_cast<bool>(fields >> ds.spec.jitter);
    else if (key == "pair") {
      std::string name;
      ok = static_cast<bool>(fields >> name) && valid_pair_name(name);
      if (ok) {
        const auto sub = dir / name;
        NamedPair np{name, {}};
        np.pair.a = io::load_volume(sub / "A.icvol");
        np.pair.b = io::load_volume(sub / "B.icvol");
        np.pair.labels_a = io::load_labels(sub / "A_labels.icvol");
        np.pair.labels_b = io::load_labels(sub / "B_labels.icvol");
        np.pair.landmarks_a = io::load_landmarks(sub / "A_landmarks.txt");
        np.pair.landmarks_b = io::load_landmarks(sub / "B_landmarks.txt");
        np.pair.truth = io::load_volume(sub / "truth_flow.icvol");
        require_same_shape(np.pair.a.shape(), np.pair.b.shape(), name.c_str());
        require_flow(np.pair.truth, (name + "/truth_flow").c_str());
        ds.pairs.push_back(std::move(np));
      }
    } else {
      throw FormatError(path.string() + " line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    std::string extra;
    if (!ok || (fields >> extra)) throw FormatError(path.string() + " line " + std::to_string(lineno) + ": malformed");
  }
  ds.spec.pairs = ds.pairs.size();
  if (declared != ds.pairs.size()) {
    throw FormatError(path.string() + ": declares " + std::to_string(declared) + " pairs, lists " +
                      std::to_string(ds.pairs.size()));
  }
  return ds;
}

std::vector<Volume> pair_volumes(const std::vector<NamedPair>& pairs) {
  std::vector<Volume> out;
  for (const auto& p : pairs) {
    out.push_back(p.pair.a);
    out.push_back(p.pair.b);
  }
  return out;
}

std::vector<Volume> load_training_volumes(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / "manifest.txt")) return pair_volumes(load_dataset(dir).pairs);
  std::vector<Volume> out;
  for (const auto& p : sorted_entries(dir)) {
    const std::string name = p.filename().string();
    if (!ends_with(name, ".icvol") || ends_with(name, "_labels.icvol") || ends_with(name, "_flow.icvol")) continue;
    Volume v = io::load_volume(p);
    if (v.channels() != 1) continue;
    out.push_back(std::move(v));
  }
  if (out.size() < 2) throw DataError(dir.string() + ": need at least 2 volumes for training");
  return out;
}

std::vector<Atlas> load_atlases(const std::filesystem::path& dir) {
  std::vector<Atlas> atlases;
  for (const auto& p : sorted_entries(dir)) {
    const std::string file = p.filename().string();
    if (!ends_with(file, ".icvol") || ends_with(file, "_labels.icvol")) continue;
    const std::string name = file.substr(0, file.size() - 6);
    const auto labels_path = dir / (name + "_labels.icvol");
    if (!std::filesystem::exists(labels_path)) continue;
    Atlas atlas{name, io::load_volume(p), io::load_labels(labels_path), std::nullopt};
    if (atlas.image.channels() != 1) throw ShapeError(p.string() + ": atlas image must be single-channel");
    require_same_shape(atlas.image.shape(), atlas.labels.shape(), ("atlas " + name).c_str());
    const auto lm = dir / (name + "_landmarks.txt");
    if (std::filesystem::exists(lm)) atlas.landmarks = io::load_landmarks(lm);
    atlases.push_back(std::move(atlas));
  }
  if (atlases.empty()) throw DataError(dir.string() + ": no atlases (expected <name>.icvol with <name>_labels.icvol)");
  return atlases;
}

}  // namespace icnet::data
